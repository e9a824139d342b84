//! Training-benefit algebra over a performance trace.
//!
//! Rounds are 1-based: `P_i` is `trace.p[i - 1]` and `u_i` is `u[i - 1]`.
//! `P_0` is the performance before any training.
//!
//! For an interaction at round `i`, `k` is the next round `> i` with `u_k = 1`.
//! The last interaction has no such `k`; its window is closed at the end of
//! the trace (`k - 1 := n`), which keeps `Σ ITB` telescoping to `P_n - P_{i₁-1}`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenefitError {
    #[error("CTB at round {0} is undefined (rounds are 1..=n)")]
    CtbUndefined(usize),
    #[error("ITB at round {0} is undefined (no user interaction there)")]
    ItbUndefined(usize),
    #[error("mean ITB undefined: no interactions in rounds {0}..={1}")]
    MeanItbUndefined(usize, usize),
    #[error("invalid window {0}..={1} for a trace of {2} rounds")]
    BadWindow(usize, usize, usize),
    #[error("trace has {p} performance values but {u} interaction flags")]
    LengthMismatch { p: usize, u: usize },
    #[error("plot data line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for BenefitError {
    fn from(e: std::io::Error) -> Self {
        BenefitError::Io(e.to_string())
    }
}

/// `u_1..u_n` as 0/1 flags.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionVector(pub Vec<bool>);

impl InteractionVector {
    pub fn from_flags(flags: &[u8]) -> Self {
        Self(flags.iter().map(|&f| f != 0).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `u_i` for 1-based `i`.
    pub fn at(&self, i: usize) -> bool {
        i >= 1 && i <= self.0.len() && self.0[i - 1]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&u| u).count()
    }

    /// 1-based rounds with an interaction.
    pub fn rounds(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &u)| u)
            .map(|(i, _)| i + 1)
    }

    pub fn next_after(&self, i: usize) -> Option<usize> {
        (i + 1..=self.0.len()).find(|&k| self.0[k - 1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTrace {
    pub p0: f64,
    pub p: Vec<f64>,
}

impl PerformanceTrace {
    pub fn new(p0: f64, p: Vec<f64>) -> Self {
        Self { p0, p }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// `P_i` for `0 <= i <= n`.
    pub fn at(&self, i: usize) -> f64 {
        if i == 0 {
            self.p0
        } else {
            self.p[i - 1]
        }
    }

    /// First `f` rounds.
    pub fn truncated(&self, f: usize) -> PerformanceTrace {
        PerformanceTrace::new(self.p0, self.p[..f.min(self.p.len())].to_vec())
    }
}

fn check_lengths(trace: &PerformanceTrace, u: &InteractionVector) -> Result<(), BenefitError> {
    if trace.len() != u.len() {
        return Err(BenefitError::LengthMismatch {
            p: trace.len(),
            u: u.len(),
        });
    }
    Ok(())
}

/// `CTB_i = P_i - P_0`.
pub fn ctb_at(trace: &PerformanceTrace, i: usize) -> Result<f64, BenefitError> {
    if i == 0 || i > trace.len() {
        return Err(BenefitError::CtbUndefined(i));
    }
    Ok(trace.at(i) - trace.p0)
}

/// End of the benefit window of the interaction at `i`: `k - 1`, or `n` for the last one.
fn window_end(u: &InteractionVector, i: usize) -> usize {
    match u.next_after(i) {
        Some(k) => k - 1,
        None => u.len(),
    }
}

/// `ITB_{u_i} = P_{k-1} - P_{i-1}`.
pub fn itb_of_interaction(
    trace: &PerformanceTrace,
    u: &InteractionVector,
    i: usize,
) -> Result<f64, BenefitError> {
    check_lengths(trace, u)?;
    if !u.at(i) {
        return Err(BenefitError::ItbUndefined(i));
    }
    Ok(trace.at(window_end(u, i)) - trace.at(i - 1))
}

/// `CTB_{u_i} = P_{k-1} - P_0`.
pub fn ctb_of_interaction(
    trace: &PerformanceTrace,
    u: &InteractionVector,
    i: usize,
) -> Result<f64, BenefitError> {
    check_lengths(trace, u)?;
    if !u.at(i) {
        return Err(BenefitError::ItbUndefined(i));
    }
    Ok(trace.at(window_end(u, i)) - trace.p0)
}

/// Mean ITB over rounds `i..=j`: the summed ITB of interactions in the window
/// divided by their count.
pub fn mean_itb(
    trace: &PerformanceTrace,
    u: &InteractionVector,
    i: usize,
    j: usize,
) -> Result<f64, BenefitError> {
    check_lengths(trace, u)?;
    if i == 0 || i > j || j > u.len() {
        return Err(BenefitError::BadWindow(i, j, u.len()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for x in i..=j {
        if u.at(x) {
            sum += itb_of_interaction(trace, u, x)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(BenefitError::MeanItbUndefined(i, j));
    }
    Ok(sum / count as f64)
}

/// Best performance over `P_0..P_n` and the earliest round attaining it.
pub fn p_max(trace: &PerformanceTrace) -> (f64, usize) {
    let mut best = (trace.p0, 0);
    for (idx, &p) in trace.p.iter().enumerate() {
        if p > best.0 {
            best = (p, idx + 1);
        }
    }
    best
}

/// First round whose performance reaches `p_f`, if any.
pub fn first_reaching(trace: &PerformanceTrace, p_f: f64) -> Option<usize> {
    trace.p.iter().position(|&p| p >= p_f).map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionBenefit {
    pub round: usize,
    pub itb: f64,
    pub ctb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitReport {
    pub p0: f64,
    /// `CTB_1..CTB_n`.
    pub ctb: Vec<f64>,
    pub interactions: Vec<InteractionBenefit>,
    /// `None` when there were no interactions.
    pub mean_itb: Option<f64>,
    pub p_max: f64,
    pub p_max_round: usize,
    pub interaction_count: usize,
    pub p_f: Option<f64>,
    pub p_f_reached_at: Option<usize>,
}

impl BenefitReport {
    /// Builds the report over the whole trace. `p_f`, when given, is only used
    /// to locate the first round reaching it; see [`BenefitReport::truncated_at_pf`].
    pub fn compute(
        trace: &PerformanceTrace,
        u: &InteractionVector,
        p_f: Option<f64>,
    ) -> Result<Self, BenefitError> {
        check_lengths(trace, u)?;
        let n = trace.len();
        let ctb = (1..=n).map(|i| trace.at(i) - trace.p0).collect();
        let interactions = u
            .rounds()
            .map(|i| {
                Ok(InteractionBenefit {
                    round: i,
                    itb: itb_of_interaction(trace, u, i)?,
                    ctb: ctb_of_interaction(trace, u, i)?,
                })
            })
            .collect::<Result<Vec<_>, BenefitError>>()?;
        let mean_itb = if n > 0 && u.count() > 0 {
            Some(mean_itb(trace, u, 1, n)?)
        } else {
            None
        };
        let (p_max, p_max_round) = p_max(trace);
        Ok(Self {
            p0: trace.p0,
            ctb,
            interaction_count: u.count(),
            interactions,
            mean_itb,
            p_max,
            p_max_round,
            p_f,
            p_f_reached_at: p_f.and_then(|pf| first_reaching(trace, pf)),
        })
    }

    /// Report over rounds `1..=f` where `f` is the first round reaching `p_f`
    /// (the whole trace when it never does).
    pub fn truncated_at_pf(
        trace: &PerformanceTrace,
        u: &InteractionVector,
        p_f: f64,
    ) -> Result<Self, BenefitError> {
        check_lengths(trace, u)?;
        let f = first_reaching(trace, p_f).unwrap_or(trace.len());
        let t = trace.truncated(f);
        let tu = InteractionVector(u.0[..f].to_vec());
        Self::compute(&t, &tu, Some(p_f))
    }

    /// Line-delimited records: a summary line then one line per interaction.
    pub fn write_records<W: Write>(&self, mut out: W) -> Result<(), BenefitError> {
        #[derive(Serialize)]
        struct Row<'a> {
            kind: &'static str,
            #[serde(flatten)]
            b: &'a InteractionBenefit,
        }
        let summary = serde_json::json!({
            "kind": "summary",
            "p0": self.p0,
            "rounds": self.ctb.len(),
            "interaction_count": self.interaction_count,
            "mean_itb": self.mean_itb,
            "p_max": self.p_max,
            "p_max_round": self.p_max_round,
            "p_f": self.p_f,
            "p_f_reached_at": self.p_f_reached_at,
        });
        let line = serde_json::to_string(&summary).map_err(|e| BenefitError::Io(e.to_string()))?;
        writeln!(out, "{line}")?;
        for b in &self.interactions {
            let line = serde_json::to_string(&Row {
                kind: "interaction",
                b,
            })
            .map_err(|e| BenefitError::Io(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Renders `round,p,u,ctb` rows; round 0 carries `P_0` with an empty CTB.
pub fn plot_data(trace: &PerformanceTrace, u: &InteractionVector) -> Result<String, BenefitError> {
    check_lengths(trace, u)?;
    let mut s = String::from("round,p,u,ctb\n");
    let _ = writeln!(s, "0,{},0,", trace.p0);
    for i in 1..=trace.len() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            i,
            trace.at(i),
            u.at(i) as u8,
            trace.at(i) - trace.p0
        );
    }
    Ok(s)
}

/// Parses the format written by [`plot_data`]. Only `round`, `p` and `u` are
/// read; CTB is derived data.
pub fn read_plot_data<R: BufRead>(
    input: R,
) -> Result<(PerformanceTrace, InteractionVector), BenefitError> {
    let mut p0 = None;
    let mut p = Vec::new();
    let mut u = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line.starts_with("round")) {
            continue;
        }
        let err = |msg: &str| BenefitError::Parse {
            line: n + 1,
            msg: msg.to_string(),
        };
        let mut cols = line.split(',');
        let round: usize = cols
            .next()
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| err("bad round"))?;
        let value: f64 = cols
            .next()
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| err("bad performance value"))?;
        let flag = match cols.next().map(str::trim) {
            Some("1") => true,
            Some("0") => false,
            _ => return Err(err("u must be 0 or 1")),
        };
        if round == 0 {
            p0 = Some(value);
            continue;
        }
        if round != p.len() + 1 {
            return Err(err("rounds must be consecutive from 1"));
        }
        p.push(value);
        u.push(flag);
    }
    let p0 = p0.ok_or(BenefitError::Parse {
        line: 0,
        msg: "missing round 0 (P_0)".into(),
    })?;
    Ok((PerformanceTrace::new(p0, p), InteractionVector(u)))
}
