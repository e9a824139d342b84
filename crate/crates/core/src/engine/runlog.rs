//! Run logs: a header line, one line per round and a totals line, each a
//! JSON object tagged by `kind`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{EngineConfig, EngineError, RoundInput, StrategyKind, TrackerStatus, TrainingEvent};
use crate::benefit::{p_max, BenefitReport, InteractionVector, PerformanceTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub train: String,
    pub test: String,
    /// Frames in the train phase; the log may stop earlier at `P_f`.
    pub rounds: usize,
    pub p0: f64,
    pub config: EngineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub frame: usize,
    pub u: u8,
    pub input: RoundInput,
    pub tracker: TrackerStatus,
    pub event: Option<TrainingEvent>,
    pub loss: Option<f64>,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub rounds: usize,
    pub interactions: usize,
    pub training_rounds: usize,
    pub tracker_events: usize,
    pub final_p: f64,
    pub p_max: f64,
    pub p_max_round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Header(RunHeader),
    Round(RoundRecord),
    Totals(RunTotals),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub rounds: Vec<RoundRecord>,
    pub totals: RunTotals,
}

impl RunLog {
    pub fn new(header: RunHeader, rounds: Vec<RoundRecord>) -> Self {
        let trace = PerformanceTrace::new(header.p0, rounds.iter().map(|r| r.p).collect());
        let (pm, pm_round) = p_max(&trace);
        let totals = RunTotals {
            rounds: rounds.len(),
            interactions: rounds.iter().map(|r| r.u as usize).sum(),
            training_rounds: rounds.iter().filter(|r| r.event.is_some()).count(),
            tracker_events: rounds
                .iter()
                .filter(|r| r.event.is_some_and(|e| e.source == super::EventSource::Tracker))
                .count(),
            final_p: rounds.last().map_or(header.p0, |r| r.p),
            p_max: pm,
            p_max_round: pm_round,
        };
        Self { header, rounds, totals }
    }

    pub fn trace(&self) -> (PerformanceTrace, InteractionVector) {
        (
            PerformanceTrace::new(self.header.p0, self.rounds.iter().map(|r| r.p).collect()),
            InteractionVector(self.rounds.iter().map(|r| r.u == 1).collect()),
        )
    }

    pub fn benefit_report(&self, p_f: Option<f64>) -> Result<BenefitReport, EngineError> {
        let (t, u) = self.trace();
        Ok(BenefitReport::compute(&t, &u, p_f)?)
    }

    pub fn lines(&self) -> impl Iterator<Item = LogLine> + '_ {
        std::iter::once(LogLine::Header(self.header.clone()))
            .chain(self.rounds.iter().cloned().map(LogLine::Round))
            .chain(std::iter::once(LogLine::Totals(self.totals.clone())))
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<(), EngineError> {
        for line in self.lines() {
            write_line(&mut out, &line)?;
        }
        Ok(())
    }

    pub fn to_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Parses a log; the totals line, when present, must agree with the rounds.
    pub fn read<R: BufRead>(input: R) -> Result<Self, EngineError> {
        let mut header = None;
        let mut rounds = Vec::new();
        let mut totals = None;
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| EngineError::Log { line: n + 1, msg };
            let parsed: LogLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            match parsed {
                LogLine::Header(h) if header.is_none() && n == 0 => header = Some(h),
                LogLine::Header(_) => return Err(err("header must be the first line".into())),
                LogLine::Round(r) => {
                    if header.is_none() {
                        return Err(err("round before header".into()));
                    }
                    if r.round != rounds.len() + 1 {
                        return Err(err(format!("expected round {}, found {}", rounds.len() + 1, r.round)));
                    }
                    if r.u != r.event.map_or(0, |e| e.u) {
                        return Err(err("u disagrees with the round's event".into()));
                    }
                    rounds.push(r);
                }
                LogLine::Totals(t) => totals = Some((n + 1, t)),
            }
        }
        let header = header.ok_or(EngineError::Log {
            line: 0,
            msg: "missing header".into(),
        })?;
        let log = RunLog::new(header, rounds);
        if let Some((line, t)) = totals {
            if t != log.totals {
                return Err(EngineError::Log {
                    line,
                    msg: "totals disagree with the rounds".into(),
                });
            }
        }
        Ok(log)
    }
}

pub fn write_line<W: Write>(out: &mut W, line: &LogLine) -> Result<(), EngineError> {
    let s = serde_json::to_string(line).map_err(std::io::Error::other)?;
    writeln!(out, "{s}")?;
    Ok(())
}
