//! Strategy comparison at a common final performance `P_f`.
//!
//! `P_f` defaults to the smallest per-strategy `P_max`. Every run is cut at
//! its first round reaching `P_f`; interactions and mean ITB are counted on
//! the cut run.

use serde::{Deserialize, Serialize};

use super::{prepare_test, run_replay_with, EngineConfig, EngineError, RunLog, StrategyKind};
use crate::benefit::{first_reaching, p_max, BenefitReport, InteractionVector, PerformanceTrace};
use crate::sequence::ToOTSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyTrace {
    pub name: String,
    pub trace: PerformanceTrace,
    pub u: InteractionVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub name: String,
    pub p_max: f64,
    pub p_max_round: usize,
    /// First round with `P >= P_f`; `None` when never reached.
    pub reached_at: Option<usize>,
    pub interactions_to_pf: Option<usize>,
    pub mean_itb_to_pf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub numerator: String,
    pub denominator: String,
    /// Mean ITB of the numerator over that of the denominator; `None` when
    /// either side is undefined or the denominator is not positive.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceComparison {
    pub p_f: f64,
    pub strategies: Vec<StrategySummary>,
    pub ratios: Vec<Ratio>,
}

impl TraceComparison {
    pub fn summary(&self, name: &str) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.name == name)
    }

    pub fn ratio(&self, numerator: &str, denominator: &str) -> Option<f64> {
        self.ratios
            .iter()
            .find(|r| r.numerator == numerator && r.denominator == denominator)
            .and_then(|r| r.value)
    }
}

fn ratios_of<'a>(items: impl Iterator<Item = (&'a str, Option<f64>)> + Clone) -> Vec<Ratio> {
    let mut out = Vec::new();
    for (i, (a, ma)) in items.clone().enumerate() {
        for (j, (b, mb)) in items.clone().enumerate() {
            if i == j {
                continue;
            }
            out.push(Ratio {
                numerator: a.to_string(),
                denominator: b.to_string(),
                value: match (ma, mb) {
                    (Some(x), Some(y)) if y > 0.0 => Some(x / y),
                    _ => None,
                },
            });
        }
    }
    out
}

/// Compares stored traces. `p_f` overrides the default minimum `P_max`.
pub fn compare_traces(traces: &[StrategyTrace], p_f: Option<f64>) -> Result<TraceComparison, EngineError> {
    if traces.len() < 2 {
        return Err(EngineError::Config("comparison needs at least two strategies".into()));
    }
    let pmax: Vec<(f64, usize)> = traces.iter().map(|t| p_max(&t.trace)).collect();
    let p_f = p_f.unwrap_or_else(|| pmax.iter().map(|p| p.0).fold(f64::INFINITY, f64::min));
    let mut strategies = Vec::with_capacity(traces.len());
    for (t, &(pm, pm_round)) in traces.iter().zip(&pmax) {
        let reached_at = first_reaching(&t.trace, p_f);
        let (interactions, mean) = match reached_at {
            Some(_) => {
                let r = BenefitReport::truncated_at_pf(&t.trace, &t.u, p_f)?;
                (Some(r.interaction_count), r.mean_itb)
            }
            None => {
                log::info!("{} never reaches P_f {p_f}", t.name);
                (None, None)
            }
        };
        strategies.push(StrategySummary {
            name: t.name.clone(),
            p_max: pm,
            p_max_round: pm_round,
            reached_at,
            interactions_to_pf: interactions,
            mean_itb_to_pf: mean,
        });
    }
    let ratios = ratios_of(strategies.iter().map(|s| (s.name.as_str(), s.mean_itb_to_pf)));
    Ok(TraceComparison { p_f, strategies, ratios })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedSummary {
    pub name: String,
    pub mean_p_max: f64,
    /// Seeds in which the strategy reached that seed's `P_f`.
    pub reached_seeds: usize,
    pub mean_interactions_to_pf: Option<f64>,
    pub mean_itb_to_pf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub comparison: TraceComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub train: String,
    pub test: String,
    pub seeds: Vec<SeedComparison>,
    pub averaged: Vec<AveragedSummary>,
    /// Ratios of the seed-averaged mean ITBs.
    pub ratios: Vec<Ratio>,
}

impl ComparisonReport {
    pub fn averaged(&self, name: &str) -> Option<&AveragedSummary> {
        self.averaged.iter().find(|s| s.name == name)
    }

    pub fn ratio(&self, numerator: &str, denominator: &str) -> Option<f64> {
        self.ratios
            .iter()
            .find(|r| r.numerator == numerator && r.denominator == denominator)
            .and_then(|r| r.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Averages per-seed comparisons; strategy order follows the first seed.
pub fn average_comparisons(train: &str, test: &str, seeds: Vec<SeedComparison>) -> ComparisonReport {
    let names: Vec<String> = seeds
        .first()
        .map(|s| s.comparison.strategies.iter().map(|x| x.name.clone()).collect())
        .unwrap_or_default();
    let averaged: Vec<AveragedSummary> = names
        .iter()
        .map(|name| {
            let rows: Vec<&StrategySummary> = seeds.iter().filter_map(|s| s.comparison.summary(name)).collect();
            AveragedSummary {
                name: name.clone(),
                mean_p_max: mean_of(rows.iter().map(|r| r.p_max)).unwrap_or(f64::NAN),
                reached_seeds: rows.iter().filter(|r| r.reached_at.is_some()).count(),
                mean_interactions_to_pf: mean_of(rows.iter().filter_map(|r| r.interactions_to_pf.map(|v| v as f64))),
                mean_itb_to_pf: mean_of(rows.iter().filter_map(|r| r.mean_itb_to_pf)),
            }
        })
        .collect();
    let ratios = ratios_of(averaged.iter().map(|s| (s.name.as_str(), s.mean_itb_to_pf)));
    ComparisonReport {
        train: train.to_string(),
        test: test.to_string(),
        seeds,
        averaged,
        ratios,
    }
}

/// Runs every strategy for every seed and compares them per seed.
/// `on_log` receives each finished run.
pub fn compare_strategies<F>(
    train: &ToOTSequence,
    test: &ToOTSequence,
    strategies: &[StrategyKind],
    seeds: &[u64],
    config: &EngineConfig,
    mut on_log: F,
) -> Result<ComparisonReport, EngineError>
where
    F: FnMut(&RunLog) -> Result<(), EngineError>,
{
    if strategies.len() < 2 {
        return Err(EngineError::Config("comparison needs at least two strategies".into()));
    }
    if seeds.is_empty() {
        return Err(EngineError::Config("comparison needs at least one seed".into()));
    }
    let prepared = prepare_test(test, config)?;
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut traces = Vec::with_capacity(strategies.len());
        for (k, &s) in strategies.iter().enumerate() {
            let out = run_replay_with(train, prepared.clone(), &test.name, s, config, seed, None, |_| Ok(()))?;
            on_log(&out.log)?;
            let (trace, u) = out.log.trace();
            // a strategy listed twice keeps distinct names
            let name = if strategies[..k].contains(&s) {
                format!("{}#{k}", s.short_name())
            } else {
                s.short_name().to_string()
            };
            traces.push(StrategyTrace { name, trace, u });
        }
        per_seed.push(SeedComparison {
            seed,
            comparison: compare_traces(&traces, None)?,
        });
    }
    Ok(average_comparisons(&train.name, &test.name, per_seed))
}
