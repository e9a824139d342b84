//! Replay core: one training round per frame, in time order, under a
//! training strategy driven by the simulated user.
//!
//! [`TrainingLoop`] holds everything a round touches (model, annotator,
//! tracker, augmentation stream). Replays and live sessions both feed it one
//! frame and one [`RoundInput`] at a time.

pub mod compare;
pub mod runlog;

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotator::{AnnotatorConfig, AnnotatorError, Click, ClickAnnotator};
use crate::benefit::{BenefitError, BenefitReport};
use crate::detector::batch::{build_minibatch, AugmentationConfig};
use crate::detector::{DetectorError, DetectorModel, PreparedTestSet, ReferenceConfig, ReferenceDetector};
use crate::geometry::{iou, BoundingBox};
use crate::image::ImageFrame;
use crate::sequence::{validate_sequence, FrameAnnotation, ToOTSequence};
use crate::tracker::{init_tracker, update_tracker, TrackOutcome, TrackerConfig, TrackerError, TrackerState};

pub use compare::{compare_strategies, compare_traces, ComparisonReport, StrategyTrace, TraceComparison};
pub use runlog::{LogLine, RoundRecord, RunHeader, RunLog, RunTotals};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    BboxSupervision,
    ClickSupervision,
    ClickWithTracking,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::BboxSupervision,
        StrategyKind::ClickSupervision,
        StrategyKind::ClickWithTracking,
    ];

    /// Short name used on the command line.
    pub fn short_name(self) -> &'static str {
        match self {
            StrategyKind::BboxSupervision => "bbox",
            StrategyKind::ClickSupervision => "click",
            StrategyKind::ClickWithTracking => "track",
        }
    }

    pub fn from_short_name(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.short_name() == s || serde_json::to_value(k).ok().and_then(|v| v.as_str().map(|v| v == s)) == Some(true))
    }

    pub fn uses_tracker(self) -> bool {
        self == StrategyKind::ClickWithTracking
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ClickPlacement {
    ExactCenter,
    Jittered { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatedUserConfig {
    pub reacquire_iou: f64,
    pub click_placement: ClickPlacement,
}

impl Default for SimulatedUserConfig {
    fn default() -> Self {
        Self {
            reacquire_iou: 0.5,
            click_placement: ClickPlacement::ExactCenter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarmStartConfig {
    /// Optimizer steps before the first round; 0 disables warm start.
    pub steps: usize,
    /// Number of leading annotated train frames cycled through.
    pub frames: usize,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        Self { steps: 0, frames: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub detector: ReferenceConfig,
    pub augmentation: AugmentationConfig,
    pub annotator: AnnotatorConfig,
    pub tracker: TrackerConfig,
    pub user: SimulatedUserConfig,
    /// Evaluate P every this many rounds (and on the last round).
    pub eval_every: usize,
    pub warm_start: WarmStartConfig,
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.augmentation.validate().map_err(EngineError::Config)?;
        self.annotator.validate()?;
        self.tracker.validate()?;
        let r = self.user.reacquire_iou;
        if !(r > 0.0 && r < 1.0) {
            return Err(EngineError::Config("user.reacquire_iou must be in (0, 1)".into()));
        }
        if let ClickPlacement::Jittered { sigma } = self.user.click_placement {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return Err(EngineError::Config("click jitter sigma must be finite and non-negative".into()));
            }
        }
        Ok(())
    }

    fn eval_every(&self) -> usize {
        self.eval_every.max(1)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid sequence {name}: {msg}")]
    InvalidSequence { name: String, msg: String },
    #[error(transparent)]
    Annotator(#[from] AnnotatorError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Benefit(#[from] BenefitError),
    #[error("run log line {line}: {msg}")]
    Log { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What the operator (or the simulated user) does on a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum RoundInput {
    None,
    Click { click: Click },
    Box { bbox: BoundingBox },
    ResetTracker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSource {
    UserClick,
    UserBox,
    Tracker,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingEvent {
    pub round: usize,
    pub source: EventSource,
    pub click: Option<Click>,
    pub derived_bbox: BoundingBox,
    pub u: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerStatus {
    Inactive,
    Tracking,
    /// The update on this round failed.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundStart {
    pub round: usize,
    pub tracker: TrackerStatus,
    pub tracked_box: Option<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub event: Option<TrainingEvent>,
    pub loss: Option<f64>,
    pub model_changed: bool,
}

/// One training pair as it was used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub round: usize,
    pub frame: usize,
    pub source: EventSource,
    pub bbox: BoundingBox,
}

/// Every (frame, annotation) pair that reached the optimizer, in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistoryStore {
    pub entries: Vec<HistoryEntry>,
    dir: Option<std::path::PathBuf>,
}

impl HistoryStore {
    /// A store that also writes each used frame as PNG plus an index line
    /// under `dir`.
    pub fn on_disk(dir: std::path::PathBuf) -> Result<Self, EngineError> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            entries: Vec::new(),
            dir: Some(dir),
        })
    }

    pub fn record(&mut self, entry: HistoryEntry, frame: &ImageFrame) -> Result<(), EngineError> {
        if let Some(dir) = &self.dir {
            use std::io::Write;
            let name = format!("round_{:06}.png", entry.round);
            frame
                .to_rgb_image()
                .save(dir.join(&name))
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            let mut idx = std::fs::OpenOptions::new().create(true).append(true).open(dir.join("history.jsonl"))?;
            let line = serde_json::to_string(&entry).map_err(std::io::Error::other)?;
            writeln!(idx, "{line}")?;
        }
        self.entries.push(entry);
        Ok(())
    }
}

/// Click on the annotated target center under the configured placement.
pub fn place_click<R: Rng>(
    center: (f64, f64),
    dims: (u32, u32),
    placement: ClickPlacement,
    rng: &mut R,
) -> Click {
    let (mut x, mut y) = center;
    if let ClickPlacement::Jittered { sigma } = placement {
        if let Ok(n) = Normal::new(0.0, sigma) {
            x += n.sample(rng);
            y += n.sample(rng);
        }
    }
    Click::from_point(x, y, dims.0, dims.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserDecision {
    None,
    Click(Click),
    StopTracker,
}

/// The standardized user under tracking: clicks when no tracker runs and the
/// target is visible, or when the tracked box drifts below the reacquire IoU.
/// A running tracker on a frame without the target is stopped.
pub fn simulated_user_step<R: Rng>(
    tracked: Option<BoundingBox>,
    annotation: &FrameAnnotation,
    dims: (u32, u32),
    user: &SimulatedUserConfig,
    rng: &mut R,
) -> UserDecision {
    let (Some(gt), Some(center)) = (annotation.target_box(), annotation.center.filter(|_| annotation.target_present))
    else {
        return if tracked.is_some() {
            UserDecision::StopTracker
        } else {
            UserDecision::None
        };
    };
    let click_needed = match tracked {
        None => true,
        Some(t) => iou(&t, &gt) < user.reacquire_iou,
    };
    if click_needed {
        UserDecision::Click(place_click(center, dims, user.click_placement, rng))
    } else {
        UserDecision::None
    }
}

/// Input the simulated user produces for a strategy.
pub fn simulated_input<R: Rng>(
    strategy: StrategyKind,
    start: &RoundStart,
    annotation: &FrameAnnotation,
    dims: (u32, u32),
    user: &SimulatedUserConfig,
    rng: &mut R,
) -> RoundInput {
    match strategy {
        StrategyKind::BboxSupervision => match annotation.target_box() {
            Some(bbox) => RoundInput::Box { bbox },
            None => RoundInput::None,
        },
        StrategyKind::ClickSupervision => match (annotation.target_present, annotation.center) {
            (true, Some(c)) => RoundInput::Click {
                click: place_click(c, dims, user.click_placement, rng),
            },
            _ => RoundInput::None,
        },
        StrategyKind::ClickWithTracking => {
            let tracked = match start.tracker {
                TrackerStatus::Tracking => start.tracked_box,
                _ => None,
            };
            match simulated_user_step(tracked, annotation, dims, user, rng) {
                UserDecision::None => RoundInput::None,
                UserDecision::Click(click) => RoundInput::Click { click },
                UserDecision::StopTracker => RoundInput::ResetTracker,
            }
        }
    }
}

/// Per-run state shared by replay and live sessions.
pub struct TrainingLoop<M: DetectorModel> {
    pub strategy: StrategyKind,
    pub model: M,
    pub annotator: ClickAnnotator,
    pub history: HistoryStore,
    tracker_cfg: TrackerConfig,
    tracker: Option<TrackerState>,
    augmentation: AugmentationConfig,
    rng: ChaCha8Rng,
    color_sum: [f64; 3],
    frames_seen: u64,
    round: usize,
}

impl<M: DetectorModel> TrainingLoop<M> {
    pub fn new(strategy: StrategyKind, model: M, config: &EngineConfig, seed: u64) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Self {
            strategy,
            model,
            annotator: ClickAnnotator::reference(config.annotator.clone())?,
            history: HistoryStore::default(),
            tracker_cfg: config.tracker.clone(),
            tracker: None,
            augmentation: config.augmentation.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ config.augmentation.seed),
            color_sum: [0.0; 3],
            frames_seen: 0,
            round: 0,
        })
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn tracker_active(&self) -> bool {
        self.tracker.as_ref().is_some_and(|t| t.active)
    }

    pub fn tracked_box(&self) -> Option<BoundingBox> {
        self.tracker.as_ref().filter(|t| t.active).map(|t| t.bbox)
    }

    /// Mean color of all frames seen so far.
    pub fn canvas_fill(&self) -> [u8; 3] {
        let n = self.frames_seen.max(1) as f64;
        self.color_sum.map(|c| (c / n).round().clamp(0.0, 255.0) as u8)
    }

    /// Starts the next round on `frame`: updates the running mean color and
    /// advances an active tracker.
    pub fn begin_round(&mut self, frame: &ImageFrame) -> Result<RoundStart, EngineError> {
        self.round += 1;
        let mean = frame.mean_color();
        for k in 0..3 {
            self.color_sum[k] += mean[k];
        }
        self.frames_seen += 1;
        let mut status = TrackerStatus::Inactive;
        let mut tracked_box = None;
        if let Some(state) = self.tracker.as_mut().filter(|t| t.active) {
            let update = update_tracker(state, frame)?;
            match update.outcome {
                TrackOutcome::Tracking => {
                    status = TrackerStatus::Tracking;
                    tracked_box = update.bbox;
                }
                TrackOutcome::Failed => {
                    status = TrackerStatus::Failed;
                    self.tracker = None;
                }
            }
        }
        Ok(RoundStart {
            round: self.round,
            tracker: status,
            tracked_box,
        })
    }

    fn train_on(&mut self, frame: &ImageFrame, bbox: BoundingBox, source: EventSource) -> Result<(Option<f64>, bool), EngineError> {
        let fill = self.canvas_fill();
        let batch = build_minibatch(frame, &bbox, &self.augmentation, fill, &mut self.rng);
        let loss = self.model.train_step(&batch)?;
        self.history.record(
            HistoryEntry {
                round: self.round,
                frame: frame.index,
                source,
                bbox,
            },
            frame,
        )?;
        Ok((loss, loss.is_some()))
    }

    /// Applies the round's input and trains when the strategy calls for it.
    pub fn resolve(&mut self, frame: &ImageFrame, input: RoundInput) -> Result<RoundOutcome, EngineError> {
        let tracking = self.strategy.uses_tracker();
        let (event, click) = match input {
            RoundInput::Box { bbox } => (Some((bbox, EventSource::UserBox, 1u8)), None),
            RoundInput::Click { click } => {
                let derived = self.annotator.annotate(frame, click)?;
                if tracking {
                    self.tracker = match init_tracker(frame, derived.bbox, &self.tracker_cfg) {
                        Ok(t) => Some(t),
                        Err(e) => {
                            log::debug!("round {}: tracker not started: {e}", self.round);
                            None
                        }
                    };
                }
                (Some((derived.bbox, EventSource::UserClick, 1)), Some(click))
            }
            RoundInput::ResetTracker => {
                self.tracker = None;
                (None, None)
            }
            RoundInput::None => match self.tracked_box().filter(|_| tracking) {
                Some(tb) => {
                    let (cx, cy) = tb.center();
                    let click = Click::from_point(cx, cy, frame.width, frame.height);
                    let derived = self.annotator.annotate(frame, click)?;
                    (Some((derived.bbox, EventSource::Tracker, 0)), Some(click))
                }
                None => (None, None),
            },
        };
        let Some((bbox, source, u)) = event else {
            return Ok(RoundOutcome {
                event: None,
                loss: None,
                model_changed: false,
            });
        };
        let (loss, changed) = self.train_on(frame, bbox, source)?;
        Ok(RoundOutcome {
            event: Some(TrainingEvent {
                round: self.round,
                source,
                click,
                derived_bbox: bbox,
                u,
            }),
            loss,
            model_changed: changed,
        })
    }

    /// Warm start on ground-truth boxes of the leading annotated frames.
    pub fn warm_start(&mut self, train: &ToOTSequence, cfg: &WarmStartConfig) -> Result<(), EngineError> {
        if cfg.steps == 0 {
            return Ok(());
        }
        let frames: Vec<_> = train
            .frames
            .iter()
            .filter_map(|f| f.annotation.target_box().map(|b| (&f.image, b)))
            .take(cfg.frames.max(1))
            .collect();
        if frames.is_empty() {
            return Ok(());
        }
        for s in 0..cfg.steps {
            let (img, b) = frames[s % frames.len()];
            let batch = build_minibatch(img, &b, &self.augmentation, img.mean_color().map(|c| c.round() as u8), &mut self.rng);
            self.model.train_step(&batch)?;
        }
        Ok(())
    }
}

pub fn check_sequence(seq: &ToOTSequence) -> Result<(), EngineError> {
    if seq.is_empty() {
        return Err(EngineError::InvalidSequence {
            name: seq.name.clone(),
            msg: "no frames".into(),
        });
    }
    if let Some(v) = validate_sequence(seq).first() {
        return Err(EngineError::InvalidSequence {
            name: seq.name.clone(),
            msg: format!("{v:?}"),
        });
    }
    Ok(())
}

pub type PreparedTest = PreparedTestSet<<ReferenceDetector as DetectorModel>::Prepared>;

/// A training loop plus the bookkeeping that turns rounds into a run log.
pub struct RunSession {
    pub lp: TrainingLoop<ReferenceDetector>,
    pub header: RunHeader,
    pub rounds: Vec<RoundRecord>,
    test: Option<Arc<PreparedTest>>,
    eval_every: usize,
    p: f64,
    stale: bool,
}

impl RunSession {
    /// `test` is scored once up front for `P_0`; without it every `P` is 0.
    pub fn new(
        strategy: StrategyKind,
        config: &EngineConfig,
        seed: u64,
        train_name: &str,
        planned_rounds: usize,
        test: Option<(Arc<PreparedTest>, String)>,
        warm_start_from: Option<&ToOTSequence>,
    ) -> Result<Self, EngineError> {
        let model = ReferenceDetector::new(config.detector.clone());
        let mut lp = TrainingLoop::new(strategy, model, config, seed)?;
        if let Some(train) = warm_start_from {
            lp.warm_start(train, &config.warm_start)?;
        }
        let (test, test_name) = match test {
            Some((t, name)) => (Some(t), name),
            None => (None, String::new()),
        };
        let p0 = test.as_ref().map_or(0.0, |t| t.evaluate(&lp.model));
        Ok(Self {
            lp,
            header: RunHeader {
                strategy,
                seed,
                train: train_name.to_string(),
                test: test_name,
                rounds: planned_rounds,
                p0,
                config: config.clone(),
            },
            rounds: Vec::new(),
            test,
            eval_every: config.eval_every(),
            p: p0,
            stale: false,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn interactions(&self) -> usize {
        self.rounds.iter().map(|r| r.u as usize).sum()
    }

    pub fn has_test(&self) -> bool {
        self.test.is_some()
    }

    /// Starts a round on `frame`; the returned state is what the user sees.
    pub fn begin(&mut self, frame: &ImageFrame) -> Result<RoundStart, EngineError> {
        self.lp.begin_round(frame)
    }

    /// Finishes the round started on `frame`. A click is annotated on
    /// `click_frame` when given (an earlier frame the operator clicked on),
    /// otherwise on `frame`. `force_eval` scores the model even between
    /// decimated evaluation rounds.
    pub fn finish(
        &mut self,
        start: RoundStart,
        frame: &ImageFrame,
        input: RoundInput,
        click_frame: Option<&ImageFrame>,
        force_eval: bool,
    ) -> Result<RoundRecord, EngineError> {
        let used = match input {
            RoundInput::Click { .. } | RoundInput::Box { .. } => click_frame.unwrap_or(frame),
            _ => frame,
        };
        let outcome = self.lp.resolve(used, input)?;
        self.stale |= outcome.model_changed;
        if self.stale && (start.round % self.eval_every == 0 || force_eval) {
            if let Some(t) = &self.test {
                self.p = t.evaluate(&self.lp.model);
            }
            self.stale = false;
        }
        let rec = RoundRecord {
            round: start.round,
            frame: frame.index,
            u: outcome.event.map_or(0, |e| e.u),
            input,
            tracker: start.tracker,
            event: outcome.event,
            loss: outcome.loss,
            p: self.p,
        };
        self.rounds.push(rec.clone());
        Ok(rec)
    }

    pub fn log(&self) -> RunLog {
        RunLog::new(self.header.clone(), self.rounds.clone())
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub log: RunLog,
    pub report: BenefitReport,
    pub wall_time: Duration,
}

/// Replays `train` under `strategy`, evaluating on a prepared test phase.
/// Each log line is handed to `sink` as soon as it exists, so a failed run
/// still leaves its prefix behind. With `p_f` the run stops at the first
/// round reaching it.
#[allow(clippy::too_many_arguments)]
pub fn run_replay_with<F>(
    train: &ToOTSequence,
    test: Arc<PreparedTest>,
    test_name: &str,
    strategy: StrategyKind,
    config: &EngineConfig,
    seed: u64,
    p_f: Option<f64>,
    mut sink: F,
) -> Result<ReplayOutput, EngineError>
where
    F: FnMut(&LogLine) -> Result<(), EngineError>,
{
    let started = Instant::now();
    check_sequence(train)?;
    let mut session = RunSession::new(
        strategy,
        config,
        seed,
        &train.name,
        train.len(),
        Some((test, test_name.to_string())),
        Some(train),
    )?;
    let mut user_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    sink(&LogLine::Header(session.header.clone()))?;
    let n = train.len();
    for (k, f) in train.frames.iter().enumerate() {
        let dims = (f.image.width, f.image.height);
        let start = session.begin(&f.image)?;
        let input = simulated_input(strategy, &start, &f.annotation, dims, &config.user, &mut user_rng);
        let rec = session.finish(start, &f.image, input, None, k + 1 == n)?;
        sink(&LogLine::Round(rec.clone()))?;
        if let Some(pf) = p_f {
            if rec.p >= pf {
                log::info!("P_f {pf} reached at round {}", rec.round);
                break;
            }
        }
    }
    let log = session.log();
    sink(&LogLine::Totals(log.totals.clone()))?;
    let report = log.benefit_report(p_f)?;
    Ok(ReplayOutput {
        log,
        report,
        wall_time: started.elapsed(),
    })
}

/// Replays `train` against `test` and returns the log and benefit report.
pub fn run_replay(
    train: &ToOTSequence,
    test: &ToOTSequence,
    strategy: StrategyKind,
    config: &EngineConfig,
    seed: u64,
    p_f: Option<f64>,
) -> Result<ReplayOutput, EngineError> {
    let prepared = prepare_test(test, config)?;
    run_replay_with(train, prepared, &test.name, strategy, config, seed, p_f, |_| Ok(()))
}

/// Detector inputs for every test frame, computed once.
pub fn prepare_test(test: &ToOTSequence, config: &EngineConfig) -> Result<Arc<PreparedTest>, EngineError> {
    check_sequence(test)?;
    let probe = ReferenceDetector::new(config.detector.clone());
    Ok(Arc::new(PreparedTestSet::new(&probe, test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(center: (f64, f64), half: f64) -> FrameAnnotation {
        FrameAnnotation::present(
            center,
            BoundingBox::new(center.0 - half, center.1 - half, center.0 + half, center.1 + half),
        )
    }

    #[test]
    fn user_clicks_exact_center_without_tracker() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = simulated_user_step(None, &ann((50.0, 60.0), 10.0), (100, 100), &SimulatedUserConfig::default(), &mut rng);
        assert_eq!(d, UserDecision::Click(Click::new(50, 60)));
    }

    #[test]
    fn user_trusts_good_track_and_reacquires_bad() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gt = ann((50.0, 50.0), 10.0);
        let cfg = SimulatedUserConfig::default();
        // a 20 px box shifted by s along x has IoU (20 - s) / (20 + s)
        let shift = 20.0 * (1.0 - 0.8) / (1.0 + 0.8);
        let good = BoundingBox::new(40.0 + shift, 40.0, 60.0 + shift, 60.0);
        assert!((iou(&good, &gt.bbox.unwrap()) - 0.8).abs() < 1e-12);
        assert_eq!(simulated_user_step(Some(good), &gt, (100, 100), &cfg, &mut rng), UserDecision::None);
        let shift = 20.0 * (1.0 - 0.4) / (1.0 + 0.4);
        let bad = BoundingBox::new(40.0 + shift, 40.0, 60.0 + shift, 60.0);
        assert!((iou(&bad, &gt.bbox.unwrap()) - 0.4).abs() < 1e-12);
        assert_eq!(
            simulated_user_step(Some(bad), &gt, (100, 100), &cfg, &mut rng),
            UserDecision::Click(Click::new(50, 50))
        );
    }

    #[test]
    fn absent_target_stops_tracker() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SimulatedUserConfig::default();
        let tb = BoundingBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(
            simulated_user_step(Some(tb), &FrameAnnotation::ABSENT, (100, 100), &cfg, &mut rng),
            UserDecision::StopTracker
        );
        assert_eq!(
            simulated_user_step(None, &FrameAnnotation::ABSENT, (100, 100), &cfg, &mut rng),
            UserDecision::None
        );
    }

    #[test]
    fn jittered_click_stays_in_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let c = place_click((1.0, 98.0), (100, 100), ClickPlacement::Jittered { sigma: 5.0 }, &mut rng);
            assert!(c.in_bounds(100, 100));
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(StrategyKind::from_short_name(k.short_name()), Some(k));
        }
        assert_eq!(
            StrategyKind::from_short_name("click_with_tracking"),
            Some(StrategyKind::ClickWithTracking)
        );
        assert_eq!(StrategyKind::from_short_name("nope"), None);
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = EngineConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(EngineConfig::from_toml(&text).unwrap(), cfg);
        assert!(EngineConfig::from_toml("[user]\nreacquire_iou = 1.5\n").is_err());
    }
}
