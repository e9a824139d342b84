//! Live click-to-train session: one training loop fed by a frame source,
//! driven one round per tick.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::Engine as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use toot_core::annotator::Click;
use toot_core::detector::DetectorModel;
use toot_core::engine::runlog::write_line;
use toot_core::engine::{
    simulated_input, EngineConfig, EngineError, LogLine, PreparedTest, RoundInput, RoundRecord, RunLog, RunSession,
    StrategyKind,
};
use toot_core::image::ImageFrame;
use toot_core::sequence::{FrameAnnotation, ToOTSequence};

use crate::protocol::{
    scale_box, stream_dims, stream_to_full, ClientControl, ControlBody, DetectionsMessage,
    FrameMessage, MetricsMessage, ServerMessage, WireDetection,
};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("frame source: {0}")]
    Source(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct SourceFrame {
    pub image: ImageFrame,
    /// Known only for annotated playback; drives the autopilot.
    pub annotation: Option<FrameAnnotation>,
}

pub trait FrameSource: Send {
    fn name(&self) -> &str;

    fn next_frame(&mut self) -> Result<Option<SourceFrame>, SessionError>;

    /// Frames left, when known.
    fn remaining(&self) -> Option<usize>;
}

/// Plays an annotated sequence once, in order.
pub struct SequenceSource {
    seq: ToOTSequence,
    pos: usize,
}

impl SequenceSource {
    pub fn new(seq: ToOTSequence) -> Self {
        Self { seq, pos: 0 }
    }
}

impl FrameSource for SequenceSource {
    fn name(&self) -> &str {
        &self.seq.name
    }

    fn next_frame(&mut self) -> Result<Option<SourceFrame>, SessionError> {
        let Some(f) = self.seq.frames.get(self.pos) else {
            return Ok(None);
        };
        self.pos += 1;
        Ok(Some(SourceFrame {
            image: f.image.clone(),
            annotation: Some(f.annotation),
        }))
    }

    fn remaining(&self) -> Option<usize> {
        Some(self.seq.len() - self.pos)
    }
}

/// Image files of a directory in file-name order, unannotated. Stands in
/// for a camera feed.
pub struct ImageDirSource {
    name: String,
    paths: Vec<PathBuf>,
    pos: usize,
}

impl ImageDirSource {
    pub fn open(dir: &Path) -> Result<Self, SessionError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg" | "bmp"))
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(SessionError::Source(format!("no images in {}", dir.display())));
        }
        let name = dir
            .file_name()
            .map_or_else(|| "images".to_string(), |n| n.to_string_lossy().into_owned());
        Ok(Self { name, paths, pos: 0 })
    }
}

impl FrameSource for ImageDirSource {
    fn name(&self) -> &str {
        &self.name
    }

    fn next_frame(&mut self) -> Result<Option<SourceFrame>, SessionError> {
        let Some(path) = self.paths.get(self.pos) else {
            return Ok(None);
        };
        let image = ImageFrame::open(self.pos, path).map_err(|e| SessionError::Source(format!("{}: {e}", path.display())))?;
        self.pos += 1;
        Ok(Some(SourceFrame {
            image,
            annotation: None,
        }))
    }

    fn remaining(&self) -> Option<usize> {
        Some(self.paths.len() - self.pos)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub id: String,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub engine: EngineConfig,
    pub stream_size: u32,
    pub stale_window: u64,
    /// Let the simulated user act on annotated frames nobody clicked.
    pub autopilot: bool,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            id: "live".into(),
            strategy: StrategyKind::ClickWithTracking,
            seed: 0,
            engine: EngineConfig::default(),
            stream_size: 224,
            stale_window: 5,
            autopilot: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingClick {
    ordinal: u64,
    click: Click,
}

/// Messages produced by one round, in send order.
#[derive(Debug, Clone)]
pub struct TickOutput {
    pub record: RoundRecord,
    pub messages: Vec<ServerMessage>,
}

pub struct SessionCore {
    cfg: SessionConfig,
    run: RunSession,
    source: Box<dyn FrameSource>,
    user_rng: ChaCha8Rng,
    ordinal: u64,
    recent: VecDeque<(u64, ImageFrame)>,
    pending: Option<PendingClick>,
    reset_requested: bool,
    log_out: Option<BufWriter<File>>,
    ended: bool,
}

impl SessionCore {
    /// `test` is scored for `P`; without it metrics carry no performance.
    pub fn new(
        cfg: SessionConfig,
        source: Box<dyn FrameSource>,
        test: Option<(Arc<PreparedTest>, String)>,
        warm_start_from: Option<&ToOTSequence>,
    ) -> Result<Self, SessionError> {
        if cfg.stream_size == 0 {
            return Err(EngineError::Config("stream_size must be positive".into()).into());
        }
        let planned = source.remaining().unwrap_or(0);
        let run = RunSession::new(
            cfg.strategy,
            &cfg.engine,
            cfg.seed,
            source.name(),
            planned,
            test,
            warm_start_from,
        )?;
        let user_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
        Ok(Self {
            cfg,
            run,
            source,
            user_rng,
            ordinal: 0,
            recent: VecDeque::new(),
            pending: None,
            reset_requested: false,
            log_out: None,
            ended: false,
        })
    }

    /// Appends the run log to `path` as rounds complete.
    pub fn log_to(&mut self, path: &Path) -> Result<(), SessionError> {
        let mut out = BufWriter::new(File::create(path)?);
        write_line(&mut out, &LogLine::Header(self.run.header.clone()))?;
        for r in &self.run.rounds {
            write_line(&mut out, &LogLine::Round(r.clone()))?;
        }
        out.flush()?;
        self.log_out = Some(out);
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.cfg.id
    }

    pub fn ordinal(&self) -> u64 {
        self.ordinal
    }

    pub fn ended(&self) -> bool {
        self.ended
    }

    pub fn strategy(&self) -> StrategyKind {
        self.run.lp.strategy
    }

    pub fn log(&self) -> RunLog {
        self.run.log()
    }

    fn frame_dims(&self) -> (u32, u32) {
        self.recent.back().map_or((0, 0), |(_, f)| (f.width, f.height))
    }

    pub fn hello(&self) -> ServerMessage {
        let (w, h) = self.frame_dims();
        ServerMessage::control(
            &self.cfg.id,
            ControlBody::Hello {
                strategy: self.strategy(),
                stream_size: self.cfg.stream_size,
                frame_width: w,
                frame_height: h,
                stale_window: self.cfg.stale_window,
                latest_ordinal: self.ordinal,
            },
        )
    }

    /// Validates a click on stream frame `ordinal` and queues it for the
    /// next round. The ack carries the box the annotator derives.
    pub fn handle_click(&mut self, ordinal: u64, x: u32, y: u32) -> ServerMessage {
        let id = self.cfg.id.clone();
        if self.ended {
            return ServerMessage::error(&id, "session ended", Some(ordinal));
        }
        if ordinal > self.ordinal || ordinal == 0 {
            return ServerMessage::error(&id, "unknown frame ordinal", Some(ordinal));
        }
        if self.ordinal - ordinal > self.cfg.stale_window {
            return ServerMessage::error(&id, "stale click", Some(ordinal));
        }
        let Some((_, frame)) = self.recent.iter().find(|(o, _)| *o == ordinal) else {
            return ServerMessage::error(&id, "stale click", Some(ordinal));
        };
        let full = (frame.width, frame.height);
        let stream = stream_dims(full, self.cfg.stream_size);
        if x >= stream.0 || y >= stream.1 {
            return ServerMessage::error(&id, "click out of bounds", Some(ordinal));
        }
        let click = Click::new(stream_to_full(x, stream.0, full.0), stream_to_full(y, stream.1, full.1));
        let derived = match self.run.lp.annotator.annotate(frame, click) {
            Ok(d) => d,
            Err(e) => return ServerMessage::error(&id, e.to_string(), Some(ordinal)),
        };
        self.pending = Some(PendingClick { ordinal, click });
        ServerMessage::control(
            &id,
            ControlBody::Ack {
                ordinal,
                click,
                bbox: scale_box(&derived.bbox, full, stream).into(),
                bbox_full: derived.bbox.into(),
            },
        )
    }

    pub fn handle_control(&mut self, body: ClientControl) -> ServerMessage {
        match body {
            ClientControl::ResetTracker => self.reset_requested = true,
            ClientControl::SetTracking { enabled } => {
                self.run.lp.strategy = if enabled {
                    StrategyKind::ClickWithTracking
                } else {
                    self.reset_requested = true;
                    StrategyKind::ClickSupervision
                };
            }
        }
        self.hello()
    }

    /// Runs one round on the next frame. `None` once the source is exhausted.
    pub fn tick(&mut self) -> Result<Option<TickOutput>, SessionError> {
        self.advance(None)
    }

    /// Runs one round with a scripted input, ignoring queued clicks and the
    /// autopilot.
    pub fn tick_with(&mut self, input: RoundInput) -> Result<Option<TickOutput>, SessionError> {
        self.advance(Some(input))
    }

    fn advance(&mut self, scripted: Option<RoundInput>) -> Result<Option<TickOutput>, SessionError> {
        if self.ended {
            return Ok(None);
        }
        let Some(sf) = self.source.next_frame()? else {
            self.end()?;
            return Ok(None);
        };
        let frame = sf.image;
        self.ordinal += 1;
        let ordinal = self.ordinal;
        let full = (frame.width, frame.height);
        let stream = stream_dims(full, self.cfg.stream_size);

        let start = self.run.begin(&frame)?;
        let detections = self.run.lp.model.detect(&frame);

        let mut click_frame = None;
        let input = match scripted {
            Some(i) => i,
            None => {
                if let Some(p) = self.pending.take() {
                    click_frame = self.recent.iter().find(|(o, _)| *o == p.ordinal).map(|(_, f)| f.clone());
                    self.reset_requested = false;
                    RoundInput::Click { click: p.click }
                } else if std::mem::take(&mut self.reset_requested) {
                    RoundInput::ResetTracker
                } else if let (true, Some(a)) = (self.cfg.autopilot, sf.annotation.as_ref()) {
                    simulated_input(self.strategy(), &start, a, full, &self.cfg.engine.user, &mut self.user_rng)
                } else {
                    RoundInput::None
                }
            }
        };
        let last = self.source.remaining() == Some(0);
        let record = self.run.finish(start, &frame, input, click_frame.as_ref(), last)?;
        if let Some(out) = self.log_out.as_mut() {
            write_line(out, &LogLine::Round(record.clone()))?;
            out.flush()?;
        }

        let id = self.cfg.id.clone();
        let small = frame.resized(stream.0, stream.1);
        let png = base64::engine::general_purpose::STANDARD.encode(small.encode_png());
        let mut messages = vec![
            ServerMessage::Frame(FrameMessage {
                session: id.clone(),
                ordinal,
                round: record.round,
                width: stream.0,
                height: stream.1,
                full_width: full.0,
                full_height: full.1,
                png,
                tracker: start.tracker,
                tracked_box: start.tracked_box.map(|b| scale_box(&b, full, stream).into()),
            }),
            ServerMessage::Detections(DetectionsMessage {
                session: id.clone(),
                ordinal,
                detections: detections
                    .iter()
                    .map(|d| WireDetection {
                        bbox: scale_box(&d.bbox, full, stream).into(),
                        confidence: d.confidence,
                    })
                    .collect(),
            }),
        ];
        let has_test = self.run.has_test();
        messages.push(ServerMessage::Metrics(MetricsMessage {
            session: id,
            ordinal,
            round: record.round,
            interactions: self.run.interactions(),
            training_rounds: self.run.rounds.iter().filter(|r| r.event.is_some()).count(),
            event: record.event.map(|e| e.source),
            p: has_test.then_some(record.p),
            ctb: has_test.then_some(record.p - self.run.header.p0),
        }));

        self.recent.push_back((ordinal, frame));
        while self.recent.len() as u64 > self.cfg.stale_window + 1 {
            self.recent.pop_front();
        }
        Ok(Some(TickOutput { record, messages }))
    }

    /// Marks the session finished and closes the live log with its totals.
    pub fn end(&mut self) -> Result<RunLog, SessionError> {
        let log = self.run.log();
        if !self.ended {
            self.ended = true;
            if let Some(mut out) = self.log_out.take() {
                write_line(&mut out, &LogLine::Totals(log.totals.clone()))?;
                out.flush()?;
            }
        }
        Ok(log)
    }

    pub fn end_message(&self) -> ServerMessage {
        ServerMessage::control(&self.cfg.id, ControlBody::End { ordinal: self.ordinal })
    }
}
