//! Wire messages. Every message is one JSON text frame tagged by `kind`;
//! control messages carry a second tag, `type`.

use serde::{Deserialize, Serialize};
use toot_core::annotator::Click;
use toot_core::engine::{EventSource, StrategyKind, TrackerStatus};
use toot_core::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<BoundingBox> for WireBox {
    fn from(b: BoundingBox) -> Self {
        Self {
            x0: b.x0,
            y0: b.y0,
            x1: b.x1,
            y1: b.y1,
        }
    }
}

impl From<WireBox> for BoundingBox {
    fn from(b: WireBox) -> Self {
        BoundingBox::new(b.x0, b.y0, b.x1, b.y1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    #[serde(flatten)]
    pub bbox: WireBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub session: String,
    pub ordinal: u64,
    pub round: usize,
    /// Stream size.
    pub width: u32,
    pub height: u32,
    pub full_width: u32,
    pub full_height: u32,
    /// Base64 PNG of the downscaled frame.
    pub png: String,
    pub tracker: TrackerStatus,
    /// Stream coordinates.
    pub tracked_box: Option<WireBox>,
}

/// Detections on frame `ordinal` by the model as it stood before that
/// round's training, in stream coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsMessage {
    pub session: String,
    pub ordinal: u64,
    pub detections: Vec<WireDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsMessage {
    pub session: String,
    pub ordinal: u64,
    pub round: usize,
    pub interactions: usize,
    pub training_rounds: usize,
    pub event: Option<EventSource>,
    /// `None` when the session has no test phase.
    pub p: Option<f64>,
    pub ctb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlBody {
    Hello {
        strategy: StrategyKind,
        stream_size: u32,
        frame_width: u32,
        frame_height: u32,
        stale_window: u64,
        latest_ordinal: u64,
    },
    Ack {
        ordinal: u64,
        /// Click in full-resolution pixels.
        click: Click,
        /// Box the annotator derives, stream coordinates.
        bbox: WireBox,
        /// The same box in full-resolution coordinates.
        bbox_full: WireBox,
    },
    Error {
        reason: String,
        ordinal: Option<u64>,
    },
    /// The frame source is exhausted.
    End { ordinal: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerMessage {
    Control {
        session: String,
        #[serde(flatten)]
        body: ControlBody,
    },
    Frame(FrameMessage),
    Detections(DetectionsMessage),
    Metrics(MetricsMessage),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientControl {
    ResetTracker,
    SetTracking { enabled: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientMessage {
    /// A click in stream pixel coordinates on the frame `ordinal`.
    Click {
        #[serde(default)]
        session: Option<String>,
        ordinal: u64,
        x: u32,
        y: u32,
    },
    Control {
        #[serde(default)]
        session: Option<String>,
        #[serde(flatten)]
        body: ClientControl,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }

    pub fn control(session: &str, body: ControlBody) -> Self {
        ServerMessage::Control {
            session: session.to_string(),
            body,
        }
    }

    pub fn error(session: &str, reason: impl Into<String>, ordinal: Option<u64>) -> Self {
        Self::control(
            session,
            ControlBody::Error {
                reason: reason.into(),
                ordinal,
            },
        )
    }
}

/// Stream size for a frame: the longer side becomes `stream_size`.
pub fn stream_dims(frame: (u32, u32), stream_size: u32) -> (u32, u32) {
    let (w, h) = frame;
    if w >= h {
        (stream_size, ((h as u64 * stream_size as u64 + w as u64 / 2) / w as u64).max(1) as u32)
    } else {
        (((w as u64 * stream_size as u64 + h as u64 / 2) / h as u64).max(1) as u32, stream_size)
    }
}

/// Nearest full-resolution pixel for stream pixel `v`: `round(v * full / stream)`,
/// halves rounding up, clamped to the last pixel.
pub fn stream_to_full(v: u32, stream: u32, full: u32) -> u32 {
    let num = 2 * v as u64 * full as u64 + stream as u64;
    ((num / (2 * stream as u64)) as u32).min(full.saturating_sub(1))
}

pub fn full_to_stream(v: u32, stream: u32, full: u32) -> u32 {
    stream_to_full(v, full, stream)
}

pub fn scale_box(b: &BoundingBox, from: (u32, u32), to: (u32, u32)) -> BoundingBox {
    let sx = to.0 as f64 / from.0 as f64;
    let sy = to.1 as f64 / from.1 as f64;
    BoundingBox::new(b.x0 * sx, b.y0 * sy, b.x1 * sx, b.y1 * sy)
}
