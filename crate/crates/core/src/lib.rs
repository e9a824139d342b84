//! Time-ordered online training of a single-target detector from clicks.
//!
//! The crate covers the whole replay pipeline: annotated frame sequences
//! ([`sequence`], [`synth`]), box geometry and average precision
//! ([`geometry`], [`metrics`]), training-benefit metrics ([`benefit`]), the
//! click-to-box annotator ([`annotator`]), a Median Flow tracker
//! ([`tracker`]), the online detector and its mini-batches ([`detector`]),
//! and the strategy runner ([`engine`]).

pub mod annotator;
pub mod benefit;
pub mod detector;
pub mod engine;
pub mod geometry;
pub mod image;
pub mod metrics;
pub mod sequence;
pub mod synth;
pub mod tracker;
