//! Online single-class detector: the model contract, mini-batch building,
//! the sliding-window reference model and AP evaluation against a test phase.

pub mod batch;
pub mod features;
pub mod reference;

use crate::geometry::iou;
use crate::image::ImageFrame;
use crate::metrics::{evaluate, Detection, EvalImage, EvalSet, DEFAULT_MATCH_IOU};
use crate::sequence::ToOTSequence;

pub use batch::{build_minibatch, dynamic_rescale_factor, AugmentationConfig, MiniBatch};
pub use reference::{ReferenceConfig, ReferenceDetector};

#[derive(Debug, thiserror::Error)]
pub enum DetectorError {
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A trainable detector. `prepare` holds the parameter-independent part of
/// detection so a fixed test phase can be scored repeatedly.
pub trait DetectorModel {
    type Prepared: Send + Sync;

    fn prepare(&self, frame: &ImageFrame) -> Self::Prepared;

    fn detect_prepared(&self, prepared: &Self::Prepared) -> Vec<Detection>;

    fn detect(&self, frame: &ImageFrame) -> Vec<Detection> {
        self.detect_prepared(&self.prepare(frame))
    }

    /// One gradient step. `None` when the batch held nothing to train on,
    /// in which case the parameters are untouched.
    fn train_step(&mut self, batch: &MiniBatch) -> Result<Option<f64>, DetectorError>;
}

/// Greedy suppression in descending confidence; ties keep input order.
pub fn non_max_suppression(mut dets: Vec<Detection>, iou_threshold: f64, max_keep: usize) -> Vec<Detection> {
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept.len() >= max_keep {
            break;
        }
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// AP of `model` over every frame of `test`.
pub fn evaluate_ap<M: DetectorModel>(model: &M, test: &ToOTSequence) -> f64 {
    let mut set = EvalSet::default();
    for f in &test.frames {
        set.push(EvalImage {
            image_id: f.image.index,
            ground_truth: f.annotation.target_box().into_iter().collect(),
            detections: model.detect(&f.image),
        });
    }
    evaluate(&set, DEFAULT_MATCH_IOU)
}

/// A test phase with per-frame detector inputs computed once.
pub struct PreparedTestSet<P> {
    items: Vec<(usize, Option<crate::geometry::BoundingBox>, P)>,
}

impl<P: Send + Sync> PreparedTestSet<P> {
    pub fn new<M: DetectorModel<Prepared = P>>(model: &M, test: &ToOTSequence) -> Self {
        let items = test
            .frames
            .iter()
            .map(|f| (f.image.index, f.annotation.target_box(), model.prepare(&f.image)))
            .collect();
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn eval_set<M: DetectorModel<Prepared = P>>(&self, model: &M) -> EvalSet {
        EvalSet {
            images: self
                .items
                .iter()
                .map(|(id, gt, p)| EvalImage {
                    image_id: *id,
                    ground_truth: gt.iter().copied().collect(),
                    detections: model.detect_prepared(p),
                })
                .collect(),
        }
    }

    pub fn evaluate<M: DetectorModel<Prepared = P>>(&self, model: &M) -> f64 {
        evaluate(&self.eval_set(model), DEFAULT_MATCH_IOU)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;

    fn det(x: f64, c: f64) -> Detection {
        Detection {
            bbox: BoundingBox::new(x, 0.0, x + 10.0, 10.0),
            confidence: c,
        }
    }

    #[test]
    fn nms_drops_overlaps() {
        let out = non_max_suppression(vec![det(0.0, 0.6), det(1.0, 0.9), det(50.0, 0.3)], 0.45, 10);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].confidence, 0.9);
        assert_eq!(out[1].confidence, 0.3);
    }

    #[test]
    fn nms_caps_count() {
        let dets = (0..10).map(|i| det(i as f64 * 20.0, 0.5)).collect();
        assert_eq!(non_max_suppression(dets, 0.45, 3).len(), 3);
    }
}
