//! Sliding-window logistic detector trained online with Adam.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::batch::MiniBatch;
use super::features::{AnchorConfig, FrameFeatures, FEATURE_DIM};
use super::{non_max_suppression, DetectorError, DetectorModel};
use crate::geometry::iou;
use crate::image::ImageFrame;
use crate::metrics::Detection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    pub anchors: AnchorConfig,
    /// Windows at or above this IoU with the box are positives.
    pub positive_iou: f64,
    /// When no window reaches `positive_iou`, the best one still counts if it
    /// reaches this.
    pub forced_min_iou: f64,
    /// Hard negatives per positive.
    pub negative_ratio: usize,
    pub confidence_cutoff: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
    pub init_bias: f64,
    pub l2: f64,
    pub optimizer: AdamConfig,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            anchors: AnchorConfig::default(),
            positive_iou: 0.5,
            forced_min_iou: 0.3,
            negative_ratio: 3,
            confidence_cutoff: 0.1,
            nms_iou: 0.45,
            max_detections: 20,
            init_bias: -4.0,
            l2: 1e-4,
            optimizer: AdamConfig::default(),
        }
    }
}

/// One labeled feature row.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f32],
    pub y: f64,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn score(params: &[f64], x: &[f32]) -> f64 {
    let (w, b) = params.split_at(FEATURE_DIM);
    w.iter().zip(x).map(|(w, &x)| w * x as f64).sum::<f64>() + b[0]
}

/// Mean logistic loss over `samples` plus `l2/2 * |w|^2`, and its gradient
/// with respect to `params` (weights, then bias).
pub fn loss_and_grad(params: &[f64], samples: &[Sample<'_>], l2: f64) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let n = samples.len().max(1) as f64;
    for s in samples {
        let z = score(params, s.x);
        loss += softplus(z) - s.y * z;
        let g = (sigmoid(z) - s.y) / n;
        for (gk, &xk) in grad[..FEATURE_DIM].iter_mut().zip(s.x) {
            *gk += g * xk as f64;
        }
        grad[FEATURE_DIM] += g;
    }
    loss /= n;
    for k in 0..FEATURE_DIM {
        loss += 0.5 * l2 * params[k] * params[k];
        grad[k] += l2 * params[k];
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDetector {
    pub config: ReferenceConfig,
    params: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const MAGIC: &[u8; 8] = b"TOOTDET\0";
const VERSION: u32 = 1;

impl ReferenceDetector {
    pub fn new(config: ReferenceConfig) -> Self {
        let mut params = vec![0.0; FEATURE_DIM + 1];
        params[FEATURE_DIM] = config.init_bias;
        Self {
            config,
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            params,
            t: 0,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn features(&self, frame: &ImageFrame) -> FrameFeatures {
        FrameFeatures::extract(frame, &self.config.anchors)
    }

    /// Positives and hard negatives for one image.
    pub fn select_samples<'a>(&self, feats: &'a FrameFeatures, bbox: &crate::geometry::BoundingBox) -> Vec<Sample<'a>> {
        let ious: Vec<f64> = feats.anchors.iter().map(|a| iou(a, bbox)).collect();
        let mut pos: Vec<usize> = (0..ious.len()).filter(|&i| ious[i] >= self.config.positive_iou).collect();
        if pos.is_empty() {
            let best = (0..ious.len()).max_by(|&a, &b| ious[a].total_cmp(&ious[b]).then(b.cmp(&a)));
            match best {
                Some(i) if ious[i] >= self.config.forced_min_iou => pos.push(i),
                _ => return Vec::new(),
            }
        }
        let mut neg: Vec<(f64, usize)> = (0..ious.len())
            .filter(|&i| ious[i] < self.config.positive_iou && !pos.contains(&i))
            .map(|i| (score(&self.params, feats.row(i)), i))
            .collect();
        neg.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        neg.truncate(self.config.negative_ratio * pos.len());
        pos.iter()
            .map(|&i| Sample { x: feats.row(i), y: 1.0 })
            .chain(neg.iter().map(|&(_, i)| Sample { x: feats.row(i), y: 0.0 }))
            .collect()
    }

    fn adam_update(&mut self, grad: &[f64]) {
        let c = &self.config.optimizer;
        self.t += 1;
        let b1t = 1.0 - c.beta1.powi(self.t as i32);
        let b2t = 1.0 - c.beta2.powi(self.t as i32);
        for k in 0..self.params.len() {
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * grad[k];
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * grad[k] * grad[k];
            let mh = self.m[k] / b1t;
            let vh = self.v[k] / b2t;
            self.params[k] -= c.lr * mh / (vh.sqrt() + c.eps);
        }
    }

    /// One optimizer step on already selected samples.
    pub fn step_on(&mut self, samples: &[Sample<'_>]) -> Result<f64, DetectorError> {
        let (loss, grad) = loss_and_grad(&self.params, samples, self.config.l2);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(DetectorError::NonFiniteLoss { step: self.t + 1, loss });
        }
        self.adam_update(&grad);
        Ok(loss)
    }

    pub fn detect_features(&self, feats: &FrameFeatures) -> Vec<Detection> {
        let mut dets = Vec::new();
        for (i, a) in feats.anchors.iter().enumerate() {
            let p = sigmoid(score(&self.params, feats.row(i)));
            if p >= self.config.confidence_cutoff {
                dets.push(Detection { bbox: *a, confidence: p });
            }
        }
        non_max_suppression(dets, self.config.nms_iou, self.config.max_detections)
    }

    pub fn save_checkpoint<W: Write>(&self, mut out: W) -> Result<(), DetectorError> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(self.params.len() as u32).to_le_bytes())?;
        out.write_all(&self.t.to_le_bytes())?;
        for vec in [&self.params, &self.m, &self.v] {
            for x in vec.iter() {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load_checkpoint<R: Read>(mut input: R, config: ReferenceConfig) -> Result<Self, DetectorError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(DetectorError::Checkpoint("bad magic".into()));
        }
        let mut u4 = [0u8; 4];
        input.read_exact(&mut u4)?;
        let version = u32::from_le_bytes(u4);
        if version != VERSION {
            return Err(DetectorError::Checkpoint(format!("unsupported version {version}")));
        }
        input.read_exact(&mut u4)?;
        let n = u32::from_le_bytes(u4) as usize;
        if n != FEATURE_DIM + 1 {
            return Err(DetectorError::Checkpoint(format!("expected {} parameters, found {n}", FEATURE_DIM + 1)));
        }
        let mut u8b = [0u8; 8];
        input.read_exact(&mut u8b)?;
        let t = u64::from_le_bytes(u8b);
        let mut read_vec = || -> Result<Vec<f64>, DetectorError> {
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                input.read_exact(&mut u8b)?;
                v.push(f64::from_le_bytes(u8b));
            }
            Ok(v)
        };
        let params = read_vec()?;
        let m = read_vec()?;
        let v = read_vec()?;
        Ok(Self { config, params, m, v, t })
    }
}

impl DetectorModel for ReferenceDetector {
    type Prepared = FrameFeatures;

    fn prepare(&self, frame: &ImageFrame) -> FrameFeatures {
        self.features(frame)
    }

    fn detect_prepared(&self, prepared: &FrameFeatures) -> Vec<Detection> {
        self.detect_features(prepared)
    }

    fn train_step(&mut self, batch: &MiniBatch) -> Result<Option<f64>, DetectorError> {
        let feats: Vec<FrameFeatures> = batch.items.iter().map(|it| self.features(&it.image)).collect();
        let mut samples = Vec::new();
        for (f, it) in feats.iter().zip(&batch.items) {
            samples.extend(self.select_samples(f, &it.bbox));
        }
        if samples.is_empty() {
            log::debug!("batch has no matchable windows; skipping step");
            return Ok(None);
        }
        self.step_on(&samples).map(Some)
    }
}
