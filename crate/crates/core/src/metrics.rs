//! VOC-2007 style detection matching and 11-point interpolated average precision.

use std::io::{BufRead, Write};

use num_rational::Ratio;
use num_traits::CheckedAdd;
use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BoundingBox};

pub const DEFAULT_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
}

/// Ground truth and detections for one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalImage {
    pub image_id: usize,
    pub ground_truth: Vec<BoundingBox>,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub images: Vec<EvalImage>,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalSetError {
    #[error("duplicate image id {0}")]
    DuplicateImage(usize),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EvalSet {
    pub fn push(&mut self, image: EvalImage) {
        self.images.push(image);
    }

    pub fn total_ground_truth(&self) -> usize {
        self.images.iter().map(|i| i.ground_truth.len()).sum()
    }

    pub fn check_unique_ids(&self) -> Result<(), EvalSetError> {
        let mut seen = std::collections::BTreeSet::new();
        for img in &self.images {
            if !seen.insert(img.image_id) {
                return Err(EvalSetError::DuplicateImage(img.image_id));
            }
        }
        Ok(())
    }

    /// One JSON record per image.
    pub fn write_records<W: Write>(&self, mut out: W) -> Result<(), EvalSetError> {
        for img in &self.images {
            serde_json::to_writer(&mut out, img).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_records<R: BufRead>(input: R) -> Result<Self, EvalSetError> {
        let mut set = EvalSet::default();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let img = serde_json::from_str(&line).map_err(|source| EvalSetError::Parse {
                line: n + 1,
                source,
            })?;
            set.push(img);
        }
        set.check_unique_ids()?;
        Ok(set)
    }
}

/// A ranked detection after matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedDetection {
    pub confidence: f64,
    pub true_positive: bool,
}

/// Greedy VOC matching: detections are visited by descending confidence; each
/// takes the ground truth it overlaps most in its image, and counts as a true
/// positive only if that overlap reaches `iou_threshold` and the ground truth
/// has not been claimed yet.
///
/// Ties in confidence keep image order, then detection order.
pub fn match_detections(eval: &EvalSet, iou_threshold: f64) -> Vec<MatchedDetection> {
    let mut order: Vec<(usize, usize)> = eval
        .images
        .iter()
        .enumerate()
        .flat_map(|(i, img)| (0..img.detections.len()).map(move |d| (i, d)))
        .collect();
    order.sort_by(|a, b| {
        let ca = eval.images[a.0].detections[a.1].confidence;
        let cb = eval.images[b.0].detections[b.1].confidence;
        cb.total_cmp(&ca)
    });

    let mut claimed: Vec<Vec<bool>> = eval
        .images
        .iter()
        .map(|img| vec![false; img.ground_truth.len()])
        .collect();

    order
        .into_iter()
        .map(|(i, d)| {
            let img = &eval.images[i];
            let det = &img.detections[d];
            let best = img
                .ground_truth
                .iter()
                .enumerate()
                .map(|(g, gt)| (g, iou(&det.bbox, gt)))
                .fold(None::<(usize, f64)>, |acc, cur| match acc {
                    Some(a) if a.1 >= cur.1 => Some(a),
                    _ => Some(cur),
                });
            let true_positive = match best {
                Some((g, overlap)) if overlap >= iou_threshold && !claimed[i][g] => {
                    claimed[i][g] = true;
                    true
                }
                _ => false,
            };
            MatchedDetection {
                confidence: det.confidence,
                true_positive,
            }
        })
        .collect()
}

/// 11-point interpolated AP: the mean over recall thresholds `t = k / 10`,
/// `k = 0..=10`, of the best precision among points with recall `>= t`.
///
/// The mean is taken over exact fractions while they fit in 53 bits, so the
/// result is the double nearest the rational AP.
///
/// `matches` must already be ranked (as returned by [`match_detections`]).
/// Returns 0 when there is no ground truth.
pub fn average_precision_voc07(matches: &[MatchedDetection], total_gt: usize) -> f64 {
    if total_gt == 0 {
        log::debug!("average precision requested with no ground truth; defined as 0");
        return 0.0;
    }
    let mut tp = 0u64;
    // (true positives, rank) per PR point: precision tp/rank, recall tp/total_gt
    let mut points = Vec::with_capacity(matches.len());
    for (rank, m) in matches.iter().enumerate() {
        if m.true_positive {
            tp += 1;
        }
        points.push((tp, rank as u64 + 1));
    }
    let total = total_gt as u64;
    let best: Vec<(u64, u64)> = (0..=10u64)
        .map(|k| {
            points
                .iter()
                .filter(|(t, _)| 10 * t >= k * total)
                .fold((0, 1), |a, &b| if b.0 as u128 * a.1 as u128 > a.0 as u128 * b.1 as u128 { b } else { a })
        })
        .collect();
    let exact = best.iter().try_fold(Ratio::<u128>::from_integer(0), |acc, &(n, d)| {
        acc.checked_add(&Ratio::new(n as u128, d as u128))
    });
    match exact {
        Some(sum) if *sum.numer() < 1 << 53 && *sum.denom() < (1 << 53) / 11 => {
            *sum.numer() as f64 / (*sum.denom() * 11) as f64
        }
        _ => best.iter().map(|&(n, d)| n as f64 / d as f64).sum::<f64>() / 11.0,
    }
}

/// Match and score in one call.
pub fn evaluate(eval: &EvalSet, iou_threshold: f64) -> f64 {
    let matches = match_detections(eval, iou_threshold);
    average_precision_voc07(&matches, eval.total_ground_truth())
}
