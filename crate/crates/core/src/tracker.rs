//! Median Flow single-target tracker.
//!
//! Per-point flow is found by normalized cross-correlation of a small patch
//! over a bounded search window, both forwards and backwards. Points are
//! filtered by forward-backward error and by match similarity; the box moves
//! by the median displacement and scales by the median ratio of pairwise
//! point distances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::BoundingBox;
use crate::image::{GrayPlane, ImageFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Odd patch side, pixels.
    pub patch_size: usize,
    pub search_radius: i64,
    pub fb_threshold_px: f64,
    /// Forward matches scoring below this are treated as lost points.
    pub min_similarity: f64,
    /// Patches with a gray-level standard deviation below this carry no
    /// texture and do not vote.
    pub min_texture_std: f64,
    pub min_points: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            grid_rows: 10,
            grid_cols: 10,
            patch_size: 7,
            search_radius: 10,
            fb_threshold_px: 10.0,
            min_similarity: 0.5,
            min_texture_std: 1.0,
            min_points: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrackerError {
    #[error("bbox too small to track")]
    BoxTooSmall,
    #[error("bbox outside frame")]
    BoxOutsideFrame,
    #[error("tracker is not active")]
    Inactive,
    #[error("frame size {got:?} differs from tracked frames {expected:?}")]
    DimensionMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("invalid tracker config: {0}")]
    Config(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointTrack {
    pub origin: (f64, f64),
    pub forward_disp: (f64, f64),
    pub backward_disp: (f64, f64),
    pub fb_error: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackOutcome {
    Tracking,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerUpdate {
    pub outcome: TrackOutcome,
    pub bbox: Option<BoundingBox>,
    pub median_fb_error: f64,
    /// Points that survived filtering and voted.
    pub kept_points: usize,
    pub translation: (f64, f64),
    pub scale: f64,
}

impl TrackerUpdate {
    fn failed(median_fb_error: f64) -> Self {
        Self {
            outcome: TrackOutcome::Failed,
            bbox: None,
            median_fb_error,
            kept_points: 0,
            translation: (0.0, 0.0),
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrackerState {
    pub active: bool,
    pub bbox: BoundingBox,
    pub points: Vec<PointTrack>,
    pub last_frame: GrayPlane,
    pub fb_threshold_px: f64,
    pub grid_size: (usize, usize),
    pub config: TrackerConfig,
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if self.patch_size % 2 == 0 || self.patch_size < 3 {
            return Err(TrackerError::Config("patch_size must be odd and >= 3"));
        }
        if self.grid_rows < 2 || self.grid_cols < 2 {
            return Err(TrackerError::Config("grid must be at least 2x2"));
        }
        if self.search_radius < 1 {
            return Err(TrackerError::Config("search_radius must be >= 1"));
        }
        if !(self.fb_threshold_px > 0.0) {
            return Err(TrackerError::Config("fb_threshold_px must be positive"));
        }
        Ok(())
    }
}

/// Euclidean norm of the round trip `forward + backward`.
pub fn forward_backward_error(
    _origin: (f64, f64),
    forward_disp: (f64, f64),
    backward_disp: (f64, f64),
) -> f64 {
    let dx = forward_disp.0 + backward_disp.0;
    let dy = forward_disp.1 + backward_disp.1;
    (dx * dx + dy * dy).sqrt()
}

/// Points per axis for a box side: at most `grid`, at least two, and no
/// closer than two pixels apart.
fn points_per_axis(side: f64, grid: usize) -> Option<usize> {
    let n = grid.min((side / 2.0).floor().max(0.0) as usize);
    (n >= 2).then_some(n)
}

fn grid_points(bbox: &BoundingBox, grid: (usize, usize)) -> Result<(Vec<(f64, f64)>, (usize, usize)), TrackerError> {
    let rows = points_per_axis(bbox.height(), grid.0).ok_or(TrackerError::BoxTooSmall)?;
    let cols = points_per_axis(bbox.width(), grid.1).ok_or(TrackerError::BoxTooSmall)?;
    let mut pts = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let y = bbox.y0 + (r + 1) as f64 * bbox.height() / (rows + 1) as f64;
        for c in 0..cols {
            let x = bbox.x0 + (c + 1) as f64 * bbox.width() / (cols + 1) as f64;
            pts.push((x, y));
        }
    }
    Ok((pts, (rows, cols)))
}

fn fresh_tracks(pts: Vec<(f64, f64)>) -> Vec<PointTrack> {
    pts.into_iter()
        .map(|origin| PointTrack {
            origin,
            forward_disp: (0.0, 0.0),
            backward_disp: (0.0, 0.0),
            fb_error: 0.0,
            similarity: 1.0,
        })
        .collect()
}

pub fn init_tracker(
    frame: &ImageFrame,
    bbox: BoundingBox,
    config: &TrackerConfig,
) -> Result<TrackerState, TrackerError> {
    config.validate()?;
    let (w, h) = (frame.width as f64, frame.height as f64);
    if !bbox.is_valid() || bbox.x0 < 0.0 || bbox.y0 < 0.0 || bbox.x1 > w || bbox.y1 > h {
        return Err(TrackerError::BoxOutsideFrame);
    }
    let (pts, grid) = grid_points(&bbox, (config.grid_rows, config.grid_cols))?;
    Ok(TrackerState {
        active: true,
        bbox,
        points: fresh_tracks(pts),
        last_frame: frame.gray(),
        fb_threshold_px: config.fb_threshold_px,
        grid_size: grid,
        config: config.clone(),
    })
}

struct Patch {
    /// Mean-subtracted values.
    values: Vec<f64>,
    norm: f64,
    std: f64,
}

fn patch_at(img: &GrayPlane, cx: i64, cy: i64, half: i64) -> Patch {
    let mut values = Vec::with_capacity(((2 * half + 1) * (2 * half + 1)) as usize);
    for dy in -half..=half {
        for dx in -half..=half {
            values.push(img.at(cx + dx, cy + dy) as f64);
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= mean);
    let ss: f64 = values.iter().map(|v| v * v).sum();
    Patch {
        std: (ss / values.len() as f64).sqrt(),
        norm: ss.sqrt(),
        values,
    }
}

fn ncc(t: &Patch, img: &GrayPlane, cx: i64, cy: i64, half: i64) -> f64 {
    let n = t.values.len() as f64;
    let (mut s, mut ss, mut dot) = (0.0, 0.0, 0.0);
    let mut k = 0;
    for dy in -half..=half {
        for dx in -half..=half {
            let v = img.at(cx + dx, cy + dy) as f64;
            s += v;
            ss += v * v;
            dot += t.values[k] * v;
            k += 1;
        }
    }
    let var = (ss - s * s / n).max(0.0);
    if var <= 1e-12 || t.norm <= 1e-12 {
        return 0.0;
    }
    (dot / (t.norm * var.sqrt())).clamp(-1.0, 1.0)
}

struct Match {
    disp: (f64, f64),
    score: f64,
    textured: bool,
}

/// Best match of the patch around integer pixel `p` of `from` inside `to`.
fn match_point(from: &GrayPlane, to: &GrayPlane, p: (i64, i64), cfg: &TrackerConfig) -> Match {
    let half = (cfg.patch_size / 2) as i64;
    let r = cfg.search_radius;
    let t = patch_at(from, p.0, p.1, half);
    if t.std < cfg.min_texture_std {
        return Match {
            disp: (0.0, 0.0),
            score: 0.0,
            textured: false,
        };
    }
    let side = (2 * r + 1) as usize;
    let mut scores = vec![f64::NEG_INFINITY; side * side];
    let (mut best, mut bx, mut by) = (f64::NEG_INFINITY, 0i64, 0i64);
    for dy in -r..=r {
        for dx in -r..=r {
            let s = ncc(&t, to, p.0 + dx, p.1 + dy, half);
            scores[((dy + r) as usize) * side + (dx + r) as usize] = s;
            let closer = dx * dx + dy * dy < bx * bx + by * by;
            if s > best + 1e-9 || ((s - best).abs() <= 1e-9 && closer) {
                best = s;
                bx = dx;
                by = dy;
            }
        }
    }
    let at = |dx: i64, dy: i64| scores[((dy + r) as usize) * side + (dx + r) as usize];
    let refine = |lo: f64, mid: f64, hi: f64| {
        let denom = lo - 2.0 * mid + hi;
        if denom.abs() < 1e-12 {
            0.0
        } else {
            (0.5 * (lo - hi) / denom).clamp(-0.5, 0.5)
        }
    };
    let (mut fx, mut fy) = (bx as f64, by as f64);
    // an exact match sits on the integer grid
    if best < 1.0 - 1e-9 {
        if bx > -r && bx < r {
            fx += refine(at(bx - 1, by), best, at(bx + 1, by));
        }
        if by > -r && by < r {
            fy += refine(at(bx, by - 1), best, at(bx, by + 1));
        }
    }
    Match {
        disp: (fx, fy),
        score: best,
        textured: true,
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl TrackerState {
    pub fn deactivate(&mut self) {
        self.active = false;
        self.points.clear();
    }
}

/// Advances the tracker to `next_frame`. A failed update leaves the state
/// inactive.
pub fn update_tracker(
    state: &mut TrackerState,
    next_frame: &ImageFrame,
) -> Result<TrackerUpdate, TrackerError> {
    if !state.active {
        return Err(TrackerError::Inactive);
    }
    let expected = (state.last_frame.width, state.last_frame.height);
    if (next_frame.width, next_frame.height) != expected {
        return Err(TrackerError::DimensionMismatch {
            expected,
            got: (next_frame.width, next_frame.height),
        });
    }
    let cfg = state.config.clone();
    let next = next_frame.gray();
    let prev = &state.last_frame;

    let measured: Vec<Option<PointTrack>> = state
        .points
        .par_iter()
        .map(|pt| {
            let p = (pt.origin.0.round() as i64, pt.origin.1.round() as i64);
            let fwd = match_point(prev, &next, p, &cfg);
            if !fwd.textured {
                return None;
            }
            let q = (p.0 as f64 + fwd.disp.0, p.1 as f64 + fwd.disp.1);
            let qi = (q.0.round() as i64, q.1.round() as i64);
            let bwd = match_point(&next, prev, qi, &cfg);
            let back = (qi.0 as f64 + bwd.disp.0 - q.0, qi.1 as f64 + bwd.disp.1 - q.1);
            let lost = !bwd.textured || fwd.score < cfg.min_similarity;
            let origin = (p.0 as f64, p.1 as f64);
            Some(PointTrack {
                origin,
                forward_disp: fwd.disp,
                backward_disp: back,
                fb_error: if lost {
                    f64::INFINITY
                } else {
                    forward_backward_error(origin, fwd.disp, back)
                },
                similarity: fwd.score,
            })
        })
        .collect();
    let tracks: Vec<PointTrack> = measured.into_iter().flatten().collect();
    let mut fbs: Vec<f64> = tracks.iter().map(|t| t.fb_error).collect();
    let med_fb = median(&mut fbs);
    if tracks.len() < cfg.min_points || !(med_fb <= state.fb_threshold_px) {
        log::debug!("tracker failed: {} textured points, median fb {med_fb}", tracks.len());
        state.deactivate();
        return Ok(TrackerUpdate::failed(if tracks.is_empty() { f64::INFINITY } else { med_fb }));
    }
    let mut sims: Vec<f64> = tracks.iter().map(|t| t.similarity).collect();
    let med_sim = median(&mut sims);
    let kept: Vec<&PointTrack> = tracks
        .iter()
        .filter(|t| t.fb_error.is_finite() && t.fb_error <= med_fb && t.similarity >= med_sim)
        .collect();
    if kept.len() < cfg.min_points {
        state.deactivate();
        return Ok(TrackerUpdate::failed(med_fb));
    }
    let tx = median(&mut kept.iter().map(|t| t.forward_disp.0).collect::<Vec<_>>());
    let ty = median(&mut kept.iter().map(|t| t.forward_disp.1).collect::<Vec<_>>());
    let mut ratios = Vec::with_capacity(kept.len() * (kept.len() - 1) / 2);
    for (i, a) in kept.iter().enumerate() {
        for b in &kept[i + 1..] {
            let d0 = ((a.origin.0 - b.origin.0).powi(2) + (a.origin.1 - b.origin.1).powi(2)).sqrt();
            if d0 <= 0.0 {
                continue;
            }
            let (ax, ay) = (a.origin.0 + a.forward_disp.0, a.origin.1 + a.forward_disp.1);
            let (bx, by) = (b.origin.0 + b.forward_disp.0, b.origin.1 + b.forward_disp.1);
            ratios.push(((ax - bx).powi(2) + (ay - by).powi(2)).sqrt() / d0);
        }
    }
    let scale = if ratios.is_empty() { 1.0 } else { median(&mut ratios) };
    let b = state.bbox;
    let gx = (scale - 1.0) * b.width() / 2.0;
    let gy = (scale - 1.0) * b.height() / 2.0;
    let moved = BoundingBox::new(b.x0 + tx - gx, b.y0 + ty - gy, b.x1 + tx + gx, b.y1 + ty + gy);
    let (fw, fh) = (expected.0 as f64, expected.1 as f64);
    let clipped = match moved.clipped(fw, fh) {
        Some(c) if c.area() >= 0.5 * moved.area() => c,
        _ => {
            state.deactivate();
            return Ok(TrackerUpdate::failed(med_fb));
        }
    };
    let (pts, grid) = match grid_points(&clipped, (cfg.grid_rows, cfg.grid_cols)) {
        Ok(g) => g,
        Err(_) => {
            state.deactivate();
            return Ok(TrackerUpdate::failed(med_fb));
        }
    };
    let kept_points = kept.len();
    state.bbox = clipped;
    state.points = fresh_tracks(pts);
    state.grid_size = grid;
    state.last_frame = next;
    Ok(TrackerUpdate {
        outcome: TrackOutcome::Tracking,
        bbox: Some(clipped),
        median_fb_error: med_fb,
        kept_points,
        translation: (tx, ty),
        scale,
    })
}
