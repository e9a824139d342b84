//! Click to bounding box: distance channel, pluggable segmenter, and the
//! mask post-processing rules.
//!
//! Post-processing, in order:
//! 1. empty mask: a `fallback_box_px` square centered on the click, clipped to
//!    the frame;
//! 2. otherwise the component containing the click, or the one with the
//!    nearest pixel (ties: larger area, then lower label), as a tight box;
//! 3. a segmented box whose shorter side is below `thin_side_fraction` of the
//!    frame side grows by `enlarge_factor` about its center, clipped.
//!
//! The fallback square skips rule 3: it is already a fixed-size guess around
//! the click, not a segmentation that may have cut the object short.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::geometry::BoundingBox;
use crate::image::ImageFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Click {
    pub x: u32,
    pub y: u32,
}

impl Click {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Pixel containing the point `(x, y)`, clamped to a `w`×`h` frame.
    pub fn from_point(x: f64, y: f64, w: u32, h: u32) -> Self {
        Self {
            x: (x.floor().max(0.0) as u32).min(w.saturating_sub(1)),
            y: (y.floor().max(0.0) as u32).min(h.saturating_sub(1)),
        }
    }

    pub fn in_bounds(&self, w: u32, h: u32) -> bool {
        self.x < w && self.y < h
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnnotatorError {
    #[error("click ({x}, {y}) outside {w}x{h} frame")]
    ClickOutOfBounds { x: u32, y: u32, w: u32, h: u32 },
    #[error("invalid annotator config: {0}")]
    Config(&'static str),
}

fn check_click(frame: &ImageFrame, click: Click) -> Result<(), AnnotatorError> {
    if click.in_bounds(frame.width, frame.height) {
        Ok(())
    } else {
        Err(AnnotatorError::ClickOutOfBounds {
            x: click.x,
            y: click.y,
            w: frame.width,
            h: frame.height,
        })
    }
}

/// Euclidean distance to the click, truncated at `cap` pixels and divided by
/// `cap`: 0 at the click, 1 from the cap outwards.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceChannel {
    pub width: u32,
    pub height: u32,
    pub cap: f32,
    values: Vec<f32>,
}

impl DistanceChannel {
    /// Value at column `x`, row `y`.
    pub fn at(&self, x: u32, y: u32) -> f32 {
        self.values[(y * self.width + x) as usize]
    }

    pub const fn cap_value(&self) -> f32 {
        1.0
    }
}

pub fn distance_channel(
    frame: &ImageFrame,
    click: Click,
    cap: f32,
) -> Result<DistanceChannel, AnnotatorError> {
    check_click(frame, click)?;
    if !(cap > 0.0) {
        return Err(AnnotatorError::Config("distance cap must be positive"));
    }
    let mut values = Vec::with_capacity((frame.width * frame.height) as usize);
    for y in 0..frame.height {
        for x in 0..frame.width {
            let dx = x as f32 - click.x as f32;
            let dy = y as f32 - click.y as f32;
            values.push((dx * dx + dy * dy).sqrt().min(cap) / cap);
        }
    }
    Ok(DistanceChannel {
        width: frame.width,
        height: frame.height,
        cap,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// 1-based, in raster order of each component's first pixel.
    pub label: u32,
    pub area: usize,
    pub bbox: BoundingBox,
    /// Smallest distance from the query point to any pixel of the component.
    pub distance: f64,
}

impl SegmentationMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// 8-connected components, with each one's distance to `(qx, qy)`.
    pub fn components(&self, qx: f64, qy: f64) -> Vec<Component> {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut labels = vec![0u32; w * h];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..w * h {
            if !self.data[start] || labels[start] != 0 {
                continue;
            }
            let label = out.len() as u32 + 1;
            labels[start] = label;
            queue.push_back(start);
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            let mut area = 0;
            let mut best = f64::INFINITY;
            while let Some(p) = queue.pop_front() {
                let (x, y) = (p % w, p / w);
                area += 1;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                let d = ((x as f64 - qx).powi(2) + (y as f64 - qy).powi(2)).sqrt();
                best = best.min(d);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let q = ny as usize * w + nx as usize;
                        if self.data[q] && labels[q] == 0 {
                            labels[q] = label;
                            queue.push_back(q);
                        }
                    }
                }
            }
            out.push(Component {
                label,
                area,
                bbox: BoundingBox::new(x0 as f64, y0 as f64, x1 as f64 + 1.0, y1 as f64 + 1.0),
                distance: best,
            });
        }
        out
    }

    /// Grayscale PNG-ready buffer (255 = foreground).
    pub fn to_luma(&self) -> image::GrayImage {
        image::GrayImage::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|&v| if v { 255 } else { 0 }).collect(),
        )
        .expect("mask buffer matches dimensions")
    }
}

/// Anything that turns a positive click on a full-resolution frame into a mask.
pub trait Segmenter: Send + Sync {
    fn segment(&self, frame: &ImageFrame, click: Click) -> SegmentationMask;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionGrowingConfig {
    /// RGB distance accepted far from the click.
    pub color_threshold: f32,
    /// Box-blur radius applied before growing.
    pub smoothing_radius: u32,
    /// Distance-channel truncation, pixels.
    pub distance_cap_px: f32,
    /// Extra tolerance at the click: the threshold is scaled by
    /// `1 + guidance_gain * (1 - channel)`.
    pub guidance_gain: f32,
}

impl Default for RegionGrowingConfig {
    fn default() -> Self {
        Self {
            color_threshold: 45.0,
            smoothing_radius: 2,
            distance_cap_px: 64.0,
            guidance_gain: 0.6,
        }
    }
}

/// Seeded region growing over a box-blurred frame, 4-connected from the click.
/// A pixel joins when its color is within the distance-guided threshold of
/// the blurred color under the click.
#[derive(Debug, Clone, Default)]
pub struct RegionGrowingSegmenter {
    pub config: RegionGrowingConfig,
}

impl RegionGrowingSegmenter {
    pub fn new(config: RegionGrowingConfig) -> Self {
        Self { config }
    }
}

/// Separable box blur with edge clamping, per channel.
pub fn box_blur(frame: &ImageFrame, radius: u32) -> Vec<[f32; 3]> {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let src: Vec<[f32; 3]> = frame
        .pixels
        .chunks_exact(3)
        .map(|p| [p[0] as f32, p[1] as f32, p[2] as f32])
        .collect();
    if radius == 0 {
        return src;
    }
    let r = radius as i64;
    let n = (2 * r + 1) as f32;
    let pass = |input: &[[f32; 3]], horizontal: bool| -> Vec<[f32; 3]> {
        let mut out = vec![[0f32; 3]; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0f32; 3];
                for k in -r..=r {
                    let (sx, sy) = if horizontal {
                        ((x as i64 + k).clamp(0, w as i64 - 1) as usize, y)
                    } else {
                        (x, (y as i64 + k).clamp(0, h as i64 - 1) as usize)
                    };
                    let p = input[sy * w + sx];
                    acc[0] += p[0];
                    acc[1] += p[1];
                    acc[2] += p[2];
                }
                out[y * w + x] = [acc[0] / n, acc[1] / n, acc[2] / n];
            }
        }
        out
    };
    let tmp = pass(&src, true);
    pass(&tmp, false)
}

impl Segmenter for RegionGrowingSegmenter {
    fn segment(&self, frame: &ImageFrame, click: Click) -> SegmentationMask {
        let mut mask = SegmentationMask::empty(frame.width, frame.height);
        let Ok(channel) = distance_channel(frame, click, self.config.distance_cap_px) else {
            return mask;
        };
        let smooth = box_blur(frame, self.config.smoothing_radius);
        let w = frame.width as usize;
        let seed = smooth[click.y as usize * w + click.x as usize];
        let accept = |x: u32, y: u32| {
            let c = smooth[y as usize * w + x as usize];
            let d = ((c[0] - seed[0]).powi(2) + (c[1] - seed[1]).powi(2) + (c[2] - seed[2]).powi(2))
                .sqrt();
            let thr = self.config.color_threshold
                * (1.0 + self.config.guidance_gain * (1.0 - channel.at(x, y)));
            d <= thr
        };
        let mut queue = VecDeque::new();
        mask.set(click.x, click.y, true);
        queue.push_back((click.x, click.y));
        while let Some((x, y)) = queue.pop_front() {
            let neighbors = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (nx, ny) in neighbors {
                if nx < frame.width && ny < frame.height && !mask.get(nx, ny) && accept(nx, ny) {
                    mask.set(nx, ny, true);
                    queue.push_back((nx, ny));
                }
            }
        }
        mask
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotatorConfig {
    pub fallback_box_px: f64,
    pub thin_side_fraction: f64,
    pub enlarge_factor: f64,
    pub segmenter: RegionGrowingConfig,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        Self {
            fallback_box_px: 20.0,
            thin_side_fraction: 0.1,
            enlarge_factor: 1.2,
            segmenter: RegionGrowingConfig::default(),
        }
    }
}

impl AnnotatorConfig {
    pub fn validate(&self) -> Result<(), AnnotatorError> {
        if !(self.fallback_box_px >= 2.0) {
            return Err(AnnotatorError::Config("fallback_box_px must be >= 2"));
        }
        if !(self.thin_side_fraction > 0.0 && self.thin_side_fraction < 1.0) {
            return Err(AnnotatorError::Config("thin_side_fraction must be in (0, 1)"));
        }
        if !(self.enlarge_factor >= 1.0) {
            return Err(AnnotatorError::Config("enlarge_factor must be >= 1"));
        }
        Ok(())
    }
}

/// Which post-processing rules produced a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoxRule {
    Fallback,
    Selected,
    SelectedEnlarged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedBox {
    pub bbox: BoundingBox,
    pub rule: BoxRule,
}

/// Applies the three post-processing rules to `mask` for a click at `click`.
pub fn derive_box(
    mask: &SegmentationMask,
    click: Click,
    config: &AnnotatorConfig,
    frame_dims: (u32, u32),
) -> DerivedBox {
    let (fw, fh) = (frame_dims.0 as f64, frame_dims.1 as f64);
    let (cx, cy) = (click.x as f64, click.y as f64);
    let components = mask.components(cx, cy);
    let chosen = components.iter().min_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(b.area.cmp(&a.area))
            .then(a.label.cmp(&b.label))
    });
    let Some(component) = chosen else {
        let half = config.fallback_box_px / 2.0;
        let raw = BoundingBox::new(cx - half, cy - half, cx + half, cy + half);
        let bbox = raw.clipped(fw, fh).unwrap_or(raw);
        return DerivedBox {
            bbox,
            rule: BoxRule::Fallback,
        };
    };
    let bbox = component.bbox;
    let side = fw.min(fh);
    if bbox.width().min(bbox.height()) < config.thin_side_fraction * side {
        let (mx, my) = bbox.center();
        let grown = BoundingBox::from_center(
            mx,
            my,
            bbox.width() * config.enlarge_factor,
            bbox.height() * config.enlarge_factor,
        );
        DerivedBox {
            bbox: grown.clipped(fw, fh).unwrap_or(bbox),
            rule: BoxRule::SelectedEnlarged,
        }
    } else {
        DerivedBox {
            bbox,
            rule: BoxRule::Selected,
        }
    }
}

pub fn mask_to_bbox(
    mask: &SegmentationMask,
    click: Click,
    config: &AnnotatorConfig,
    frame_dims: (u32, u32),
) -> BoundingBox {
    derive_box(mask, click, config, frame_dims).bbox
}

/// Segmenter plus post-processing.
#[derive(Debug, Clone)]
pub struct ClickAnnotator<S = RegionGrowingSegmenter> {
    pub segmenter: S,
    pub config: AnnotatorConfig,
}

impl ClickAnnotator<RegionGrowingSegmenter> {
    pub fn reference(config: AnnotatorConfig) -> Result<Self, AnnotatorError> {
        config.validate()?;
        Ok(Self {
            segmenter: RegionGrowingSegmenter::new(config.segmenter.clone()),
            config,
        })
    }
}

impl<S: Segmenter> ClickAnnotator<S> {
    pub fn new(segmenter: S, config: AnnotatorConfig) -> Result<Self, AnnotatorError> {
        config.validate()?;
        Ok(Self { segmenter, config })
    }

    pub fn segment_from_click(
        &self,
        frame: &ImageFrame,
        click: Click,
    ) -> Result<SegmentationMask, AnnotatorError> {
        check_click(frame, click)?;
        Ok(self.segmenter.segment(frame, click))
    }

    /// Box for a click on a full-resolution frame.
    pub fn annotate(&self, frame: &ImageFrame, click: Click) -> Result<DerivedBox, AnnotatorError> {
        let mask = self.segment_from_click(frame, click)?;
        let derived = derive_box(&mask, click, &self.config, (frame.width, frame.height));
        if derived.rule == BoxRule::Fallback {
            log::info!(
                "empty mask at click ({}, {}) on frame {}; using fallback box",
                click.x,
                click.y,
                frame.index
            );
        }
        Ok(derived)
    }
}
