//! Online mini-batches: raw frame, dynamically rescaled frame, and one
//! augmented copy of each.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{iou, BoundingBox};
use crate::image::ImageFrame;

/// Returns `(clamped, unclamped)` where the unclamped factor is
/// `10 * max(h_b, w_b) / w_i` and the clamped one is capped at 1.
pub fn dynamic_rescale_factor(bbox: &BoundingBox, image_width: u32) -> (f64, f64) {
    let raw = 10.0 * bbox.width().max(bbox.height()) / image_width as f64;
    (raw.min(1.0), raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleSpec {
    pub factor: f64,
    pub unclamped: f64,
    /// Canvas size, width then height.
    pub canvas_dims: (u32, u32),
    pub scaled_dims: (u32, u32),
    /// Top-left corner of the scaled frame on the canvas.
    pub placement: (u32, u32),
}

impl RescaleSpec {
    /// Maps a box from the original frame onto the canvas.
    pub fn map_box(&self, b: &BoundingBox) -> BoundingBox {
        let sx = self.scaled_dims.0 as f64 / self.canvas_dims.0 as f64;
        let sy = self.scaled_dims.1 as f64 / self.canvas_dims.1 as f64;
        let (ox, oy) = (self.placement.0 as f64, self.placement.1 as f64);
        let (cw, ch) = (self.canvas_dims.0 as f64, self.canvas_dims.1 as f64);
        BoundingBox::new(
            (b.x0 * sx + ox).clamp(0.0, cw),
            (b.y0 * sy + oy).clamp(0.0, ch),
            (b.x1 * sx + ox).clamp(0.0, cw),
            (b.y1 * sy + oy).clamp(0.0, ch),
        )
    }
}

/// Draws the placement of the scaled frame for `bbox` on a canvas the size
/// of the original frame.
pub fn plan_rescale<R: Rng>(frame_dims: (u32, u32), bbox: &BoundingBox, rng: &mut R) -> RescaleSpec {
    let (w, h) = frame_dims;
    let (factor, unclamped) = dynamic_rescale_factor(bbox, w);
    if unclamped > 1.0 {
        log::trace!("rescale factor {unclamped:.3} clamped to 1");
    }
    let sw = ((factor * w as f64).round() as u32).clamp(1, w);
    let sh = ((factor * h as f64).round() as u32).clamp(1, h);
    let ox = rng.random_range(0..=w - sw);
    let oy = rng.random_range(0..=h - sh);
    RescaleSpec {
        factor,
        unclamped,
        canvas_dims: (w, h),
        scaled_dims: (sw, sh),
        placement: (ox, oy),
    }
}

pub fn apply_rescale(frame: &ImageFrame, spec: &RescaleSpec, canvas_fill: [u8; 3]) -> ImageFrame {
    let mut canvas = ImageFrame::filled(frame.index, spec.canvas_dims.0, spec.canvas_dims.1, canvas_fill);
    let scaled = if spec.scaled_dims == (frame.width, frame.height) {
        frame.clone()
    } else {
        frame.resized(spec.scaled_dims.0, spec.scaled_dims.1)
    };
    canvas.paste(&scaled, spec.placement.0, spec.placement.1);
    canvas
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub crop_min_iou: f64,
    pub crop_attempts: usize,
    /// Smallest crop side as a fraction of the shorter frame side.
    pub crop_min_side: f64,
    pub mirror_prob: f64,
    /// Additive brightness range, gray levels.
    pub brightness_delta: f64,
    pub contrast_range: [f64; 2],
    pub saturation_range: [f64; 2],
    /// Hue rotation range, degrees.
    pub hue_delta_deg: f64,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            crop_min_iou: 0.25,
            crop_attempts: 50,
            crop_min_side: 0.1,
            mirror_prob: 0.5,
            brightness_delta: 24.0,
            contrast_range: [0.75, 1.25],
            saturation_range: [0.75, 1.25],
            hue_delta_deg: 9.0,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.crop_min_iou > 0.0 && self.crop_min_iou <= 1.0) {
            return Err("crop_min_iou must be in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.mirror_prob) {
            return Err("mirror_prob must be in [0, 1]".into());
        }
        if !(self.crop_min_side > 0.0 && self.crop_min_side <= 1.0) {
            return Err("crop_min_side must be in (0, 1]".into());
        }
        for (name, r) in [("contrast_range", self.contrast_range), ("saturation_range", self.saturation_range)] {
            if !(r[0] > 0.0 && r[0] <= r[1]) {
                return Err(format!("{name} must be a positive, ordered pair"));
            }
        }
        if self.brightness_delta < 0.0 || self.hue_delta_deg < 0.0 {
            return Err("jitter ranges must be non-negative".into());
        }
        Ok(())
    }
}

/// Square crop region and the box it yields once resized back to the frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropPlan {
    pub x: u32,
    pub y: u32,
    pub side: u32,
}

impl CropPlan {
    pub fn region(&self) -> BoundingBox {
        let (x, y, s) = (self.x as f64, self.y as f64, self.side as f64);
        BoundingBox::new(x, y, x + s, y + s)
    }

    /// Box inside the crop, rescaled to an output of `out` pixels per side.
    pub fn map_box(&self, b: &BoundingBox, out: (u32, u32)) -> Option<BoundingBox> {
        let inter = b.intersection(&self.region())?;
        let sx = out.0 as f64 / self.side as f64;
        let sy = out.1 as f64 / self.side as f64;
        let (x, y) = (self.x as f64, self.y as f64);
        let (ow, oh) = (out.0 as f64, out.1 as f64);
        Some(BoundingBox::new(
            ((inter.x0 - x) * sx).clamp(0.0, ow),
            ((inter.y0 - y) * sy).clamp(0.0, oh),
            ((inter.x1 - x) * sx).clamp(0.0, ow),
            ((inter.y1 - y) * sy).clamp(0.0, oh),
        ))
    }
}

pub fn sample_crop<R: Rng>(
    dims: (u32, u32),
    bbox: &BoundingBox,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Option<CropPlan> {
    let short = dims.0.min(dims.1);
    let area = bbox.area();
    // sides outside [sqrt(t*A), sqrt(A/t)] can never reach IoU t
    let lo = (cfg.crop_min_side * short as f64).max((cfg.crop_min_iou * area).sqrt());
    let hi = (area / cfg.crop_min_iou).sqrt().min(short as f64);
    let min_side = (lo.ceil() as u32).clamp(1, short);
    let max_side = (hi.floor() as u32).clamp(min_side, short);
    let (cx, cy) = bbox.center();
    let span = |c: f64, side: u32, extent: u32| {
        let lo = (c - side as f64).ceil().max(0.0) as u32;
        let hi = (c.floor().max(0.0) as u32).min(extent - side);
        (lo.min(hi), hi)
    };
    for _ in 0..cfg.crop_attempts {
        let side = rng.random_range(min_side..=max_side);
        let (xl, xh) = span(cx, side, dims.0);
        let (yl, yh) = span(cy, side, dims.1);
        let x = rng.random_range(xl..=xh);
        let y = rng.random_range(yl..=yh);
        let plan = CropPlan { x, y, side };
        let region = plan.region();
        if region.contains_point(cx, cy) && iou(&region, bbox) >= cfg.crop_min_iou {
            return Some(plan);
        }
    }
    None
}

fn rgb_to_hsv(p: [f64; 3]) -> [f64; 3] {
    let (r, g, b) = (p[0], p[1], p[2]);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let c = max - min;
    let h = if c <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / c).rem_euclid(6.0)
    } else if max == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    let s = if max > 0.0 { c / max } else { 0.0 };
    [h * 60.0, s, max]
}

fn hsv_to_rgb(p: [f64; 3]) -> [f64; 3] {
    let (h, s, v) = (p[0].rem_euclid(360.0) / 60.0, p[1], p[2]);
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_deg: f64,
}

impl Jitter {
    pub fn sample<R: Rng>(cfg: &AugmentationConfig, rng: &mut R) -> Self {
        let mut uniform = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        Self {
            brightness: uniform(-cfg.brightness_delta, cfg.brightness_delta),
            contrast: uniform(cfg.contrast_range[0], cfg.contrast_range[1]),
            saturation: uniform(cfg.saturation_range[0], cfg.saturation_range[1]),
            hue_deg: uniform(-cfg.hue_delta_deg, cfg.hue_delta_deg),
        }
    }

    pub fn apply(&self, frame: &ImageFrame) -> ImageFrame {
        let mut out = frame.clone();
        for px in out.pixels.chunks_exact_mut(3) {
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = ((px[k] as f64 + self.brightness - 128.0) * self.contrast + 128.0).clamp(0.0, 255.0);
            }
            let mut hsv = rgb_to_hsv(c);
            hsv[0] += self.hue_deg;
            hsv[1] = (hsv[1] * self.saturation).clamp(0.0, 1.0);
            let rgb = hsv_to_rgb(hsv);
            for k in 0..3 {
                px[k] = rgb[k].round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Raw,
    Rescaled,
    RawAugmented,
    RescaledAugmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub kind: ItemKind,
    pub image: ImageFrame,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub items: [BatchItem; 4],
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Every box is valid and inside its image.
    pub fn is_valid(&self) -> bool {
        self.items.iter().all(|it| {
            let b = it.bbox;
            b.is_valid()
                && b.x0 >= 0.0
                && b.y0 >= 0.0
                && b.x1 <= it.image.width as f64
                && b.y1 <= it.image.height as f64
        })
    }
}

/// Crop (when a valid one is found), mirror and jitter one item.
pub fn augment<R: Rng>(
    image: &ImageFrame,
    bbox: &BoundingBox,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> (ImageFrame, BoundingBox) {
    let dims = (image.width, image.height);
    let (mut img, mut b) = match sample_crop(dims, bbox, cfg, rng) {
        Some(plan) => {
            let mapped = plan.map_box(bbox, dims).expect("crop contains the box center");
            let cropped = image.crop(plan.x, plan.y, plan.side, plan.side).resized(dims.0, dims.1);
            (cropped, mapped)
        }
        None => {
            log::debug!("no valid crop after {} attempts; keeping full frame", cfg.crop_attempts);
            (image.clone(), *bbox)
        }
    };
    if rng.random_bool(cfg.mirror_prob) {
        img = img.mirrored();
        b = b.mirrored(dims.0 as f64);
    }
    let jitter = Jitter::sample(cfg, rng);
    (jitter.apply(&img), b)
}

/// Four training pairs for one annotated frame. `bbox` must lie inside the frame.
pub fn build_minibatch<R: Rng>(
    frame: &ImageFrame,
    bbox: &BoundingBox,
    cfg: &AugmentationConfig,
    canvas_fill: [u8; 3],
    rng: &mut R,
) -> MiniBatch {
    let spec = plan_rescale((frame.width, frame.height), bbox, rng);
    let rescaled = apply_rescale(frame, &spec, canvas_fill);
    let rescaled_box = spec.map_box(bbox);
    let (aug_raw, aug_raw_box) = augment(frame, bbox, cfg, rng);
    let (aug_res, aug_res_box) = augment(&rescaled, &rescaled_box, cfg, rng);
    MiniBatch {
        items: [
            BatchItem {
                kind: ItemKind::Raw,
                image: frame.clone(),
                bbox: *bbox,
            },
            BatchItem {
                kind: ItemKind::Rescaled,
                image: rescaled,
                bbox: rescaled_box,
            },
            BatchItem {
                kind: ItemKind::RawAugmented,
                image: aug_raw,
                bbox: aug_raw_box,
            },
            BatchItem {
                kind: ItemKind::RescaledAugmented,
                image: aug_res,
                bbox: aug_res_box,
            },
        ],
    }
}
