//! Window features pooled from integral images.
//!
//! Fourteen per-pixel channels: eight hue bins weighted by chroma, a dark and
//! a bright lightness channel, and four gradient-orientation bins. Each
//! window pools every channel over its four quadrants and over a surrounding
//! ring.

use serde::{Deserialize, Serialize};

use crate::geometry::BoundingBox;
use crate::image::ImageFrame;

pub const CHANNELS: usize = 14;
pub const BLOCKS: usize = 5;
pub const FEATURE_DIM: usize = CHANNELS * BLOCKS;

const HUE_BINS: usize = 8;
const GRAD_BINS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    /// Window sides as fractions of the shorter frame side.
    pub scales: Vec<f64>,
    /// Width over height.
    pub aspects: Vec<f64>,
    /// Step between windows as a fraction of the window side.
    pub stride: f64,
    /// Outer edge of the context ring, relative to the window.
    pub surround: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            scales: vec![1.0 / 14.0, 1.0 / 10.0, 1.0 / 7.5, 1.0 / 5.5],
            aspects: vec![1.0],
            stride: 1.0 / 3.0,
            surround: 1.5,
        }
    }
}

fn positions(extent: u32, side: f64, step: f64) -> Vec<f64> {
    let last = extent as f64 - side;
    if last < 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut p = 0.0;
    while p <= last + 1e-9 {
        out.push(p.round());
        p += step;
    }
    if last - out.last().copied().unwrap_or(0.0) > 0.5 {
        out.push(last.round());
    }
    out
}

/// All windows fully inside a `w`×`h` frame, scale-major then row-major.
pub fn anchors(cfg: &AnchorConfig, w: u32, h: u32) -> Vec<BoundingBox> {
    let short = w.min(h) as f64;
    let mut out = Vec::new();
    for &s in &cfg.scales {
        for &a in &cfg.aspects {
            let side = (s * short).round().max(2.0);
            let (bw, bh) = ((side * a.sqrt()).round(), (side / a.sqrt()).round());
            let step = (cfg.stride * bw.min(bh)).max(1.0);
            for y in positions(h, bh, step) {
                for x in positions(w, bw, step) {
                    out.push(BoundingBox::new(x, y, x + bw, y + bh));
                }
            }
        }
    }
    out
}

/// Per-channel summed-area tables, channel-interleaved.
pub struct IntegralChannels {
    width: usize,
    height: usize,
    sums: Vec<f64>,
}

fn pixel_channels(frame: &ImageFrame) -> Vec<[f32; CHANNELS]> {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let gray = frame.gray();
    let mut out = vec![[0f32; CHANNELS]; w * h];
    for y in 0..h {
        for x in 0..w {
            let ch = &mut out[y * w + x];
            let p = frame.pixel(x as u32, y as u32);
            let (r, g, b) = (p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0);
            let max = r.max(g).max(b);
            let min = r.min(g).min(b);
            let c = max - min;
            if c > 0.0 {
                let hue = if max == r {
                    ((g - b) / c).rem_euclid(6.0)
                } else if max == g {
                    (b - r) / c + 2.0
                } else {
                    (r - g) / c + 4.0
                };
                let pos = hue / 6.0 * HUE_BINS as f32;
                let lo = (pos.floor() as usize) % HUE_BINS;
                let frac = pos - pos.floor();
                ch[lo] += c * (1.0 - frac);
                ch[(lo + 1) % HUE_BINS] += c * frac;
            }
            let l = gray.data[y * w + x] / 255.0;
            ch[HUE_BINS] = ((0.5 - l) * 2.0).max(0.0);
            ch[HUE_BINS + 1] = ((l - 0.5) * 2.0).max(0.0);

            let (xi, yi) = (x as i64, y as i64);
            let gx = (gray.at(xi + 1, yi - 1) + 2.0 * gray.at(xi + 1, yi) + gray.at(xi + 1, yi + 1))
                - (gray.at(xi - 1, yi - 1) + 2.0 * gray.at(xi - 1, yi) + gray.at(xi - 1, yi + 1));
            let gy = (gray.at(xi - 1, yi + 1) + 2.0 * gray.at(xi, yi + 1) + gray.at(xi + 1, yi + 1))
                - (gray.at(xi - 1, yi - 1) + 2.0 * gray.at(xi, yi - 1) + gray.at(xi + 1, yi - 1));
            let mag = (gx * gx + gy * gy).sqrt() / (4.0 * 255.0);
            if mag > 0.0 {
                let theta = gy.atan2(gx).rem_euclid(std::f32::consts::PI);
                let pos = theta / std::f32::consts::PI * GRAD_BINS as f32;
                let lo = (pos.floor() as usize) % GRAD_BINS;
                let frac = pos - pos.floor();
                ch[HUE_BINS + 2 + lo] += mag * (1.0 - frac);
                ch[HUE_BINS + 2 + (lo + 1) % GRAD_BINS] += mag * frac;
            }
        }
    }
    out
}

impl IntegralChannels {
    pub fn new(frame: &ImageFrame) -> Self {
        let (w, h) = (frame.width as usize, frame.height as usize);
        let px = pixel_channels(frame);
        let stride = (w + 1) * CHANNELS;
        let mut sums = vec![0f64; (h + 1) * stride];
        for y in 0..h {
            let mut row = [0f64; CHANNELS];
            for x in 0..w {
                let p = &px[y * w + x];
                for c in 0..CHANNELS {
                    row[c] += p[c] as f64;
                    sums[(y + 1) * stride + (x + 1) * CHANNELS + c] = sums[y * stride + (x + 1) * CHANNELS + c] + row[c];
                }
            }
        }
        Self { width: w, height: h, sums }
    }

    fn clamp_box(&self, b: &BoundingBox) -> (usize, usize, usize, usize) {
        let cx = |v: f64| v.round().clamp(0.0, self.width as f64) as usize;
        let cy = |v: f64| v.round().clamp(0.0, self.height as f64) as usize;
        (cx(b.x0), cy(b.y0), cx(b.x1), cy(b.y1))
    }

    /// Channel sums over `[x0, x1) × [y0, y1)`, integer pixel bounds.
    fn block(&self, x0: usize, y0: usize, x1: usize, y1: usize, out: &mut [f64; CHANNELS]) {
        let stride = (self.width + 1) * CHANNELS;
        let a = y0 * stride + x0 * CHANNELS;
        let b = y0 * stride + x1 * CHANNELS;
        let c = y1 * stride + x0 * CHANNELS;
        let d = y1 * stride + x1 * CHANNELS;
        for k in 0..CHANNELS {
            out[k] = self.sums[d + k] - self.sums[b + k] - self.sums[c + k] + self.sums[a + k];
        }
    }

    /// Feature vector of one window, appended to `out`.
    pub fn window_features(&self, b: &BoundingBox, surround: f64, out: &mut Vec<f32>) {
        let (x0, y0, x1, y1) = self.clamp_box(b);
        let (mx, my) = ((x0 + x1) / 2, (y0 + y1) / 2);
        let mut s = [0f64; CHANNELS];
        for (qx0, qy0, qx1, qy1) in [(x0, y0, mx, my), (mx, y0, x1, my), (x0, my, mx, y1), (mx, my, x1, y1)] {
            let area = ((qx1 - qx0) * (qy1 - qy0)) as f64;
            self.block(qx0, qy0, qx1, qy1, &mut s);
            for v in s {
                out.push(if area > 0.0 { (v / area) as f32 } else { 0.0 });
            }
        }
        let (cx, cy) = b.center();
        let outer = BoundingBox::from_center(cx, cy, b.width() * surround, b.height() * surround);
        let (ox0, oy0, ox1, oy1) = self.clamp_box(&outer);
        let mut inner = [0f64; CHANNELS];
        self.block(x0, y0, x1, y1, &mut inner);
        self.block(ox0, oy0, ox1, oy1, &mut s);
        let ring = ((ox1 - ox0) * (oy1 - oy0)) as f64 - ((x1 - x0) * (y1 - y0)) as f64;
        for k in 0..CHANNELS {
            out.push(if ring > 0.0 { ((s[k] - inner[k]) / ring) as f32 } else { 0.0 });
        }
    }
}

/// Windows of one frame with their feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    pub anchors: Vec<BoundingBox>,
    /// `anchors.len()` rows of `FEATURE_DIM` values.
    pub data: Vec<f32>,
}

impl FrameFeatures {
    pub fn extract(frame: &ImageFrame, cfg: &AnchorConfig) -> Self {
        let integral = IntegralChannels::new(frame);
        let anchors = anchors(cfg, frame.width, frame.height);
        let mut data = Vec::with_capacity(anchors.len() * FEATURE_DIM);
        for a in &anchors {
            integral.window_features(a, cfg.surround, &mut data);
        }
        Self { anchors, data }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_stay_inside() {
        let a = anchors(&AnchorConfig::default(), 360, 360);
        assert!(!a.is_empty());
        assert!(a.iter().all(|b| b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= 360.0 && b.y1 <= 360.0));
        // the last column reaches the right edge
        assert!(a.iter().any(|b| b.x1 == 360.0));
    }

    #[test]
    fn uniform_frame_has_constant_features() {
        let f = ImageFrame::filled(0, 64, 64, [200, 40, 40]);
        let feats = FrameFeatures::extract(&f, &AnchorConfig::default());
        let first = feats.row(0).to_vec();
        for i in 0..feats.len() {
            let r = feats.row(i);
            for k in 0..4 * CHANNELS {
                assert!((r[k] - first[k]).abs() < 1e-5);
            }
        }
        // saturated red falls into the first hue bin
        assert!(first[0] > 0.5);
        assert!(first[HUE_BINS + 2..CHANNELS].iter().all(|&g| g == 0.0));
    }
}
