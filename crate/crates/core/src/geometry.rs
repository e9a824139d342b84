//! Axis-aligned boxes in continuous pixel space.
//!
//! A box `(x0, y0, x1, y1)` covers `[x0, x1] × [y0, y1]` and has area
//! `(x1 - x0) * (y1 - y0)`. Pixel `(i, j)` covers `[i, i + 1] × [j, j + 1]`,
//! so the tight box of a set of pixels is `(min_x, min_y, max_x + 1, max_y + 1)`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BoundingBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite())
            && self.x0 < self.x1
            && self.y0 < self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        (self.width()).max(0.0) * (self.height()).max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let b = BoundingBox::new(
            self.x0.max(other.x0),
            self.y0.max(other.y0),
            self.x1.min(other.x1),
            self.y1.min(other.y1),
        );
        (b.x0 < b.x1 && b.y0 < b.y1).then_some(b)
    }

    /// Clip to `[0, w] × [0, h]`. Returns `None` when nothing remains.
    pub fn clipped(&self, w: f64, h: f64) -> Option<BoundingBox> {
        self.intersection(&BoundingBox::new(0.0, 0.0, w, h))
    }

    /// Apply `p -> p * scale + offset` to both corners.
    pub fn scaled_translated(&self, scale: f64, dx: f64, dy: f64) -> BoundingBox {
        BoundingBox::new(
            self.x0 * scale + dx,
            self.y0 * scale + dy,
            self.x1 * scale + dx,
            self.y1 * scale + dy,
        )
    }

    /// Horizontal reflection inside an image of width `w`.
    pub fn mirrored(&self, w: f64) -> BoundingBox {
        BoundingBox::new(w - self.x1, self.y0, w - self.x0, self.y1)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BoundingBox {
        self.scaled_translated(1.0, dx, dy)
    }
}

/// Intersection over union. Zero for disjoint interiors.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = match a.intersection(b) {
        Some(i) => i.area(),
        None => return 0.0,
    };
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}
