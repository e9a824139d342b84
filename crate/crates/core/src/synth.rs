//! Seeded synthetic scenes: a textured target moving along waypoints over a
//! value-noise background, with distractor shapes and per-frame sensor noise.
//!
//! Annotations come straight from the rasterized target mask, so the stored
//! box is always the tight box of the target pixels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::BoundingBox;
use crate::image::ImageFrame;
use crate::sequence::{AnnotatedFrame, FrameAnnotation, Phase, ToOTSequence};

pub const MIN_TARGET_SIZE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    /// Wide body with a narrower cabin on top.
    Compound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub shape: ShapeKind,
    /// Width of the target at the first and last frame; interpolated linearly.
    pub size: [f64; 2],
    /// Width over height.
    #[serde(default = "one")]
    pub aspect: f64,
    pub primary: [u8; 3],
    pub secondary: [u8; 3],
    /// Diagonal stripe period in pixels; 0 disables the texture.
    #[serde(default)]
    pub stripe_period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    /// Target centers visited in order, cycling back to the first.
    pub waypoints: Vec<[f64; 2]>,
    /// Largest per-frame step in pixels.
    pub max_displacement: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClutterStyle {
    /// Random hues.
    Random,
    /// Random hues, with every third distractor close to the target's color.
    Similar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterSpec {
    pub count: usize,
    pub style: ClutterStyle,
    #[serde(default = "default_clutter_size")]
    pub size: [f64; 2],
    /// Largest per-frame distractor drift in pixels.
    #[serde(default)]
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub colors: [[u8; 3]; 2],
    /// Lattice spacing of the coarsest noise octave, pixels.
    pub scale: f64,
    pub octaves: u32,
    /// Amplitude of uniform per-pixel sensor noise.
    #[serde(default)]
    pub sensor_noise: f64,
}

fn one() -> f64 {
    1.0
}

fn default_clutter_size() -> [f64; 2] {
    [16.0, 48.0]
}

fn default_period() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub name: String,
    pub phase: Phase,
    pub seed: u64,
    pub frame_count: usize,
    #[serde(default = "default_image_size")]
    pub image_size: u32,
    #[serde(default = "default_period")]
    pub frame_period_s: f64,
    /// Half-open `[start, end)` frame ranges in which the target is visible.
    pub presence_segments: Vec<[usize; 2]>,
    pub target: TargetSpec,
    pub motion: MotionSpec,
    pub clutter: ClutterSpec,
    pub background: BackgroundSpec,
}

fn default_image_size() -> u32 {
    360
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid scene spec field `{field}`: {msg}")]
pub struct SpecError {
    pub field: &'static str,
    pub msg: String,
}

fn spec_err(field: &'static str, msg: impl Into<String>) -> SpecError {
    SpecError {
        field,
        msg: msg.into(),
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        if self.frame_count == 0 {
            return Err(spec_err("frame_count", "must be positive"));
        }
        if self.image_size < 16 {
            return Err(spec_err("image_size", "must be at least 16"));
        }
        if !(self.frame_period_s > 0.0) {
            return Err(spec_err("frame_period_s", "must be positive"));
        }
        for seg in &self.presence_segments {
            if seg[0] >= seg[1] || seg[1] > self.frame_count {
                return Err(spec_err(
                    "presence_segments",
                    format!("{:?} not within [0, {})", seg, self.frame_count),
                ));
            }
        }
        let t = &self.target;
        if t.size.iter().any(|&s| !(s >= MIN_TARGET_SIZE)) {
            return Err(spec_err("target.size", "target must be at least 8 px"));
        }
        if !(t.aspect > 0.0) || !t.aspect.is_finite() {
            return Err(spec_err("target.aspect", "must be positive"));
        }
        if t.size.iter().any(|&s| s.max(s / t.aspect) >= self.image_size as f64 - 2.0) {
            return Err(spec_err("target.size", "target does not fit in the frame"));
        }
        if t.stripe_period < 0.0 {
            return Err(spec_err("target.stripe_period", "must be non-negative"));
        }
        if self.motion.waypoints.is_empty() {
            return Err(spec_err("motion.waypoints", "need at least one waypoint"));
        }
        if !(self.motion.max_displacement >= 0.0) {
            return Err(spec_err("motion.max_displacement", "must be non-negative"));
        }
        if self.clutter.size[0] <= 0.0 || self.clutter.size[0] > self.clutter.size[1] {
            return Err(spec_err("clutter.size", "need 0 < min <= max"));
        }
        if self.clutter.drift < 0.0 {
            return Err(spec_err("clutter.drift", "must be non-negative"));
        }
        if !(self.background.scale > 0.0) || self.background.octaves == 0 {
            return Err(spec_err("background", "scale and octaves must be positive"));
        }
        if self.background.sensor_noise < 0.0 {
            return Err(spec_err("background.sensor_noise", "must be non-negative"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SpecError> {
        let spec: Self = toml::from_str(text).map_err(|e| spec_err("toml", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn is_present(&self, frame: usize) -> bool {
        self.presence_segments
            .iter()
            .any(|s| frame >= s[0] && frame < s[1])
    }
}

/// Target centers for every frame.
pub fn waypoint_path(motion: &MotionSpec, frames: usize) -> Vec<(f64, f64)> {
    let mut pos = (motion.waypoints[0][0], motion.waypoints[0][1]);
    let mut next = 1 % motion.waypoints.len();
    let mut out = Vec::with_capacity(frames);
    for _ in 0..frames {
        out.push(pos);
        let mut budget = motion.max_displacement;
        // a single step may pass through several waypoints
        for _ in 0..motion.waypoints.len() {
            let goal = (motion.waypoints[next][0], motion.waypoints[next][1]);
            let (dx, dy) = (goal.0 - pos.0, goal.1 - pos.1);
            let dist = (dx * dx + dy * dy).sqrt();
            if dist <= budget {
                pos = goal;
                budget -= dist;
                next = (next + 1) % motion.waypoints.len();
                if budget <= 0.0 {
                    break;
                }
            } else {
                pos = (pos.0 + dx / dist * budget, pos.1 + dy / dist * budget);
                break;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    kind: ShapeKind,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl Shape {
    /// Whether the pixel whose center is `(x, y)` lies inside.
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.kind {
            ShapeKind::Ellipse => {
                let (a, b) = (self.w / 2.0, self.h / 2.0);
                (dx / a).powi(2) + (dy / b).powi(2) <= 1.0
            }
            ShapeKind::Rectangle => dx.abs() <= self.w / 2.0 && dy.abs() <= self.h / 2.0,
            ShapeKind::Compound => {
                let body = dx.abs() <= self.w / 2.0 && dy >= -0.2 * self.h && dy <= self.h / 2.0;
                let cabin =
                    dx.abs() <= 0.3 * self.w && dy >= -self.h / 2.0 && dy < -0.2 * self.h;
                body || cabin
            }
        }
    }

    fn pixel_range(&self, size: u32) -> (u32, u32, u32, u32) {
        let clamp = |v: f64| v.clamp(0.0, size as f64 - 1.0) as u32;
        (
            clamp((self.cx - self.w / 2.0 - 1.0).floor()),
            clamp((self.cy - self.h / 2.0 - 1.0).floor()),
            clamp((self.cx + self.w / 2.0 + 1.0).ceil()),
            clamp((self.cy + self.h / 2.0 + 1.0).ceil()),
        )
    }
}

struct Distractor {
    kind: ShapeKind,
    pos: (f64, f64),
    vel: (f64, f64),
    w: f64,
    h: f64,
    color: [u8; 3],
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| ((t + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

fn rgb_hue(c: [u8; 3]) -> f64 {
    let (r, g, b) = (c[0] as f64, c[1] as f64, c[2] as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d == 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    h * 60.0
}

/// Smooth multi-octave value noise in [0, 1].
fn value_noise(size: u32, scale: f64, octaves: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut acc = vec![0.0; (size * size) as usize];
    let mut amp = 1.0;
    let mut total = 0.0;
    let mut cell = scale;
    for _ in 0..octaves {
        let n = (size as f64 / cell).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        for y in 0..size {
            for x in 0..size {
                let fx = x as f64 / cell;
                let fy = y as f64 / cell;
                let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
                let (tx, ty) = (fx - ix as f64, fy - iy as f64);
                let s = |t: f64| t * t * (3.0 - 2.0 * t);
                let (sx, sy) = (s(tx), s(ty));
                let v00 = lattice[iy * n + ix];
                let v10 = lattice[iy * n + ix + 1];
                let v01 = lattice[(iy + 1) * n + ix];
                let v11 = lattice[(iy + 1) * n + ix + 1];
                let v = (v00 * (1.0 - sx) + v10 * sx) * (1.0 - sy) + (v01 * (1.0 - sx) + v11 * sx) * sy;
                acc[(y * size + x) as usize] += amp * v;
            }
        }
        total += amp;
        amp *= 0.5;
        cell = (cell / 2.0).max(1.0);
    }
    acc.iter_mut().for_each(|v| *v /= total);
    acc
}

fn target_dims(t: &TargetSpec, frame: usize, frames: usize) -> (f64, f64) {
    let f = if frames > 1 {
        frame as f64 / (frames - 1) as f64
    } else {
        0.0
    };
    let w = t.size[0] + (t.size[1] - t.size[0]) * f;
    (w, w / t.aspect)
}

/// Renders the scene described by `spec`. Identical specs give identical sequences.
pub fn generate_synthetic_sequence(spec: &SyntheticSceneSpec) -> Result<ToOTSequence, SpecError> {
    spec.validate()?;
    let size = spec.image_size;
    let sz = size as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let noise = value_noise(size, spec.background.scale, spec.background.octaves, &mut rng);
    let [c0, c1] = spec.background.colors;
    let background: Vec<[f64; 3]> = noise
        .iter()
        .map(|&t| {
            [
                c0[0] as f64 + (c1[0] as f64 - c0[0] as f64) * t,
                c0[1] as f64 + (c1[1] as f64 - c0[1] as f64) * t,
                c0[2] as f64 + (c1[2] as f64 - c0[2] as f64) * t,
            ]
        })
        .collect();

    let target_hue = rgb_hue(spec.target.primary);
    let mut distractors: Vec<Distractor> = (0..spec.clutter.count)
        .map(|i| {
            let [lo, hi] = spec.clutter.size;
            let w = rng.random_range(lo..=hi);
            let h = rng.random_range(lo..=hi);
            let kind = if rng.random_bool(0.5) {
                ShapeKind::Ellipse
            } else {
                ShapeKind::Rectangle
            };
            let hue = match spec.clutter.style {
                ClutterStyle::Similar if i % 3 == 0 => target_hue + rng.random_range(-25.0..25.0),
                _ => rng.random_range(0.0..360.0),
            };
            let color = hsv_to_rgb(hue, rng.random_range(0.4..0.9), rng.random_range(0.4..0.95));
            let pos = (rng.random_range(0.0..sz), rng.random_range(0.0..sz));
            let d = spec.clutter.drift;
            let vel = if d > 0.0 {
                (rng.random_range(-d..=d), rng.random_range(-d..=d))
            } else {
                (0.0, 0.0)
            };
            Distractor {
                kind,
                pos,
                vel,
                w,
                h,
                color,
            }
        })
        .collect();

    let path = waypoint_path(&spec.motion, spec.frame_count);
    let mut frames = Vec::with_capacity(spec.frame_count);
    let mut buf = vec![[0f64; 3]; (size * size) as usize];
    for (index, &(px, py)) in path.iter().enumerate() {
        buf.copy_from_slice(&background);

        for d in &distractors {
            let shape = Shape {
                kind: d.kind,
                cx: d.pos.0,
                cy: d.pos.1,
                w: d.w,
                h: d.h,
            };
            let (x0, y0, x1, y1) = shape.pixel_range(size);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                        let shade = 0.85 + 0.15 * ((x + y) % 7) as f64 / 6.0;
                        buf[(y * size + x) as usize] = d.color.map(|c| c as f64 * shade);
                    }
                }
            }
        }

        let mut annotation = FrameAnnotation::ABSENT;
        if spec.is_present(index) {
            let (w, h) = target_dims(&spec.target, index, spec.frame_count);
            // keep the whole target in view
            let cx = px.clamp(w / 2.0 + 1.0, sz - w / 2.0 - 1.0);
            let cy = py.clamp(h / 2.0 + 1.0, sz - h / 2.0 - 1.0);
            let shape = Shape {
                kind: spec.target.shape,
                cx,
                cy,
                w,
                h,
            };
            let (x0, y0, x1, y1) = shape.pixel_range(size);
            let mut tight: Option<(u32, u32, u32, u32)> = None;
            let period = spec.target.stripe_period;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                    if !shape.contains(fx, fy) {
                        continue;
                    }
                    let stripe = period > 0.0
                        && (((fx - cx) + (fy - cy)) / period).floor().rem_euclid(2.0) == 1.0;
                    let c = if stripe {
                        spec.target.secondary
                    } else {
                        spec.target.primary
                    };
                    buf[(y * size + x) as usize] = c.map(|v| v as f64);
                    tight = Some(match tight {
                        None => (x, y, x, y),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                    });
                }
            }
            if let Some((a, b, c, d)) = tight {
                let bbox = BoundingBox::new(a as f64, b as f64, c as f64 + 1.0, d as f64 + 1.0);
                annotation = FrameAnnotation::present((cx, cy), bbox);
            }
        }

        let amp = spec.background.sensor_noise;
        let mut pixels = Vec::with_capacity(buf.len() * 3);
        for px in &buf {
            for &c in px {
                let n = if amp > 0.0 {
                    rng.random_range(-amp..=amp)
                } else {
                    0.0
                };
                pixels.push((c + n).round().clamp(0.0, 255.0) as u8);
            }
        }
        frames.push(AnnotatedFrame {
            image: ImageFrame::new(index, size, size, pixels),
            annotation,
        });

        for d in &mut distractors {
            d.pos.0 += d.vel.0;
            d.pos.1 += d.vel.1;
            if d.pos.0 < 0.0 || d.pos.0 > sz {
                d.vel.0 = -d.vel.0;
            }
            if d.pos.1 < 0.0 || d.pos.1 > sz {
                d.vel.1 = -d.vel.1;
            }
        }
    }

    Ok(ToOTSequence {
        name: spec.name.clone(),
        phase: spec.phase,
        frame_period_s: spec.frame_period_s,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::validate_sequence;

    pub(crate) fn small_spec() -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            name: "small".into(),
            phase: Phase::Train,
            seed: 7,
            frame_count: 10,
            image_size: 160,
            frame_period_s: 1.0,
            presence_segments: vec![[0, 10]],
            target: TargetSpec {
                shape: ShapeKind::Ellipse,
                size: [24.0, 24.0],
                aspect: 1.0,
                primary: [200, 40, 40],
                secondary: [240, 200, 60],
                stripe_period: 5.0,
            },
            motion: MotionSpec {
                waypoints: vec![[100.0, 60.0], [140.0, 60.0]],
                max_displacement: 3.0,
            },
            clutter: ClutterSpec {
                count: 3,
                style: ClutterStyle::Random,
                size: [10.0, 20.0],
                drift: 0.5,
            },
            background: BackgroundSpec {
                colors: [[60, 90, 50], [120, 110, 80]],
                scale: 32.0,
                octaves: 3,
                sensor_noise: 3.0,
            },
        }
    }

    #[test]
    fn all_frames_present_when_segment_covers_sequence() {
        let seq = generate_synthetic_sequence(&small_spec()).unwrap();
        assert_eq!(seq.len(), 10);
        assert!(seq.frames.iter().all(|f| f.annotation.target_present));
        assert!(validate_sequence(&seq).is_empty());
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_synthetic_sequence(&small_spec()).unwrap();
        let b = generate_synthetic_sequence(&small_spec()).unwrap();
        assert_eq!(a, b);
        let mut other = small_spec();
        other.seed = 8;
        assert_ne!(generate_synthetic_sequence(&other).unwrap(), a);
    }

    #[test]
    fn horizontal_motion_hand_stepped() {
        // x = 100 + 3 * 5 at frame 5
        let seq = generate_synthetic_sequence(&small_spec()).unwrap();
        let b = seq.frames[5].annotation.bbox.unwrap();
        assert_eq!(b.center().0, 115.0);
        assert_eq!(seq.frames[5].annotation.center, Some((115.0, 60.0)));
    }

    #[test]
    fn absent_frames_are_unannotated() {
        let mut spec = small_spec();
        spec.presence_segments = vec![[2, 5]];
        let seq = generate_synthetic_sequence(&spec).unwrap();
        let present: Vec<bool> = seq.frames.iter().map(|f| f.annotation.target_present).collect();
        assert_eq!(
            present,
            vec![false, false, true, true, true, false, false, false, false, false]
        );
        assert!(validate_sequence(&seq).is_empty());
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let mut spec = small_spec();
        spec.presence_segments = vec![[5, 11]];
        assert_eq!(
            generate_synthetic_sequence(&spec).unwrap_err().field,
            "presence_segments"
        );
        let mut spec = small_spec();
        spec.target.size = [6.0, 24.0];
        assert_eq!(spec.validate().unwrap_err().field, "target.size");
        let mut spec = small_spec();
        spec.motion.max_displacement = -1.0;
        assert_eq!(spec.validate().unwrap_err().field, "motion.max_displacement");
    }

    #[test]
    fn spec_parses_from_toml() {
        let text = toml::to_string(&small_spec()).unwrap();
        assert_eq!(SyntheticSceneSpec::from_toml(&text).unwrap(), small_spec());
    }

    #[test]
    fn waypoints_cycle() {
        let m = MotionSpec {
            waypoints: vec![[0.0, 0.0], [4.0, 0.0]],
            max_displacement: 3.0,
        };
        let p = waypoint_path(&m, 4);
        assert_eq!(p, vec![(0.0, 0.0), (3.0, 0.0), (2.0, 0.0), (1.0, 0.0)]);
    }
}
