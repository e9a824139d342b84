//! Brute-force evaluators written straight from the definitions, sharing no
//! code with the library, and synthetic scenes. Also used by the acceptance
//! runner.
#![allow(dead_code)]

use rand::Rng;
use toot_core::geometry::BoundingBox;
use toot_core::image::ImageFrame;
use toot_core::synth::{generate_synthetic_sequence, SyntheticSceneSpec};

/// `P_i - P_0`; `p[0]` is `P_0`.
pub fn ctb(p: &[f64], i: usize) -> f64 {
    p[i] - p[0]
}

/// `P_{k-1} - P_{i-1}` where `k` is the next interaction after `i`, or
/// `n + 1` when there is none. `u[0]` is unused.
pub fn itb(p: &[f64], u: &[bool], i: usize) -> Option<f64> {
    if !u[i] {
        return None;
    }
    let n = p.len() - 1;
    let mut k = n + 1;
    for x in (i + 1)..=n {
        if u[x] {
            k = x;
            break;
        }
    }
    Some(p[k - 1] - p[i - 1])
}

pub fn mean_itb(p: &[f64], u: &[bool], i: usize, j: usize) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0usize;
    for x in i..=j {
        if let Some(v) = itb(p, u, x) {
            num += v;
            den += 1;
        }
    }
    (den > 0).then(|| num / den as f64)
}

/// Random `(P_0..P_n, u_0..u_n)` with `u_0 = false`. Half the traces are
/// quantized so repeated values and plateaus show up.
pub fn random_trace<R: Rng>(rng: &mut R) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(1..=60);
    let density: f64 = rng.random_range(0.0..1.0);
    let quantized = rng.random_bool(0.5);
    let mut p = Vec::with_capacity(n + 1);
    let mut u = vec![false];
    for _ in 0..=n {
        let v: f64 = rng.random_range(0.0..1.0);
        p.push(if quantized { (v * 20.0).floor() / 20.0 } else { v });
    }
    for _ in 0..n {
        u.push(rng.random_bool(density));
    }
    (p, u)
}

pub type Rect = [f64; 4];

pub fn area(r: &Rect) -> f64 {
    (r[2] - r[0]) * (r[3] - r[1])
}

pub fn overlap(a: &Rect, b: &Rect) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let i = w * h;
    if i == 0.0 {
        return 0.0;
    }
    i / (area(a) + area(b) - i)
}

#[derive(Debug, Clone)]
pub struct Img {
    pub gt: Vec<Rect>,
    /// `(box, confidence)`
    pub dets: Vec<(Rect, f64)>,
}

/// VOC-2007 AP: rank detections, match greedily against the best-overlapping
/// ground truth, then average the interpolated precision at 11 recalls.
pub fn ap_voc07(imgs: &[Img], thr: f64) -> f64 {
    let mut ranked: Vec<(usize, Rect, f64)> = Vec::new();
    for (i, im) in imgs.iter().enumerate() {
        for d in &im.dets {
            ranked.push((i, d.0, d.1));
        }
    }
    // insertion sort, stable, descending confidence
    for a in 1..ranked.len() {
        let mut b = a;
        while b > 0 && ranked[b - 1].2 < ranked[b].2 {
            ranked.swap(b - 1, b);
            b -= 1;
        }
    }
    let mut used: Vec<Vec<bool>> = imgs.iter().map(|im| vec![false; im.gt.len()]).collect();
    let mut tp_flags = Vec::new();
    for (i, r, _) in &ranked {
        let mut best = -1.0;
        let mut arg = None;
        for (g, gt) in imgs[*i].gt.iter().enumerate() {
            let o = overlap(r, gt);
            if o > best {
                best = o;
                arg = Some(g);
            }
        }
        let tp = match arg {
            Some(g) if best >= thr && !used[*i][g] => {
                used[*i][g] = true;
                true
            }
            _ => false,
        };
        tp_flags.push(tp);
    }
    let npos: usize = imgs.iter().map(|im| im.gt.len()).sum();
    if npos == 0 {
        return 0.0;
    }
    let mut rec = Vec::new();
    let mut prec = Vec::new();
    let (mut tp, mut fp) = (0.0, 0.0);
    for f in tp_flags {
        if f {
            tp += 1.0
        } else {
            fp += 1.0
        }
        rec.push(tp / npos as f64);
        prec.push(tp / (tp + fp));
    }
    let mut ap = 0.0;
    for k in 0..=10 {
        let t = k as f64 / 10.0;
        let mut m = 0.0f64;
        for (r, p) in rec.iter().zip(&prec) {
            if *r >= t && *p > m {
                m = *p;
            }
        }
        ap += m / 11.0;
    }
    ap
}

fn random_rect<R: Rng>(rng: &mut R) -> Rect {
    let x0 = rng.random_range(0..16) as f64;
    let y0 = rng.random_range(0..16) as f64;
    let w = rng.random_range(2..10) as f64;
    let h = rng.random_range(2..10) as f64;
    [x0, y0, x0 + w, y0 + h]
}

/// 1 to 3 images holding at most 6 boxes in total, on a coarse grid so exact
/// and near-threshold overlaps occur. Confidences are distinct.
pub fn random_eval<R: Rng>(rng: &mut R) -> Vec<Img> {
    let images = rng.random_range(1..=3);
    let total = rng.random_range(1..=6);
    let mut imgs: Vec<Img> = (0..images).map(|_| Img { gt: vec![], dets: vec![] }).collect();
    let mut confs: Vec<f64> = (1..=99).map(|c| c as f64 / 100.0).collect();
    for _ in 0..total {
        let im = rng.random_range(0..images);
        if rng.random_bool(0.45) {
            imgs[im].gt.push(random_rect(rng));
        } else {
            let c = confs.swap_remove(rng.random_range(0..confs.len()));
            // half of the detections are perturbed copies of a ground truth
            let r = match imgs[im].gt.len() {
                n if n > 0 && rng.random_bool(0.5) => {
                    let g = imgs[im].gt[rng.random_range(0..n)];
                    let d = rng.random_range(0..3) as f64;
                    [g[0] + d, g[1], g[2] + d, g[3]]
                }
                _ => random_rect(rng),
            };
            imgs[im].dets.push((r, c));
        }
    }
    imgs
}

pub const SIZE: u32 = 240;
pub const TARGET: f64 = 60.0;

fn background(x: f64, y: f64) -> [u8; 3] {
    let g = 110.0 + 35.0 * (x * 0.13).sin() * (y * 0.09).cos() + 25.0 * ((x * 0.031 - y * 0.047).sin());
    let g = g.clamp(0.0, 255.0) as u8;
    [g / 2 + 30, g, g / 3 + 50]
}

fn target(u: f64, v: f64) -> [u8; 3] {
    let g = 128.0 + 60.0 * (u * 0.29).sin() * (v * 0.23).cos() + 40.0 * ((u * 0.11 + v * 0.17).sin());
    let g = g.clamp(0.0, 255.0) as u8;
    [g, 255 - g / 2, g / 4 + 20]
}

/// Textured target of side `TARGET * scale` centred at `c`, optionally hidden
/// behind a flat grey occluder.
pub fn scene(c: (f64, f64), scale: f64, occluded: bool) -> (ImageFrame, BoundingBox) {
    let half = TARGET * scale / 2.0;
    let b = BoundingBox::new(c.0 - half, c.1 - half, c.0 + half, c.1 + half);
    let mut f = ImageFrame::filled(0, SIZE, SIZE, [0, 0, 0]);
    for y in 0..SIZE {
        for x in 0..SIZE {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let p = if b.contains_point(px, py) {
                if occluded {
                    [120, 120, 120]
                } else {
                    target((px - c.0) / scale, (py - c.1) / scale)
                }
            } else {
                background(px, py)
            };
            f.set_pixel(x, y, p);
        }
    }
    (f, b)
}

pub fn path(t: usize) -> (f64, f64) {
    let t = t as f64;
    let x = 70.0 + 2.0 * t + (3.0 * (t / 5.0).sin()).round();
    let y = 80.0 + t + (2.0 * (t / 3.0).cos()).round();
    (x, y)
}

/// First frame of the tiny scenario and its target box.
pub fn single_frame() -> (ImageFrame, BoundingBox) {
    let path = format!("{}/../../scenarios/tiny/train.toml", env!("CARGO_MANIFEST_DIR"));
    let mut spec = SyntheticSceneSpec::from_toml(&std::fs::read_to_string(path).unwrap()).unwrap();
    spec.frame_count = 1;
    spec.presence_segments = vec![[0, 1]];
    let seq = generate_synthetic_sequence(&spec).unwrap();
    let f = seq.frames.into_iter().next().unwrap();
    (f.image, f.annotation.target_box().unwrap())
}
