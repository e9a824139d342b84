//! Time-ordered annotated frame sequences and their on-disk layout.
//!
//! A sequence directory contains:
//!
//! * `sequence.toml`: name, phase, frame period and frame count;
//! * `frames/NNNNNN.png`: lossless RGB frames named by zero-padded index;
//! * `annotations.txt`: one record per frame,
//!   `index present cx cy x0 y0 x1 y1`, space separated, `-` for absent
//!   fields, `present` as `0`/`1`. Lines starting with `#` are comments.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::BoundingBox;
use crate::image::ImageFrame;

pub const ANNOTATION_HEADER: &str = "# index present cx cy x0 y0 x1 y1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub target_present: bool,
    pub center: Option<(f64, f64)>,
    pub bbox: Option<BoundingBox>,
}

impl FrameAnnotation {
    pub const ABSENT: FrameAnnotation = FrameAnnotation {
        target_present: false,
        center: None,
        bbox: None,
    };

    pub fn present(center: (f64, f64), bbox: BoundingBox) -> Self {
        Self {
            target_present: true,
            center: Some(center),
            bbox: Some(bbox),
        }
    }

    pub fn is_consistent(&self) -> bool {
        match (self.target_present, self.center, self.bbox) {
            (true, Some(_), Some(_)) | (false, None, None) => true,
            _ => false,
        }
    }

    /// Box of a present target.
    pub fn target_box(&self) -> Option<BoundingBox> {
        if self.target_present {
            self.bbox
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame {
    pub image: ImageFrame,
    pub annotation: FrameAnnotation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToOTSequence {
    pub name: String,
    pub phase: Phase,
    pub frame_period_s: f64,
    pub frames: Vec<AnnotatedFrame>,
}

impl ToOTSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Side length of the (square) frames.
    pub fn frame_size(&self) -> Option<u32> {
        self.frames.first().map(|f| f.image.width)
    }

    pub fn positive_count(&self) -> usize {
        self.frames
            .iter()
            .filter(|f| f.annotation.target_present)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub frame: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.frame {
            Some(i) => write!(f, "frame {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Every broken invariant, in frame order. Empty means the sequence is valid.
pub fn validate_sequence(seq: &ToOTSequence) -> Vec<Violation> {
    let mut out = Vec::new();
    let seq_level = |m: &str| Violation {
        frame: None,
        message: m.to_string(),
    };
    if !(seq.frame_period_s > 0.0 && seq.frame_period_s.is_finite()) {
        out.push(seq_level("frame period must be positive"));
    }
    let dims = seq.frames.first().map(|f| (f.image.width, f.image.height));
    let mut inhomogeneous = false;
    for (pos, f) in seq.frames.iter().enumerate() {
        let at = |m: &str| Violation {
            frame: Some(f.image.index),
            message: m.to_string(),
        };
        if f.image.index != pos {
            out.push(at("non-contiguous frame indices"));
        }
        if f.image.width == 0 || f.image.height == 0 {
            out.push(at("empty frame"));
        }
        if !f.image.is_square() {
            out.push(at("frame is not square"));
        }
        if !f.image.buffer_ok() {
            out.push(at("pixel buffer length does not match dimensions"));
        }
        if Some((f.image.width, f.image.height)) != dims {
            inhomogeneous = true;
        }
        let a = &f.annotation;
        if !a.is_consistent() {
            out.push(at("inconsistent annotation"));
        } else if let (Some((cx, cy)), Some(b)) = (a.center, a.bbox) {
            if !b.is_valid() {
                out.push(at("invalid bounding box"));
            } else if !b.contains_point(cx, cy) {
                out.push(at("center outside bbox"));
            }
        }
    }
    if inhomogeneous {
        out.push(seq_level("inhomogeneous dimensions"));
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum SequenceError {
    #[error("missing frame {0}")]
    MissingFrame(usize),
    #[error("non-contiguous frame indices (expected {expected}, found {found})")]
    NonContiguous { expected: usize, found: usize },
    #[error("malformed annotation record on line {line}: {msg}")]
    MalformedAnnotation { line: usize, msg: String },
    #[error("inconsistent annotation for frame {0}")]
    InconsistentAnnotation(usize),
    #[error("dimension mismatch at frame {index}: {width}x{height}")]
    DimensionMismatch { index: usize, width: u32, height: u32 },
    #[error("annotation count {annotations} does not match frame count {frames}")]
    CountMismatch { annotations: usize, frames: usize },
    #[error("bad metadata: {0}")]
    Metadata(String),
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    name: String,
    phase: Phase,
    frame_period_s: f64,
    frame_count: usize,
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

pub fn annotation_record(index: usize, a: &FrameAnnotation) -> String {
    let (cx, cy) = a.center.map_or((None, None), |(x, y)| (Some(x), Some(y)));
    let b = a.bbox;
    format!(
        "{} {} {} {} {} {} {} {}",
        index,
        a.target_present as u8,
        fmt_opt(cx),
        fmt_opt(cy),
        fmt_opt(b.map(|b| b.x0)),
        fmt_opt(b.map(|b| b.y0)),
        fmt_opt(b.map(|b| b.x1)),
        fmt_opt(b.map(|b| b.y1)),
    )
}

/// Parses one record into `(index, annotation)`; the consistency check is the caller's.
pub fn parse_annotation_record(
    line_no: usize,
    line: &str,
) -> Result<(usize, FrameAnnotation), SequenceError> {
    let bad = |msg: &str| SequenceError::MalformedAnnotation {
        line: line_no,
        msg: msg.to_string(),
    };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 8 {
        return Err(bad("expected 8 fields"));
    }
    let index: usize = fields[0].parse().map_err(|_| bad("bad index"))?;
    let present = match fields[1] {
        "1" => true,
        "0" => false,
        _ => return Err(bad("present must be 0 or 1")),
    };
    let mut vals = [None; 6];
    for (slot, f) in vals.iter_mut().zip(&fields[2..]) {
        *slot = match *f {
            "-" => None,
            s => Some(s.parse::<f64>().map_err(|_| bad("bad number"))?),
        };
    }
    let center = match (vals[0], vals[1]) {
        (Some(x), Some(y)) => Some((x, y)),
        (None, None) => None,
        _ => return Err(bad("center needs both coordinates")),
    };
    let bbox = match vals[2..] {
        [Some(x0), Some(y0), Some(x1), Some(y1)] => Some(BoundingBox::new(x0, y0, x1, y1)),
        [None, None, None, None] => None,
        _ => return Err(bad("bbox needs all four coordinates")),
    };
    Ok((
        index,
        FrameAnnotation {
            target_present: present,
            center,
            bbox,
        },
    ))
}

pub fn save_sequence(seq: &ToOTSequence, dir: &Path) -> Result<(), SequenceError> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir)?;
    let meta = Metadata {
        name: seq.name.clone(),
        phase: seq.phase,
        frame_period_s: seq.frame_period_s,
        frame_count: seq.frames.len(),
    };
    let text = toml::to_string(&meta).map_err(|e| SequenceError::Metadata(e.to_string()))?;
    fs::write(dir.join("sequence.toml"), text)?;

    let mut ann = fs::File::create(dir.join("annotations.txt"))?;
    writeln!(ann, "{ANNOTATION_HEADER}")?;
    for f in &seq.frames {
        writeln!(ann, "{}", annotation_record(f.image.index, &f.annotation))?;
        let path = frames_dir.join(frame_file_name(f.image.index));
        f.image
            .to_rgb_image()
            .save(&path)
            .map_err(|source| SequenceError::Image { path, source })?;
    }
    Ok(())
}

pub fn load_sequence(dir: &Path) -> Result<ToOTSequence, SequenceError> {
    let meta_text = fs::read_to_string(dir.join("sequence.toml"))?;
    let meta: Metadata =
        toml::from_str(&meta_text).map_err(|e| SequenceError::Metadata(e.to_string()))?;

    let ann_text = fs::read_to_string(dir.join("annotations.txt"))?;
    let mut annotations = Vec::new();
    for (n, line) in ann_text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (index, a) = parse_annotation_record(n + 1, line)?;
        if index != annotations.len() {
            return Err(SequenceError::NonContiguous {
                expected: annotations.len(),
                found: index,
            });
        }
        if !a.is_consistent() {
            return Err(SequenceError::InconsistentAnnotation(index));
        }
        annotations.push(a);
    }

    let frames_dir = dir.join("frames");
    let mut on_disk: Vec<usize> = fs::read_dir(&frames_dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix(".png")?.parse::<usize>().ok()
        })
        .collect();
    on_disk.sort_unstable();
    for (expected, &found) in on_disk.iter().enumerate() {
        if expected != found {
            return Err(SequenceError::NonContiguous { expected, found });
        }
    }
    let expected = meta.frame_count.max(annotations.len());
    if on_disk.len() < expected {
        return Err(SequenceError::MissingFrame(on_disk.len()));
    }
    if annotations.len() != on_disk.len() || meta.frame_count != on_disk.len() {
        return Err(SequenceError::CountMismatch {
            annotations: annotations.len(),
            frames: on_disk.len(),
        });
    }

    let mut frames = Vec::with_capacity(annotations.len());
    let mut dims = None;
    for (index, annotation) in annotations.into_iter().enumerate() {
        let path = frames_dir.join(frame_file_name(index));
        let img = image::open(&path)
            .map_err(|source| SequenceError::Image {
                path: path.clone(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        if w != h || *dims.get_or_insert((w, h)) != (w, h) {
            return Err(SequenceError::DimensionMismatch {
                index,
                width: w,
                height: h,
            });
        }
        frames.push(AnnotatedFrame {
            image: ImageFrame::from_rgb_image(index, img),
            annotation,
        });
    }
    Ok(ToOTSequence {
        name: meta.name,
        phase: meta.phase,
        frame_period_s: meta.frame_period_s,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize, size: u32) -> ToOTSequence {
        let frames = (0..n)
            .map(|i| AnnotatedFrame {
                image: ImageFrame::filled(i, size, size, [i as u8, 10, 20]),
                annotation: if i % 2 == 0 {
                    FrameAnnotation::present((5.5, 5.0), BoundingBox::new(2.0, 2.0, 9.0, 8.0))
                } else {
                    FrameAnnotation::ABSENT
                },
            })
            .collect();
        ToOTSequence {
            name: "tiny".into(),
            phase: Phase::Train,
            frame_period_s: 1.0,
            frames,
        }
    }

    #[test]
    fn valid_sequence_has_no_violations() {
        assert!(validate_sequence(&tiny(3, 12)).is_empty());
    }

    #[test]
    fn center_outside_box_names_frame() {
        let mut s = tiny(6, 12);
        s.frames[4].annotation.center = Some((11.0, 11.0));
        let v = validate_sequence(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].frame, Some(4));
        assert_eq!(v[0].message, "center outside bbox");
    }

    #[test]
    fn mixed_dimensions_flagged() {
        let mut s = tiny(2, 12);
        s.frames[1].image = ImageFrame::filled(1, 6, 6, [0, 0, 0]);
        let v = validate_sequence(&s);
        assert!(v.iter().any(|v| v.message == "inhomogeneous dimensions"));
    }

    #[test]
    fn annotation_record_round_trip() {
        let a = FrameAnnotation::present((1.5, 2.25), BoundingBox::new(0.0, 1.0, 3.0, 4.5));
        let line = annotation_record(7, &a);
        assert_eq!(line, "7 1 1.5 2.25 0 1 3 4.5");
        assert_eq!(parse_annotation_record(1, &line).unwrap(), (7, a));
        let absent = annotation_record(2, &FrameAnnotation::ABSENT);
        assert_eq!(absent, "2 0 - - - - - -");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = tiny(3, 12);
        save_sequence(&s, dir.path()).unwrap();
        assert_eq!(load_sequence(dir.path()).unwrap(), s);
    }

    #[test]
    fn present_without_box_is_inconsistent() {
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&tiny(2, 12), dir.path()).unwrap();
        fs::write(
            dir.path().join("annotations.txt"),
            "0 1 5 5 - - - -\n1 0 - - - - - -\n",
        )
        .unwrap();
        let err = load_sequence(dir.path()).unwrap_err();
        assert!(matches!(err, SequenceError::InconsistentAnnotation(0)));
        assert!(err.to_string().contains("inconsistent annotation"));
    }

    #[test]
    fn gap_in_frame_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&tiny(4, 12), dir.path()).unwrap();
        fs::remove_file(dir.path().join("frames").join(frame_file_name(2))).unwrap();
        let err = load_sequence(dir.path()).unwrap_err();
        assert!(matches!(err, SequenceError::NonContiguous { .. }));
        assert!(err.to_string().contains("non-contiguous frame indices"));
    }

    #[test]
    fn mixed_frame_sizes_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&tiny(2, 12), dir.path()).unwrap();
        ImageFrame::filled(1, 6, 6, [0, 0, 0])
            .to_rgb_image()
            .save(dir.path().join("frames").join(frame_file_name(1)))
            .unwrap();
        assert!(matches!(
            load_sequence(dir.path()),
            Err(SequenceError::DimensionMismatch { index: 1, .. })
        ));
    }
}
