//! Plain-text annotation format. One file describes a dataset: a header
//! fixing the joint count and reference segments, then sample and clip
//! records. Layout, exactly:
//!
//! ```text
//! unipose-annotations v1
//! joints 14
//! torso 1 8            | torso none
//! head 0 1             | head none
//! limbs 2-3,3-4        | limbs none
//! sample <path> <x0> <y0> <x1> <y1>
//! kp <x> <y> <0|1>     (exactly `joints` lines)
//! clip <T>
//! frame <path> <x0> <y0> <x1> <y1>
//! kp ...               (joints lines, then the next frame)
//! ```
//!
//! Paths are single tokens relative to the annotation file's directory.
//! All numbers must be finite; visibility is 0 or 1.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::keypoints::Keypoints;

const MAGIC: &str = "unipose-annotations v1";

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// Image path as written in the file, relative to the dataset root.
    pub image: PathBuf,
    pub bbox: (f64, f64, f64, f64),
    pub keypoints: Keypoints,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub frames: Vec<SampleRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub joints: usize,
    pub torso: Option<(usize, usize)>,
    pub head: Option<(usize, usize)>,
    pub limbs: Vec<(usize, usize)>,
    pub samples: Vec<SampleRecord>,
    pub clips: Vec<ClipRecord>,
    /// Directory image paths resolve against; the annotation file's parent.
    pub root: PathBuf,
}

impl Dataset {
    pub fn new_human14(root: PathBuf) -> Self {
        use crate::keypoints::{HUMAN14_HEAD, HUMAN14_JOINTS, HUMAN14_LIMBS, HUMAN14_TORSO};
        Dataset {
            joints: HUMAN14_JOINTS,
            torso: Some(HUMAN14_TORSO),
            head: Some(HUMAN14_HEAD),
            limbs: HUMAN14_LIMBS.to_vec(),
            samples: Vec::new(),
            clips: Vec::new(),
            root,
        }
    }

    pub fn resolve(&self, record: &SampleRecord) -> PathBuf {
        self.root.join(&record.image)
    }

    /// Keypoints re-tagged with this dataset's reference segments.
    pub fn with_references(&self, kp: &Keypoints) -> Result<Keypoints> {
        Keypoints::with_segments(kp.points().to_vec(), self.torso, self.head, self.limbs.clone())
    }
}

fn fmt_segment(s: Option<(usize, usize)>) -> String {
    match s {
        Some((a, b)) => format!("{a} {b}"),
        None => "none".to_string(),
    }
}

fn fmt_record(out: &mut String, tag: &str, rec: &SampleRecord) {
    let (x0, y0, x1, y1) = rec.bbox;
    out.push_str(&format!("{tag} {} {x0} {y0} {x1} {y1}\n", rec.image.display()));
    for &(x, y, v) in rec.keypoints.points() {
        out.push_str(&format!("kp {x} {y} {}\n", v as u8));
    }
}

pub fn save_annotations(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("joints {}\n", dataset.joints));
    out.push_str(&format!("torso {}\n", fmt_segment(dataset.torso)));
    out.push_str(&format!("head {}\n", fmt_segment(dataset.head)));
    if dataset.limbs.is_empty() {
        out.push_str("limbs none\n");
    } else {
        let parts: Vec<String> =
            dataset.limbs.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        out.push_str(&format!("limbs {}\n", parts.join(",")));
    }
    for rec in &dataset.samples {
        fmt_record(&mut out, "sample", rec);
    }
    for clip in &dataset.clips {
        out.push_str(&format!("clip {}\n", clip.frames.len()));
        for f in &clip.frames {
            fmt_record(&mut out, "frame", f);
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Parser<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    record: usize,
}

fn err(record: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Annotation { record, field: field.to_string(), message: message.into() }
}

impl<'a> Parser<'a> {
    fn next_line(&mut self) -> Option<&'a str> {
        loop {
            match self.lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((_, l)) => return Some(l),
                None => return None,
            }
        }
    }

    fn expect_line(&mut self, field: &str) -> Result<&'a str> {
        self.next_line()
            .ok_or_else(|| err(self.record, field, "file ends before this field"))
    }

    fn finite(&self, field: &str, token: &str) -> Result<f64> {
        let v: f64 = token
            .parse()
            .map_err(|_| err(self.record, field, format!("{token:?} is not a number")))?;
        if !v.is_finite() {
            return Err(err(self.record, field, format!("{token:?} is not finite")));
        }
        Ok(v)
    }

    fn index(&self, field: &str, token: &str, joints: usize) -> Result<usize> {
        let i: usize = token
            .parse()
            .map_err(|_| err(self.record, field, format!("{token:?} is not a joint index")))?;
        if i >= joints {
            return Err(err(self.record, field, format!("joint index {i} out of 0..{joints}")));
        }
        Ok(i)
    }

    fn segment(&mut self, name: &'static str, joints: usize) -> Result<Option<(usize, usize)>> {
        let line = self.expect_line(name)?;
        let rest = line
            .strip_prefix(name)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| err(self.record, name, format!("expected a {name:?} line, got {line:?}")))?;
        if rest == "none" {
            return Ok(None);
        }
        let mut it = rest.split(' ');
        let a = self.index(name, it.next().unwrap_or(""), joints)?;
        let b = self.index(name, it.next().unwrap_or(""), joints)?;
        if it.next().is_some() {
            return Err(err(self.record, name, "trailing tokens"));
        }
        Ok(Some((a, b)))
    }

    fn record_body(
        &mut self,
        tag: &str,
        line: &str,
        dataset: &Dataset,
    ) -> Result<SampleRecord> {
        let rest = line
            .strip_prefix(tag)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| err(self.record, tag, format!("expected a {tag:?} line, got {line:?}")))?;
        let tokens: Vec<&str> = rest.split(' ').collect();
        if tokens.len() != 5 {
            return Err(err(
                self.record,
                tag,
                format!("expected <path> <x0> <y0> <x1> <y1>, got {rest:?}"),
            ));
        }
        let bbox = (
            self.finite("bbox.x0", tokens[1])?,
            self.finite("bbox.y0", tokens[2])?,
            self.finite("bbox.x1", tokens[3])?,
            self.finite("bbox.y1", tokens[4])?,
        );
        if bbox.0 > bbox.2 || bbox.1 > bbox.3 {
            return Err(err(self.record, "bbox", "min corner exceeds max corner"));
        }
        let mut points = Vec::with_capacity(dataset.joints);
        for j in 0..dataset.joints {
            let field = format!("kp[{j}]");
            let line = self.expect_line(&field)?;
            let rest = line.strip_prefix("kp ").ok_or_else(|| {
                err(
                    self.record,
                    &field,
                    format!("expected {} keypoint lines, found {line:?}", dataset.joints),
                )
            })?;
            let toks: Vec<&str> = rest.split(' ').collect();
            if toks.len() != 3 {
                return Err(err(self.record, &field, "expected <x> <y> <0|1>"));
            }
            let x = self.finite(&format!("kp[{j}].x"), toks[0])?;
            let y = self.finite(&format!("kp[{j}].y"), toks[1])?;
            let visible = match toks[2] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(err(
                        self.record,
                        &format!("kp[{j}].visible"),
                        format!("expected 0 or 1, got {other:?}"),
                    ))
                }
            };
            points.push((x, y, visible));
        }
        let keypoints =
            Keypoints::with_segments(points, dataset.torso, dataset.head, dataset.limbs.clone())
                .map_err(|e| err(self.record, "segments", e.to_string()))?;
        Ok(SampleRecord { image: PathBuf::from(tokens[0]), bbox, keypoints })
    }
}

pub fn load_annotations(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut p = Parser { lines: text.lines().enumerate().peekable(), record: 0 };

    let magic = p.expect_line("header")?;
    if magic != MAGIC {
        return Err(err(0, "header", format!("expected {MAGIC:?}, got {magic:?}")));
    }
    let joints_line = p.expect_line("joints")?;
    let joints: usize = joints_line
        .strip_prefix("joints ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| err(0, "joints", format!("bad joints line {joints_line:?}")))?;
    if joints == 0 {
        return Err(err(0, "joints", "joint count must be >= 1"));
    }
    let torso = p.segment("torso", joints)?;
    let head = p.segment("head", joints)?;
    let limbs_line = p.expect_line("limbs")?;
    let limbs_rest = limbs_line
        .strip_prefix("limbs ")
        .ok_or_else(|| err(0, "limbs", format!("bad limbs line {limbs_line:?}")))?;
    let mut limbs = Vec::new();
    if limbs_rest != "none" {
        for part in limbs_rest.split(',') {
            let (a, b) = part
                .split_once('-')
                .ok_or_else(|| err(0, "limbs", format!("bad limb pair {part:?}")))?;
            limbs.push((p.index("limbs", a, joints)?, p.index("limbs", b, joints)?));
        }
    }

    let mut dataset =
        Dataset { joints, torso, head, limbs, samples: Vec::new(), clips: Vec::new(), root };
    while let Some(line) = p.next_line() {
        p.record += 1;
        if line.starts_with("sample ") {
            let rec = p.record_body("sample", line, &dataset)?;
            dataset.samples.push(rec);
        } else if let Some(t) = line.strip_prefix("clip ") {
            let frames: usize = t
                .parse()
                .map_err(|_| err(p.record, "clip", format!("bad frame count {t:?}")))?;
            if frames == 0 {
                return Err(err(p.record, "clip", "clip must have at least one frame"));
            }
            let mut clip = ClipRecord { frames: Vec::with_capacity(frames) };
            for i in 0..frames {
                let field = format!("frame[{i}]");
                let line = p.expect_line(&field)?;
                let rec = p.record_body("frame", line, &dataset).map_err(|e| match e {
                    Error::Annotation { record, field: f, message } => Error::Annotation {
                        record,
                        field: format!("{field}.{f}"),
                        message,
                    },
                    other => other,
                })?;
                clip.frames.push(rec);
            }
            dataset.clips.push(clip);
        } else {
            return Err(err(p.record, "record", format!("unrecognized line {line:?}")));
        }
    }
    Ok(dataset)
}
