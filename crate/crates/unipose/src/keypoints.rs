//! Keypoint sets with the reference segments the metrics need: a torso
//! segment for PCK, a head segment for PCKh, and limb pairs for PCP.

use crate::error::{Error, Result};

pub const HUMAN14_JOINTS: usize = 14;

pub const HUMAN14_NAMES: [&str; HUMAN14_JOINTS] = [
    "head_top",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
];

/// Torso reference for the 14-joint figure: neck to right hip.
pub const HUMAN14_TORSO: (usize, usize) = (1, 8);
/// Head reference: head top to neck.
pub const HUMAN14_HEAD: (usize, usize) = (0, 1);
/// Limb pairs: upper/lower arm and leg on each side.
pub const HUMAN14_LIMBS: [(usize, usize); 8] =
    [(2, 3), (3, 4), (5, 6), (6, 7), (8, 9), (9, 10), (11, 12), (12, 13)];

/// One pose: per-joint `(x, y, visible)` in pixels plus optional reference
/// segments given as joint index pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoints {
    points: Vec<(f64, f64, bool)>,
    torso: Option<(usize, usize)>,
    head: Option<(usize, usize)>,
    limbs: Vec<(usize, usize)>,
}

impl Keypoints {
    /// A bare keypoint set without reference segments (enough for decoding;
    /// metrics that need a reference will reject it).
    pub fn new(points: Vec<(f64, f64, bool)>) -> Self {
        Keypoints { points, torso: None, head: None, limbs: Vec::new() }
    }

    pub fn with_segments(
        points: Vec<(f64, f64, bool)>,
        torso: Option<(usize, usize)>,
        head: Option<(usize, usize)>,
        limbs: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let k = points.len();
        let check_pair = |what: &str, (a, b): (usize, usize)| -> Result<()> {
            if a >= k || b >= k {
                return Err(Error::InvalidArgument(format!(
                    "{what} segment ({a}, {b}) references a joint outside 0..{k}"
                )));
            }
            if a == b {
                return Err(Error::InvalidArgument(format!(
                    "{what} segment endpoints must be distinct, got ({a}, {b})"
                )));
            }
            Ok(())
        };
        if let Some(t) = torso {
            check_pair("torso", t)?;
        }
        if let Some(h) = head {
            check_pair("head", h)?;
        }
        for &l in &limbs {
            check_pair("limb", l)?;
        }
        Ok(Keypoints { points, torso, head, limbs })
    }

    /// The standard 14-joint figure with its fixed reference segments.
    pub fn human14(points: Vec<(f64, f64, bool)>) -> Result<Self> {
        if points.len() != HUMAN14_JOINTS {
            return Err(Error::InvalidArgument(format!(
                "human14 pose needs {HUMAN14_JOINTS} joints, got {}",
                points.len()
            )));
        }
        Self::with_segments(
            points,
            Some(HUMAN14_TORSO),
            Some(HUMAN14_HEAD),
            HUMAN14_LIMBS.to_vec(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[(f64, f64, bool)] {
        &self.points
    }

    pub fn position(&self, i: usize) -> (f64, f64) {
        (self.points[i].0, self.points[i].1)
    }

    pub fn visible(&self, i: usize) -> bool {
        self.points[i].2
    }

    pub fn set_visible(&mut self, i: usize, visible: bool) {
        self.points[i].2 = visible;
    }

    pub fn torso(&self) -> Option<(usize, usize)> {
        self.torso
    }

    pub fn head(&self) -> Option<(usize, usize)> {
        self.head
    }

    pub fn limbs(&self) -> &[(usize, usize)] {
        &self.limbs
    }

    fn segment_length(&self, seg: (usize, usize)) -> f64 {
        let (ax, ay) = self.position(seg.0);
        let (bx, by) = self.position(seg.1);
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    /// Torso diameter, required by PCK.
    pub fn torso_length(&self) -> Result<f64> {
        let seg = self
            .torso
            .ok_or_else(|| Error::MissingReference("torso segment".into()))?;
        let len = self.segment_length(seg);
        if len <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "torso reference length must be > 0, got {len}"
            )));
        }
        Ok(len)
    }

    /// Head diameter, required by PCKh.
    pub fn head_length(&self) -> Result<f64> {
        let seg = self
            .head
            .ok_or_else(|| Error::MissingReference("head segment".into()))?;
        let len = self.segment_length(seg);
        if len <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "head reference length must be > 0, got {len}"
            )));
        }
        Ok(len)
    }

    pub fn limb_length(&self, limb: usize) -> f64 {
        self.segment_length(self.limbs[limb])
    }

    /// Axis-aligned box over visible joints with a margin, or `None` when
    /// every joint is hidden. Returned as `(x_min, y_min, x_max, y_max)`.
    pub fn visible_bbox(&self, margin: f64) -> Option<(f64, f64, f64, f64)> {
        let mut b: Option<(f64, f64, f64, f64)> = None;
        for &(x, y, v) in &self.points {
            if !v {
                continue;
            }
            b = Some(match b {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        b.map(|(x0, y0, x1, y1)| (x0 - margin, y0 - margin, x1 + margin, y1 + margin))
    }
}
