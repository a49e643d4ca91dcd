//! Articulated stick-figure skeleton: a bone tree with per-bone angle
//! ranges, forward kinematics, and in-frame placement.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::keypoints::HUMAN14_JOINTS;

/// Reference frame an angle offset is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleFrame {
    /// Offset from the body axis.
    Body,
    /// Offset from the parent bone's direction.
    Parent,
}

#[derive(Debug, Clone)]
pub struct BoneSpec {
    pub joint: usize,
    pub parent: usize,
    pub length: f64,
    pub frame: AngleFrame,
    pub min_angle: f64,
    pub max_angle: f64,
}

#[derive(Debug, Clone)]
pub struct FigureModel {
    pub joints: usize,
    pub root: usize,
    /// Topological order: a bone's parent joint is the root or an earlier
    /// bone's joint.
    pub bones: Vec<BoneSpec>,
    /// Absolute body-axis angle range; the axis points roughly down-image.
    pub body_angle_range: (f64, f64),
    pub scale_range: (f64, f64),
    pub limb_thickness: f64,
    pub joint_radius: f64,
}

impl FigureModel {
    /// The default 14-joint human mirroring the joint order in
    /// [`crate::keypoints::HUMAN14_NAMES`]. The neck is the root.
    pub fn human14() -> Self {
        use AngleFrame::{Body, Parent};
        let b = |joint, parent, length, frame, min_angle, max_angle| BoneSpec {
            joint,
            parent,
            length,
            frame,
            min_angle,
            max_angle,
        };
        FigureModel {
            joints: HUMAN14_JOINTS,
            root: 1,
            bones: vec![
                b(0, 1, 10.0, Body, PI - 0.25, PI + 0.25),
                b(2, 1, 6.0, Body, -2.1, -1.3),
                b(3, 2, 9.0, Body, -1.1, 0.15),
                b(4, 3, 8.0, Parent, -1.6, 0.1),
                b(5, 1, 6.0, Body, 1.3, 2.1),
                b(6, 5, 9.0, Body, -0.15, 1.1),
                b(7, 6, 8.0, Parent, -0.1, 1.6),
                b(8, 1, 16.0, Body, -0.5, -0.18),
                b(9, 8, 10.0, Body, -0.45, 0.12),
                b(10, 9, 9.0, Parent, -0.08, 1.1),
                b(11, 1, 16.0, Body, 0.18, 0.5),
                b(12, 11, 10.0, Body, -0.12, 0.45),
                b(13, 12, 9.0, Parent, -1.1, 0.08),
            ],
            body_angle_range: (PI / 2.0 - 0.22, PI / 2.0 + 0.22),
            scale_range: (0.7, 1.05),
            limb_thickness: 2.4,
            joint_radius: 1.4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints == 0 || self.root >= self.joints {
            return Err(Error::Config("figure root outside joint range".into()));
        }
        if self.bones.len() != self.joints - 1 {
            return Err(Error::Config(format!(
                "figure needs {} bones for {} joints, got {}",
                self.joints - 1,
                self.joints,
                self.bones.len()
            )));
        }
        let mut placed = vec![false; self.joints];
        placed[self.root] = true;
        for (i, b) in self.bones.iter().enumerate() {
            if b.joint >= self.joints || b.parent >= self.joints {
                return Err(Error::Config(format!("bone {i} references joints out of range")));
            }
            if !placed[b.parent] {
                return Err(Error::Config(format!(
                    "bone {i} (joint {}) appears before its parent {}; not a rooted tree order",
                    b.joint, b.parent
                )));
            }
            if placed[b.joint] {
                return Err(Error::Config(format!("joint {} assigned twice", b.joint)));
            }
            if !(b.length > 0.0) {
                return Err(Error::Config(format!("bone {i} length must be > 0")));
            }
            if !(b.min_angle <= b.max_angle) {
                return Err(Error::Config(format!("bone {i} has an empty angle range")));
            }
            placed[b.joint] = true;
        }
        if placed.iter().any(|p| !p) {
            return Err(Error::Config("figure tree does not reach every joint".into()));
        }
        if !(self.scale_range.0 > 0.0 && self.scale_range.0 <= self.scale_range.1) {
            return Err(Error::Config("bad scale range".into()));
        }
        Ok(())
    }

    /// Index of the bone ending at `joint`, if any.
    fn bone_to(&self, joint: usize) -> Option<usize> {
        self.bones.iter().position(|b| b.joint == joint)
    }

    /// Number of angle variables influencing the direction of bone `i`:
    /// the body axis, the bone's own offset, and every Parent-framed
    /// ancestor in between.
    fn angle_depth(&self, mut i: usize) -> usize {
        let mut n = 2;
        while self.bones[i].frame == AngleFrame::Parent {
            match self.bone_to(self.bones[i].parent) {
                Some(p) => {
                    n += 1;
                    i = p;
                }
                None => break,
            }
        }
        n
    }

    /// Upper bound on single-frame keypoint displacement when every angle
    /// moves at most `angular_step` and the root at most `root_step` per
    /// axis. The factor 2 on the angular term absorbs the extra root shift
    /// introduced by in-frame clamping.
    pub fn max_frame_displacement(&self, angular_step: f64, root_step: f64) -> f64 {
        let mut worst = 0.0f64;
        for target in 0..self.joints {
            let mut sum = 0.0;
            let mut j = target;
            while j != self.root {
                let Some(i) = self.bone_to(j) else { break };
                sum += self.bones[i].length
                    * self.scale_range.1
                    * angular_step
                    * self.angle_depth(i) as f64;
                j = self.bones[i].parent;
            }
            worst = worst.max(sum);
        }
        root_step * 2.0f64.sqrt() + 2.0 * worst
    }
}

/// A concrete pose: sampled body angle, per-bone offsets, global scale, and
/// the root position in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub body: f64,
    pub offsets: Vec<f64>,
    pub scale: f64,
    pub root: (f64, f64),
}

pub fn sample_angles(model: &FigureModel, rng: &mut ChaCha8Rng) -> Pose {
    let span = |lo: f64, hi: f64, r: &mut ChaCha8Rng| {
        if lo == hi {
            lo
        } else {
            r.random_range(lo..hi)
        }
    };
    Pose {
        body: span(model.body_angle_range.0, model.body_angle_range.1, rng),
        offsets: model
            .bones
            .iter()
            .map(|b| span(b.min_angle, b.max_angle, rng))
            .collect(),
        scale: span(model.scale_range.0, model.scale_range.1, rng),
        root: (0.0, 0.0),
    }
}

/// Perturbs every angle by at most `step`, clamped back into its range.
pub fn step_angles(model: &FigureModel, pose: &mut Pose, step: f64, rng: &mut ChaCha8Rng) {
    let jitter = |v: f64, lo: f64, hi: f64, r: &mut ChaCha8Rng| {
        if step == 0.0 {
            return v;
        }
        (v + r.random_range(-step..=step)).clamp(lo, hi)
    };
    pose.body = jitter(pose.body, model.body_angle_range.0, model.body_angle_range.1, rng);
    for (o, b) in pose.offsets.iter_mut().zip(&model.bones) {
        *o = jitter(*o, b.min_angle, b.max_angle, rng);
    }
}

/// Absolute joint positions for a pose, root at `pose.root`.
pub fn forward_kinematics(model: &FigureModel, pose: &Pose) -> Vec<(f64, f64)> {
    let mut pos = vec![(0.0, 0.0); model.joints];
    let mut dir = vec![pose.body; model.joints];
    pos[model.root] = pose.root;
    for (b, off) in model.bones.iter().zip(&pose.offsets) {
        let reference = match b.frame {
            AngleFrame::Body => pose.body,
            AngleFrame::Parent => dir[b.parent],
        };
        let a = reference + off;
        dir[b.joint] = a;
        let (px, py) = pos[b.parent];
        pos[b.joint] = (
            px + pose.scale * b.length * a.cos(),
            py + pose.scale * b.length * a.sin(),
        );
    }
    pos
}

/// Feasible root positions keeping every joint at least `margin` px inside
/// a `w`x`h` frame, as `(x_lo, x_hi, y_lo, y_hi)`; `None` if the figure
/// cannot fit.
pub fn feasible_root_box(
    model: &FigureModel,
    pose: &Pose,
    w: usize,
    h: usize,
    margin: f64,
) -> Option<(f64, f64, f64, f64)> {
    let origin = Pose { root: (0.0, 0.0), ..pose.clone() };
    let rel = forward_kinematics(model, &origin);
    let (mut min_x, mut max_x, mut min_y, mut max_y) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &(x, y) in &rel {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let x_lo = margin - min_x;
    let x_hi = (w - 1) as f64 - margin - max_x;
    let y_lo = margin - min_y;
    let y_hi = (h - 1) as f64 - margin - max_y;
    (x_lo <= x_hi && y_lo <= y_hi).then_some((x_lo, x_hi, y_lo, y_hi))
}

pub const PLACEMENT_RETRIES: usize = 64;
pub const FRAME_MARGIN: f64 = 3.0;

/// Samples a pose that fits the frame, retrying a bounded number of times.
pub fn sample_placed_pose(
    model: &FigureModel,
    w: usize,
    h: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Pose> {
    for _ in 0..PLACEMENT_RETRIES {
        let mut pose = sample_angles(model, rng);
        if let Some((x_lo, x_hi, y_lo, y_hi)) = feasible_root_box(model, &pose, w, h, FRAME_MARGIN)
        {
            pose.root = (
                if x_lo == x_hi { x_lo } else { rng.random_range(x_lo..=x_hi) },
                if y_lo == y_hi { y_lo } else { rng.random_range(y_lo..=y_hi) },
            );
            return Ok(pose);
        }
    }
    Err(Error::Placement(PLACEMENT_RETRIES))
}
