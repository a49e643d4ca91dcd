//! Synthetic dataset generation: articulated stick figures rendered onto
//! low-frequency noise, single frames or smooth video clips with optional
//! motion blur and transient occlusion. Labels are exact by construction.

pub mod annot;
pub mod figure;
pub mod render;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::keypoints::{Keypoints, HUMAN14_JOINTS};
use crate::tensor::Tensor;
use figure::{
    feasible_root_box, forward_kinematics, sample_placed_pose, step_angles, FigureModel,
    FRAME_MARGIN,
};
use render::{bone_color, draw_capsule, draw_disc, draw_rect_filled, low_freq_background, Raster};

pub const BBOX_MARGIN: f64 = 4.0;
const BACKGROUND_MAX: f32 = 0.35;
const OCCLUDER_COLOR: [f32; 3] = [0.45, 0.47, 0.43];

/// One labeled image. `occluded` records which joints an occluder covered
/// this frame; those joints are also flagged not-visible in `keypoints`.
#[derive(Debug, Clone)]
pub struct PoseSample {
    pub image: Tensor<f32>,
    pub keypoints: Keypoints,
    pub bbox: (f64, f64, f64, f64),
    pub seed: u64,
    pub occluded: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionConfig {
    /// Max per-frame change of any single angle, radians.
    pub max_angular_step: f64,
    /// Max per-frame root translation per axis, pixels.
    pub max_root_step: f64,
    pub blur: bool,
    pub occlusion: bool,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig { max_angular_step: 0.06, max_root_step: 1.5, blur: true, occlusion: true }
    }
}

impl MotionConfig {
    /// No movement, no blur, no occlusion: every frame identical.
    pub fn still() -> Self {
        MotionConfig { max_angular_step: 0.0, max_root_step: 0.0, blur: false, occlusion: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_angular_step < 0.0 || self.max_root_step < 0.0 {
            return Err(Error::InvalidArgument("motion steps must be >= 0".into()));
        }
        Ok(())
    }
}

/// An occluder rectangle active for frames `start .. start + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionEvent {
    pub start: usize,
    pub len: usize,
    pub rect: (f64, f64, f64, f64),
}

impl OcclusionEvent {
    pub fn active(&self, frame: usize) -> bool {
        frame >= self.start && frame < self.start + self.len
    }

    pub fn covers(&self, x: f64, y: f64) -> bool {
        let (x0, y0, x1, y1) = self.rect;
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }
}

#[derive(Debug, Clone)]
pub struct VideoClip {
    pub frames: Vec<PoseSample>,
    pub motion: MotionConfig,
    pub occlusion: Option<OcclusionEvent>,
}

fn check_frame_size(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 8 != 0 || w % 8 != 0 {
        return Err(Error::InvalidArgument(format!(
            "frame size {h}x{w} must be a positive multiple of 8"
        )));
    }
    Ok(())
}

fn clamp_box(b: (f64, f64, f64, f64), w: usize, h: usize) -> (f64, f64, f64, f64) {
    (
        b.0.clamp(0.0, (w - 1) as f64),
        b.1.clamp(0.0, (h - 1) as f64),
        b.2.clamp(0.0, (w - 1) as f64),
        b.3.clamp(0.0, (h - 1) as f64),
    )
}

fn figure_keypoints(model: &FigureModel, positions: &[(f64, f64)]) -> Result<Keypoints> {
    let pts: Vec<(f64, f64, bool)> = positions.iter().map(|&(x, y)| (x, y, true)).collect();
    if model.joints == HUMAN14_JOINTS {
        Keypoints::human14(pts)
    } else {
        Ok(Keypoints::new(pts))
    }
}

fn draw_figure(r: &mut Raster, model: &FigureModel, positions: &[(f64, f64)]) {
    for (i, b) in model.bones.iter().enumerate() {
        draw_capsule(
            r,
            positions[b.parent],
            positions[b.joint],
            model.limb_thickness / 2.0,
            bone_color(i),
        );
    }
    for j in 0..model.joints {
        let color = match model.bones.iter().position(|b| b.joint == j) {
            Some(i) => bone_color(i).map(|c| c * 0.85 + 0.15),
            None => [0.95, 0.95, 0.95],
        };
        draw_disc(r, positions[j], model.joint_radius, color);
    }
}

fn labeled_bbox(kp: &Keypoints, w: usize, h: usize) -> (f64, f64, f64, f64) {
    let raw = kp.visible_bbox(BBOX_MARGIN).unwrap_or_else(|| {
        // Every joint hidden: fall back to the box over all labeled joints.
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y, _) in kp.points() {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        (x0 - BBOX_MARGIN, y0 - BBOX_MARGIN, x1 + BBOX_MARGIN, y1 + BBOX_MARGIN)
    });
    clamp_box(raw, w, h)
}

/// One random figure on a fresh background. Deterministic per seed.
pub fn synth_pose_sample(
    seed: u64,
    model: &FigureModel,
    h: usize,
    w: usize,
) -> Result<PoseSample> {
    model.validate()?;
    check_frame_size(h, w)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = sample_placed_pose(model, w, h, &mut rng)?;
    let positions = forward_kinematics(model, &pose);
    let mut raster = Raster::new(h, w);
    low_freq_background(&mut raster, 0.0, BACKGROUND_MAX, 8, &mut rng);
    draw_figure(&mut raster, model, &positions);
    let keypoints = figure_keypoints(model, &positions)?;
    let bbox = labeled_bbox(&keypoints, w, h);
    Ok(PoseSample {
        image: raster.into_tensor(),
        keypoints,
        bbox,
        seed,
        occluded: vec![false; model.joints],
    })
}

fn sample_occluder(
    positions: &[(f64, f64)],
    w: usize,
    h: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64, f64, f64) {
    let rw = rng.random_range(w / 6..=w / 3) as f64;
    let rh = rng.random_range(h / 6..=h / 3) as f64;
    let target = positions[rng.random_range(0..positions.len())];
    let cx = target.0 + rng.random_range(-4.0..=4.0);
    let cy = target.1 + rng.random_range(-4.0..=4.0);
    clamp_box((cx - rw / 2.0, cy - rh / 2.0, cx + rw / 2.0, cy + rh / 2.0), w, h)
}

/// A clip with smooth motion: angles and root drift within the configured
/// steps, optional velocity-aligned blur, and at most one occlusion window
/// of 1 to 3 frames. Keypoints stay labeled on every frame.
pub fn synth_video_clip(
    seed: u64,
    model: &FigureModel,
    frames: usize,
    h: usize,
    w: usize,
    motion: &MotionConfig,
) -> Result<VideoClip> {
    model.validate()?;
    check_frame_size(h, w)?;
    motion.validate()?;
    if frames == 0 {
        return Err(Error::InvalidArgument("clip needs at least one frame".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pose = sample_placed_pose(model, w, h, &mut rng)?;
    let mut background = Raster::new(h, w);
    low_freq_background(&mut background, 0.0, BACKGROUND_MAX, 8, &mut rng);

    let occlusion_window = if motion.occlusion {
        let len = rng.random_range(1..=3usize.min(frames));
        let start = rng.random_range(0..=frames - len);
        Some((start, len))
    } else {
        None
    };

    let mut out = Vec::with_capacity(frames);
    let mut occlusion: Option<OcclusionEvent> = None;
    let mut prev_root = pose.root;
    for t in 0..frames {
        if t > 0 {
            let mut next = pose.clone();
            step_angles(model, &mut next, motion.max_angular_step, &mut rng);
            let step = motion.max_root_step;
            let (dx, dy) = if step == 0.0 {
                (0.0, 0.0)
            } else {
                (rng.random_range(-step..=step), rng.random_range(-step..=step))
            };
            next.root = (next.root.0 + dx, next.root.1 + dy);
            match feasible_root_box(model, &next, w, h, FRAME_MARGIN) {
                Some((x_lo, x_hi, y_lo, y_hi)) => {
                    next.root = (next.root.0.clamp(x_lo, x_hi), next.root.1.clamp(y_lo, y_hi));
                    pose = next;
                }
                None => {} // keep the previous pose; a zero step is always legal
            }
        }
        let positions = forward_kinematics(model, &pose);
        let velocity = (pose.root.0 - prev_root.0, pose.root.1 - prev_root.1);
        prev_root = pose.root;

        let mut raster = background.clone();
        draw_figure(&mut raster, model, &positions);

        let mut keypoints = figure_keypoints(model, &positions)?;
        let mut occluded = vec![false; model.joints];
        if let Some((start, len)) = occlusion_window {
            if t == start {
                occlusion = Some(OcclusionEvent {
                    start,
                    len,
                    rect: sample_occluder(&positions, w, h, &mut rng),
                });
            }
            if let Some(event) = &occlusion {
                if event.active(t) {
                    let (x0, y0, x1, y1) = event.rect;
                    draw_rect_filled(&mut raster, x0, y0, x1, y1, OCCLUDER_COLOR);
                    for j in 0..model.joints {
                        if event.covers(positions[j].0, positions[j].1) {
                            occluded[j] = true;
                            keypoints.set_visible(j, false);
                        }
                    }
                }
            }
        }
        if motion.blur {
            raster = render::motion_blur(&raster, velocity.0, velocity.1);
        }
        let bbox = labeled_bbox(&keypoints, w, h);
        out.push(PoseSample { image: raster.into_tensor(), keypoints, bbox, seed, occluded });
    }
    Ok(VideoClip { frames: out, motion: motion.clone(), occlusion })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn samples_are_deterministic_per_seed() {
        let m = FigureModel::human14();
        let a = synth_pose_sample(123, &m, 64, 64).unwrap();
        let b = synth_pose_sample(123, &m, 64, 64).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.keypoints, b.keypoints);
        assert_eq!(a.bbox, b.bbox);
        let c = synth_pose_sample(124, &m, 64, 64).unwrap();
        assert_ne!(a.image.data(), c.image.data());
    }

    #[test]
    fn sample_respects_frame_and_bbox_contracts() {
        let m = FigureModel::human14();
        for seed in 0..10 {
            let s = synth_pose_sample(seed, &m, 64, 72).unwrap();
            assert_eq!(s.image.shape(), Shape::new(1, 3, 64, 72));
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let (x0, y0, x1, y1) = s.bbox;
            for &(x, y, visible) in s.keypoints.points() {
                assert!(visible);
                assert!(x >= 0.0 && x <= 71.0 && y >= 0.0 && y <= 63.0);
                assert!(x >= x0 && x <= x1 && y >= y0 && y <= y1, "joint outside bbox");
            }
        }
    }

    #[test]
    fn joint_pixels_outshine_the_background() {
        let m = FigureModel::human14();
        let s = synth_pose_sample(7, &m, 64, 64).unwrap();
        let raster = Raster::from_tensor(&s.image).unwrap();
        for &(x, y, _) in s.keypoints.points() {
            let px = raster.get(x.round() as usize, y.round() as usize);
            let peak = px.iter().fold(0.0f32, |a, &b| a.max(b));
            assert!(peak >= 0.5, "joint at ({x}, {y}) blends into background: {px:?}");
        }
    }

    #[test]
    fn bbox_is_tight_visible_box_plus_margin() {
        let m = FigureModel::human14();
        let s = synth_pose_sample(42, &m, 64, 64).unwrap();
        let expect = clamp_box(s.keypoints.visible_bbox(BBOX_MARGIN).unwrap(), 64, 64);
        assert_eq!(s.bbox, expect);
    }

    #[test]
    fn undersized_frames_and_bad_sizes_are_rejected() {
        let m = FigureModel::human14();
        assert!(matches!(synth_pose_sample(0, &m, 16, 16), Err(Error::Placement(_))));
        assert!(synth_pose_sample(0, &m, 60, 64).is_err());
        assert!(synth_pose_sample(0, &m, 0, 64).is_err());
    }

    #[test]
    fn still_motion_gives_identical_frames() {
        let m = FigureModel::human14();
        let clip = synth_video_clip(5, &m, 4, 64, 64, &MotionConfig::still()).unwrap();
        assert!(clip.occlusion.is_none());
        for f in &clip.frames[1..] {
            assert_eq!(f.image.data(), clip.frames[0].image.data());
            assert_eq!(f.keypoints, clip.frames[0].keypoints);
        }
    }

    #[test]
    fn clips_are_deterministic_with_all_features_on() {
        let m = FigureModel::human14();
        let motion = MotionConfig::default();
        let a = synth_video_clip(99, &m, 6, 64, 64, &motion).unwrap();
        let b = synth_video_clip(99, &m, 6, 64, 64, &motion).unwrap();
        assert_eq!(a.occlusion, b.occlusion);
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.image.data(), fb.image.data());
            assert_eq!(fa.keypoints, fb.keypoints);
        }
    }

    #[test]
    fn frame_displacement_obeys_the_documented_bound() {
        let m = FigureModel::human14();
        let motion = MotionConfig { blur: false, occlusion: false, ..MotionConfig::default() };
        let bound = m.max_frame_displacement(motion.max_angular_step, motion.max_root_step);
        for seed in [3, 8, 21] {
            let clip = synth_video_clip(seed, &m, 8, 64, 64, &motion).unwrap();
            for t in 1..clip.frames.len() {
                for j in 0..m.joints {
                    let (ax, ay) = clip.frames[t - 1].keypoints.position(j);
                    let (bx, by) = clip.frames[t].keypoints.position(j);
                    let d = ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt();
                    assert!(d <= bound + 1e-9, "joint {j} moved {d} > bound {bound}");
                }
            }
        }
    }

    #[test]
    fn occlusion_flags_match_the_rect_oracle() {
        let m = FigureModel::human14();
        let motion = MotionConfig { blur: false, ..MotionConfig::default() };
        let mut saw_covered_joint = false;
        for seed in 0..12 {
            let clip = synth_video_clip(seed, &m, 6, 64, 64, &motion).unwrap();
            let event = clip.occlusion.as_ref().expect("occlusion enabled");
            assert!((1..=3).contains(&event.len));
            assert!(event.start + event.len <= 6);
            for (t, f) in clip.frames.iter().enumerate() {
                for j in 0..m.joints {
                    let (x, y) = f.keypoints.position(j);
                    let expect = event.active(t) && event.covers(x, y);
                    assert_eq!(f.keypoints.visible(j), !expect, "seed {seed} frame {t} joint {j}");
                    assert_eq!(f.occluded[j], expect);
                    saw_covered_joint |= expect;
                }
            }
        }
        assert!(saw_covered_joint, "no joint was ever covered across 12 clips");
    }

    #[test]
    fn blur_changes_pixels_but_not_labels() {
        let m = FigureModel::human14();
        let base = MotionConfig { blur: false, occlusion: false, max_root_step: 3.0, ..MotionConfig::default() };
        let blurred = MotionConfig { blur: true, ..base.clone() };
        let a = synth_video_clip(17, &m, 5, 64, 64, &base).unwrap();
        let b = synth_video_clip(17, &m, 5, 64, 64, &blurred).unwrap();
        let mut any_pixels_changed = false;
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.keypoints, fb.keypoints);
            assert_eq!(fa.bbox, fb.bbox);
            any_pixels_changed |= fa.image.data() != fb.image.data();
        }
        assert!(any_pixels_changed);
    }
}
