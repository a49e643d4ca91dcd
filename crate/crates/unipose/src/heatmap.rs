//! Gaussian target maps and their inverse: encoding keypoints as peak-1
//! heatmaps and decoding joint locations back out by global argmax.

use crate::error::{Error, Result};
use crate::keypoints::Keypoints;
use crate::tensor::{Element, Shape, Tensor};

pub const DEFAULT_SIGMA: f64 = 3.0;

/// Shape of the encoded peaks: unnormalized Gaussians with value 1 at the
/// center pixel, cut to zero beyond `3 * sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSpec {
    pub sigma: f64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec { sigma: DEFAULT_SIGMA }
    }
}

impl GaussianSpec {
    pub fn truncation_radius(&self) -> f64 {
        3.0 * self.sigma
    }
}

fn round_clamp(v: f64, max: usize) -> usize {
    let r = v.round();
    if r < 0.0 {
        0
    } else if r > (max - 1) as f64 {
        max - 1
    } else {
        r as usize
    }
}

fn stamp<E: Element>(plane: &mut [E], w: usize, h: usize, cx: usize, cy: usize, spec: &GaussianSpec) {
    let r = spec.truncation_radius();
    let r2 = r * r;
    let denom = 2.0 * spec.sigma * spec.sigma;
    let y0 = cy.saturating_sub(r.ceil() as usize);
    let y1 = (cy + r.ceil() as usize).min(h - 1);
    let x0 = cx.saturating_sub(r.ceil() as usize);
    let x1 = (cx + r.ceil() as usize).min(w - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d2 = (x as f64 - cx as f64).powi(2) + (y as f64 - cy as f64).powi(2);
            if d2 > r2 {
                continue;
            }
            plane[y * w + x] = E::from_f64((-d2 / denom).exp());
        }
    }
}

/// Encodes a pose into `K + 2` target channels: one Gaussian per visible
/// joint (hidden joints give all-zero channels) plus the two bounding-box
/// corners, top-left then bottom-right.
pub fn gaussian_targets<E: Element>(
    keypoints: &Keypoints,
    bbox: (f64, f64, f64, f64),
    h: usize,
    w: usize,
    spec: &GaussianSpec,
) -> Result<Tensor<E>> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("target size {h}x{w} must be >= 1x1")));
    }
    if !(spec.sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {}", spec.sigma)));
    }
    let (x0, y0, x1, y1) = bbox;
    if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) {
        return Err(Error::InvalidArgument("bbox coordinates must be finite".into()));
    }
    if x0 > x1 || y0 > y1 {
        return Err(Error::InvalidArgument(format!(
            "bbox ({x0}, {y0}, {x1}, {y1}) has min > max"
        )));
    }
    let k = keypoints.len();
    let plane = h * w;
    let mut data = vec![E::zero(); (k + 2) * plane];
    for (j, &(x, y, visible)) in keypoints.points().iter().enumerate() {
        if !visible {
            continue;
        }
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "joint {j} has non-finite coordinates ({x}, {y})"
            )));
        }
        let (cx, cy) = (round_clamp(x, w), round_clamp(y, h));
        stamp(&mut data[j * plane..(j + 1) * plane], w, h, cx, cy, spec);
    }
    stamp(&mut data[k * plane..(k + 1) * plane], w, h, round_clamp(x0, w), round_clamp(y0, h), spec);
    stamp(
        &mut data[(k + 1) * plane..(k + 2) * plane],
        w,
        h,
        round_clamp(x1, w),
        round_clamp(y1, h),
        spec,
    );
    Tensor::new(Shape::new(1, k + 2, h, w), data)
}

/// Row-major argmax of one plane; ties go to the smallest row, then the
/// smallest column.
pub(crate) fn plane_argmax<E: Element>(plane: &[E], w: usize) -> (usize, usize) {
    let mut best = 0usize;
    for (i, v) in plane.iter().enumerate() {
        if *v > plane[best] {
            best = i;
        }
    }
    (best % w, best / w)
}

/// Quarter-pixel shift toward the larger of the two neighbors along one
/// axis. Skipped at the border and on exact ties, so lattice-centered
/// peaks decode unchanged.
fn refine<E: Element>(at: impl Fn(usize) -> E, i: usize, max: usize) -> f64 {
    if i == 0 || i + 1 >= max {
        return i as f64;
    }
    let (lo, hi) = (at(i - 1), at(i + 1));
    if hi > lo {
        i as f64 + 0.25
    } else if lo > hi {
        i as f64 - 0.25
    } else {
        i as f64
    }
}

/// Joint positions and confidences recovered from the first `joints`
/// channels: global argmax plus a quarter-pixel refinement toward the
/// larger neighbor on each axis. An all-zero channel decodes to `(0, 0)`
/// with confidence 0.
pub fn decode_joints<E: Element>(
    heatmaps: &Tensor<E>,
    joints: usize,
) -> Result<(Keypoints, Vec<f64>)> {
    let sh = heatmaps.shape();
    if sh.n != 1 || sh.c < joints {
        return Err(Error::shape(
            "joint decode",
            format!("1x{}+xHxW", joints),
            sh.to_string(),
        ));
    }
    let plane = sh.h * sh.w;
    let data = heatmaps.data();
    let mut points = Vec::with_capacity(joints);
    let mut conf = Vec::with_capacity(joints);
    for j in 0..joints {
        let p = &data[j * plane..(j + 1) * plane];
        let (x, y) = plane_argmax(p, sh.w);
        let rx = refine(|i| p[y * sh.w + i], x, sh.w);
        let ry = refine(|i| p[i * sh.w + x], y, sh.h);
        points.push((rx, ry, true));
        conf.push(p[y * sh.w + x].to_f64());
    }
    Ok((Keypoints::new(points), conf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_joint(x: f64, y: f64) -> Keypoints {
        Keypoints::new(vec![(x, y, true)])
    }

    #[test]
    fn peak_is_one_and_sigma_distance_matches_closed_form() {
        let maps = gaussian_targets::<f64>(
            &one_joint(20.0, 14.0),
            (0.0, 0.0, 30.0, 30.0),
            32,
            48,
            &GaussianSpec::default(),
        )
        .unwrap();
        let at = |x: usize, y: usize| maps.data()[y * 48 + x];
        assert_eq!(at(20, 14), 1.0);
        let expected = (-0.5f64).exp();
        assert!((at(23, 14) - expected).abs() <= 1e-9, "{}", at(23, 14));
        assert!((at(20, 11) - expected).abs() <= 1e-9);
        // Exactly on the truncation circle the value survives; beyond it, zero.
        assert!((at(29, 14) - (-4.5f64).exp()).abs() <= 1e-12);
        assert_eq!(at(30, 14), 0.0);
    }

    #[test]
    fn hidden_joints_encode_as_zero_channels() {
        let kp = Keypoints::new(vec![(5.0, 5.0, true), (9.0, 9.0, false)]);
        let maps =
            gaussian_targets::<f32>(&kp, (1.0, 1.0, 12.0, 12.0), 16, 16, &GaussianSpec::default())
                .unwrap();
        assert_eq!(maps.shape(), Shape::new(1, 4, 16, 16));
        let plane = 256;
        assert!(maps.data()[plane..2 * plane].iter().all(|v| *v == 0.0));
        assert!(maps.data()[..plane].iter().any(|v| *v > 0.0));
    }

    #[test]
    fn corner_channels_carry_the_bbox() {
        let kp = one_joint(8.0, 8.0);
        let maps =
            gaussian_targets::<f32>(&kp, (3.2, 4.6, 11.4, 13.5), 16, 16, &GaussianSpec::default())
                .unwrap();
        let plane = 256;
        let tl = &maps.data()[plane..2 * plane];
        let br = &maps.data()[2 * plane..3 * plane];
        assert_eq!(plane_argmax(tl, 16), (3, 5));
        assert_eq!(plane_argmax(br, 16), (11, 14));
        assert_eq!(tl[5 * 16 + 3], 1.0);
        assert_eq!(br[14 * 16 + 11], 1.0);
    }

    #[test]
    fn rejects_bad_sigma_bbox_and_coords() {
        let kp = one_joint(5.0, 5.0);
        let spec = GaussianSpec { sigma: 0.0 };
        assert!(gaussian_targets::<f32>(&kp, (0.0, 0.0, 1.0, 1.0), 8, 8, &spec).is_err());
        let spec = GaussianSpec::default();
        assert!(gaussian_targets::<f32>(&kp, (5.0, 0.0, 1.0, 1.0), 8, 8, &spec).is_err());
        assert!(gaussian_targets::<f32>(&kp, (0.0, 0.0, 1.0, 1.0), 0, 8, &spec).is_err());
        let nan = one_joint(f64::NAN, 5.0);
        assert!(gaussian_targets::<f32>(&nan, (0.0, 0.0, 1.0, 1.0), 8, 8, &spec).is_err());
    }

    #[test]
    fn decode_handles_zero_channels_and_ties() {
        let zero = Tensor::<f32>::zeros(Shape::new(1, 1, 6, 6));
        let (kp, conf) = decode_joints(&zero, 1).unwrap();
        assert_eq!(kp.position(0), (0.0, 0.0));
        assert_eq!(conf[0], 0.0);

        let mut data = vec![0.0f32; 36];
        data[2 * 6 + 4] = 0.7;
        data[3 * 6 + 1] = 0.7;
        let t = Tensor::new(Shape::new(1, 1, 6, 6), data).unwrap();
        let (kp, conf) = decode_joints(&t, 1).unwrap();
        assert_eq!(kp.position(0), (4.0, 2.0));
        assert_eq!(conf[0], 0.7f32 as f64);
    }

    #[test]
    fn refinement_shifts_quarter_pixel_toward_larger_neighbor() {
        let mut data = vec![0.0f32; 49];
        data[3 * 7 + 3] = 1.0;
        data[3 * 7 + 4] = 0.6;
        data[3 * 7 + 2] = 0.4;
        data[2 * 7 + 3] = 0.9;
        data[4 * 7 + 3] = 0.1;
        let t = Tensor::new(Shape::new(1, 1, 7, 7), data).unwrap();
        let (kp, conf) = decode_joints(&t, 1).unwrap();
        assert_eq!(kp.position(0), (3.25, 2.75));
        assert_eq!(conf[0], 1.0);

        // Peak on the border: no refinement on the clipped axis.
        let mut data = vec![0.0f32; 49];
        data[0 * 7 + 5] = 1.0;
        data[0 * 7 + 4] = 0.8;
        let t = Tensor::new(Shape::new(1, 1, 7, 7), data).unwrap();
        let (kp, _) = decode_joints(&t, 1).unwrap();
        assert_eq!(kp.position(0), (4.75, 0.0));
    }

    #[test]
    fn encode_decode_round_trip_random_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for _ in 0..200 {
            let k = rng.random_range(1..8);
            let (h, w) = (rng.random_range(24..48), rng.random_range(24..48));
            let pts: Vec<(f64, f64, bool)> = (0..k)
                .map(|_| {
                    (
                        rng.random_range(0.0..(w - 1) as f64),
                        rng.random_range(0.0..(h - 1) as f64),
                        true,
                    )
                })
                .collect();
            let kp = Keypoints::new(pts.clone());
            let maps = gaussian_targets::<f32>(
                &kp,
                (0.0, 0.0, (w - 1) as f64, (h - 1) as f64),
                h,
                w,
                &GaussianSpec::default(),
            )
            .unwrap();
            let (decoded, conf) = decode_joints(&maps, k).unwrap();
            for j in 0..k {
                let expect = (pts[j].0.round(), pts[j].1.round());
                assert_eq!(decoded.position(j), expect, "joint {j}");
                assert_eq!(conf[j], 1.0);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip_is_identity_on_quantized_joints(
            seed in 0u64..10_000,
            h in 16usize..40,
            w in 16usize..40,
            k in 1usize..6,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64, bool)> = (0..k)
                .map(|_| (
                    rng.random_range(0.0..(w - 1) as f64),
                    rng.random_range(0.0..(h - 1) as f64),
                    true,
                ))
                .collect();
            let kp = Keypoints::new(pts.clone());
            let maps = gaussian_targets::<f32>(
                &kp,
                (0.0, 0.0, (w - 1) as f64, (h - 1) as f64),
                h, w,
                &GaussianSpec::default(),
            ).unwrap();
            let (decoded, _) = decode_joints(&maps, k).unwrap();
            for j in 0..k {
                prop_assert_eq!(decoded.position(j), (pts[j].0.round(), pts[j].1.round()));
            }
        }
    }
}
