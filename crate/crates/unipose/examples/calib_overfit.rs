//! Temporary calibration sweep for the single-sample overfit settings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unipose::heatmap::{decode_joints, gaussian_targets, GaussianSpec};
use unipose::model::{ModelConfig, UniPose};
use unipose::nn::Mode;
use unipose::synth::figure::FigureModel;
use unipose::synth::synth_pose_sample;
use unipose::train::{heatmap_loss, Sgd};

fn main() -> unipose::Result<()> {
    let sample = synth_pose_sample(42, &FigureModel::human14(), 64, 64)?;
    let vis: Vec<bool> = (0..14).map(|j| sample.keypoints.visible(j)).collect();
    let target = gaussian_targets::<f32>(
        &sample.keypoints,
        sample.bbox,
        64,
        64,
        &GaussianSpec { sigma: 4.0 },
    )?;

    for model_seed in [0u64, 1, 2, 3] {
        for lr in [5e-4, 6e-4, 7e-4, 8e-4] {
            let mut rng = ChaCha8Rng::seed_from_u64(model_seed);
            let mut model = UniPose::<f32>::new(ModelConfig::tiny(14, 64, 64), &mut rng)?;
            let mut opt = Sgd::normalized(0.9);
            let mut first = None;
            let mut last = 0.0;
            for _ in 0..200 {
                let mut mode = Mode::Train { rng: &mut rng };
                let out = model.forward(&sample.image, &mut mode)?;
                let loss = heatmap_loss(&out, &target, &vis)?;
                last = loss.data()[0] as f64;
                first.get_or_insert(last);
                loss.backward()?;
                opt.step(lr, &mut |f| model.visit_params(f))?;
            }
            let out = model.forward(&sample.image, &mut Mode::Eval)?;
            let (decoded, _) = decode_joints(&out, 14)?;
            let mut errs: Vec<f64> = Vec::new();
            for j in 0..14 {
                if !sample.keypoints.visible(j) {
                    continue;
                }
                let (px, py) = decoded.position(j);
                let (gx, gy) = sample.keypoints.position(j);
                errs.push(((px - gx).powi(2) + (py - gy).powi(2)).sqrt());
            }
            errs.sort_by(f64::total_cmp);
            println!(
                "seed {model_seed} lr {lr:.1e}: ratio {:.0}x, top errs {:.1} {:.1} {:.1}",
                first.unwrap() / last,
                errs[errs.len() - 1],
                errs[errs.len() - 2],
                errs[errs.len() - 3],
            );
        }
    }
    Ok(())
}
