//! Drive the loss into the floor on one image.
//!
//! 200 gradient steps on a single 64x64 sample. The loss should fall well
//! over 10x and every visible joint should decode within 2 px of its label.
//! A model that cannot memorize one sample cannot learn a dataset, so this
//! is the first thing to run when training looks off.
//!
//! Run: cargo run --release --example overfit_single_sample

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unipose::heatmap::{decode_joints, gaussian_targets, GaussianSpec};
use unipose::keypoints::HUMAN14_NAMES;
use unipose::model::{ModelConfig, UniPose};
use unipose::nn::Mode;
use unipose::synth::figure::FigureModel;
use unipose::synth::synth_pose_sample;
use unipose::train::{heatmap_loss, Sgd};

fn main() -> unipose::Result<()> {
    let sample = synth_pose_sample(42, &FigureModel::human14(), 64, 64)?;
    let target =
        gaussian_targets::<f32>(&sample.keypoints, sample.bbox, 64, 64, &GaussianSpec { sigma: 4.0 })?;
    let vis: Vec<bool> = (0..14).map(|j| sample.keypoints.visible(j)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = UniPose::<f32>::new(ModelConfig::tiny(14, 64, 64), &mut rng)?;
    let mut opt = Sgd::normalized(0.9);

    let mut first = None;
    let mut last = 0.0;
    for step in 0..200 {
        let mut mode = Mode::Train { rng: &mut rng };
        let out = model.forward(&sample.image, &mut mode)?;
        let loss = heatmap_loss(&out, &target, &vis)?;
        last = loss.data()[0] as f64;
        first.get_or_insert(last);
        loss.backward()?;
        opt.step(7e-4, &mut |f| model.visit_params(f))?;
        if step % 20 == 0 || step == 199 {
            println!("step {step:>3}  loss {last:.3e}");
        }
    }
    let first = first.unwrap();
    println!("\nloss {first:.3e} -> {last:.3e} ({:.0}x reduction)", first / last);
    assert!(first / last >= 10.0);

    let out = model.forward(&sample.image, &mut Mode::Eval)?;
    let (decoded, _) = decode_joints(&out, 14)?;
    let mut worst = 0.0f64;
    for j in 0..14 {
        if !sample.keypoints.visible(j) {
            continue;
        }
        let (px, py) = decoded.position(j);
        let (gx, gy) = sample.keypoints.position(j);
        let err = ((px - gx).powi(2) + (py - gy).powi(2)).sqrt();
        worst = worst.max(err);
        println!("{:<12} off by {err:.2} px", HUMAN14_NAMES[j]);
    }
    println!("worst joint error {worst:.2} px");
    assert!(worst <= 2.0, "memorization should be pixel-tight");
    Ok(())
}
