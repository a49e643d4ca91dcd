//! A miniature end-to-end run: synthesize, train, checkpoint, evaluate.
//!
//! Trains the tiny single-frame model on a few dozen generated samples for
//! a couple of minutes, prints the loss curve, reloads the best checkpoint,
//! and scores it with the full metric suite next to two baselines: the
//! untrained model (chance level) and the label encoder itself (a fixed
//! 100% oracle).
//!
//! Run: cargo run --release --example train_and_evaluate

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unipose::model::{ModelConfig, UniPose};
use unipose::synth::figure::FigureModel;
use unipose::synth::{synth_pose_sample, PoseSample};
use unipose::train::{evaluate_encoded, evaluate_single, train_single, TrainConfig};

fn batch(seed0: u64, n: usize) -> unipose::Result<Vec<PoseSample>> {
    let figure = FigureModel::human14();
    (0..n as u64).map(|i| synth_pose_sample(seed0 + i, &figure, 64, 64)).collect()
}

fn main() -> unipose::Result<()> {
    let out_dir = PathBuf::from("target/example-out/train_and_evaluate");
    let train_set = batch(0, 300)?;
    let holdout = batch(10_000, 100)?;
    println!("{} training samples, {} held out", train_set.len(), holdout.len());

    let config = TrainConfig {
        initial_lr: 1e-3,
        momentum: 0.9,
        batch_size: 4,
        epochs: 10,
        lr_step_epochs: vec![6, 9],
        seed: 5,
        ..TrainConfig::default()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = UniPose::<f32>::new(ModelConfig::tiny(14, 64, 64), &mut rng)?;
    let before = evaluate_single(&model, &holdout, 0.2)?;
    println!("untrained PCK@0.2: {:.3}", before.pck.overall());

    let log = train_single(&mut model, &train_set, &holdout, &config, &out_dir)?;
    for entry in &log.entries {
        println!("{entry}");
    }

    let best = UniPose::<f32>::load(out_dir.join("best.ckpt"))?;
    let after = evaluate_single(&best, &holdout, 0.2)?;
    println!("\ntrained model:\n{}", after.to_text());

    let oracle = evaluate_encoded(&holdout, config.sigma, 0.2)?;
    println!("\nlabel-encoder oracle PCK@0.2: {:.3}", oracle.pck.overall());
    assert_eq!(oracle.pck.overall(), 1.0);
    assert!(
        after.pck.overall() > before.pck.overall(),
        "training must beat the untrained baseline"
    );
    println!("\nrun log and checkpoints in {}", out_dir.display());
    Ok(())
}
