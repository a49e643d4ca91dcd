//! Checkpoints: byte-identical round trips and loud failures.
//!
//! Saves a model, loads it back, saves again, and compares bytes; then
//! corrupts the file a few different ways and shows each rejection.
//!
//! Run: cargo run --release --example checkpoint_roundtrip

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unipose::model::{peek_checkpoint, ModelConfig, UniPose};
use unipose::nn::Mode;
use unipose::synth::figure::FigureModel;
use unipose::synth::synth_pose_sample;

fn main() -> unipose::Result<()> {
    let dir = PathBuf::from("target/example-out/checkpoint_roundtrip");
    std::fs::create_dir_all(&dir).map_err(|e| unipose::Error::io(&dir, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut model = UniPose::<f32>::new(ModelConfig::tiny(14, 64, 64), &mut rng)?;
    let a = dir.join("a.ckpt");
    let b = dir.join("b.ckpt");
    model.save(&a)?;

    let info = peek_checkpoint(&a)?;
    println!(
        "saved {} ({} variant, {} parameters, {} bytes)",
        a.display(),
        info.variant,
        info.parameter_count,
        std::fs::metadata(&a).unwrap().len()
    );

    let mut reloaded = UniPose::<f32>::load(&a)?;
    reloaded.save(&b)?;
    let bytes_a = std::fs::read(&a).unwrap();
    let bytes_b = std::fs::read(&b).unwrap();
    assert_eq!(bytes_a, bytes_b);
    println!("save -> load -> save reproduced all {} bytes", bytes_a.len());

    // Same weights, same outputs.
    let sample = synth_pose_sample(3, &FigureModel::human14(), 64, 64)?;
    let out_a = model.forward(&sample.image, &mut Mode::Eval)?;
    let out_b = reloaded.forward(&sample.image, &mut Mode::Eval)?;
    assert_eq!(out_a.data(), out_b.data());
    println!("reloaded model is bit-identical on a forward pass\n");

    // Each kind of damage gets its own error.
    let truncated = dir.join("truncated.ckpt");
    std::fs::write(&truncated, &bytes_a[..bytes_a.len() - 64]).unwrap();
    report("last 64 bytes cut off", UniPose::<f32>::load(&truncated).err());

    let flipped = dir.join("version.ckpt");
    let mut bytes = bytes_a.clone();
    let pos = find(&bytes, b"format_version 1").unwrap();
    bytes[pos + b"format_version ".len()] = b'9';
    std::fs::write(&flipped, &bytes).unwrap();
    report("format_version edited to 9", UniPose::<f32>::load(&flipped).err());

    let garbage = dir.join("garbage.ckpt");
    std::fs::write(&garbage, b"these are not the weights you stored").unwrap();
    report("arbitrary bytes", UniPose::<f32>::load(&garbage).err());

    Ok(())
}

fn report(what: &str, err: Option<unipose::Error>) {
    let err = err.expect("damaged checkpoints must not load");
    println!("{what}:\n  {err}\n  category {:?} -> exit code {}", err.category(), err.category().exit_code());
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}
