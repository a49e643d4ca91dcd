//! Does remembering previous frames help on blurry, occluded video?
//!
//! Trains the recurrent variant briefly on clips with motion blur and a
//! transient occluder, then scores the same weights at recurrence windows
//! 1 through 6. Window 1 throws the state away every frame; longer windows
//! let the model carry heatmaps across frames.
//!
//! Run: cargo run --release --example video_lstm_study

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use unipose::model::{ModelConfig, UniPoseLstm};
use unipose::synth::figure::FigureModel;
use unipose::synth::{synth_video_clip, MotionConfig, VideoClip};
use unipose::train::{frame_count_study, train_lstm, TrainConfig};

fn clips(seed0: u64, n: usize, frames: usize) -> unipose::Result<Vec<VideoClip>> {
    let figure = FigureModel::human14();
    (0..n as u64)
        .map(|j| synth_video_clip(seed0 + j, &figure, frames, 64, 64, &MotionConfig::default()))
        .collect()
}

fn main() -> unipose::Result<()> {
    let out_dir = PathBuf::from("target/example-out/video_lstm_study");
    let train_set = clips(0, 48, 6)?;
    let eval_set = clips(20_000, 12, 6)?;
    let occluded: usize = eval_set
        .iter()
        .flat_map(|c| &c.frames)
        .map(|f| f.occluded.iter().filter(|&&o| o).count())
        .sum();
    println!("{} training clips, {} eval clips ({occluded} occluded joints)", train_set.len(), eval_set.len());

    let config = TrainConfig {
        initial_lr: 1e-3,
        lr_step_epochs: vec![10, 13],
        momentum: 0.9,
        batch_size: 1,
        epochs: 14,
        lstm_frames: 5,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = UniPoseLstm::new(ModelConfig::tiny(14, 64, 64), &mut rng)?;
    let log = train_lstm(&mut model, &train_set, &[], &config, &out_dir)?;
    for entry in &log.entries {
        println!("{entry}");
    }

    println!("\nwindow pck");
    let rows = frame_count_study(&model, &eval_set, &[1, 2, 3, 4, 5, 6], 0.2)?;
    for (window, rate) in &rows {
        println!("{window} {rate:.4}");
    }

    let at = |w: usize| rows.iter().find(|r| r.0 == w).unwrap().1;
    println!(
        "\ncarrying state: {:+.4} from window 1 to 5, {:+.4} more from 5 to 6",
        at(5) - at(1),
        at(6) - at(5)
    );
    Ok(())
}
