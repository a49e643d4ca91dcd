//! Command-line surface. The binary is a thin wrapper over [`run`]; every
//! subcommand writes its report to the given writer so tests can capture it.
//!
//! Exit codes: 0 success, 2 usage, 3 io, 4 data, 5 numeric, 1 internal.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::analyze;
use crate::error::{Error, Result};
use crate::heatmap::decode_joints;
use crate::keypoints::HUMAN14_NAMES;
use crate::model::{
    decode_bbox, peek_checkpoint, ModelConfig, UniPose, UniPoseLstm, Variant,
};
use crate::nn::Mode;
use crate::synth::annot::{load_annotations, save_annotations, ClipRecord, Dataset, SampleRecord};
use crate::synth::figure::FigureModel;
use crate::synth::render::{load_png, render_overlay, save_png};
use crate::synth::{synth_pose_sample, synth_video_clip, MotionConfig, PoseSample, VideoClip};
use crate::train::{
    clip_pck, evaluate_encoded, evaluate_single, frame_count_study, train_lstm, train_single,
    TrainConfig,
};
use crate::wasp::{Aspp, Wasp, WaspConfig};

macro_rules! w {
    ($dst:expr, $($arg:tt)*) => {
        writeln!($dst, $($arg)*).map_err(|e| Error::io("<output>", e))?
    };
}

#[derive(Parser)]
#[command(
    name = "unipose",
    version,
    about = "Single-frame and video pose estimation on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset: images, clips, and an annotation file.
    Synth(SynthArgs),
    /// Train the single-frame or video model.
    Train(TrainArgs),
    /// Score a checkpoint (or the label encoder itself) with the metric suite.
    Eval(EvalArgs),
    /// Run one input through a checkpoint and write an overlay image.
    Infer(InferArgs),
    /// Compare the waterfall context module against the parallel-pyramid baseline.
    ReportArch(ReportArchArgs),
    /// Score one video checkpoint at several recurrence window lengths.
    StudyLstm(StudyArgs),
}

/// Runs the CLI against process stdout and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_to(argv, &mut std::io::stdout())
}

/// Same as [`run`] but reports to an arbitrary writer.
pub fn run_to<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.category().exit_code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a, out),
        Cmd::Train(a) => cmd_train(a, out),
        Cmd::Eval(a) => cmd_eval(a, out),
        Cmd::Infer(a) => cmd_infer(a, out),
        Cmd::ReportArch(a) => cmd_report_arch(a, out),
        Cmd::StudyLstm(a) => cmd_study_lstm(a, out),
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory; receives images/, clips/, and annotations.txt.
    #[arg(long)]
    out: PathBuf,
    /// Number of single-frame samples.
    #[arg(long, default_value_t = 0)]
    count: usize,
    /// Number of video clips.
    #[arg(long, default_value_t = 0)]
    clips: usize,
    /// Frames per clip.
    #[arg(long, default_value_t = 6)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Base seed; sample i uses seed+i, clip j uses seed+count+j.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Freeze all motion in clips.
    #[arg(long)]
    still: bool,
    /// Disable motion blur in clips.
    #[arg(long)]
    no_blur: bool,
    /// Disable the transient occluder in clips.
    #[arg(long)]
    no_occlusion: bool,
}

fn clip_motion(still: bool, no_blur: bool, no_occlusion: bool) -> MotionConfig {
    let mut m = if still { MotionConfig::still() } else { MotionConfig::default() };
    if no_blur {
        m.blur = false;
    }
    if no_occlusion {
        m.occlusion = false;
    }
    m
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    if a.count == 0 && a.clips == 0 {
        return Err(Error::Config("nothing to generate: count and clips are both 0".into()));
    }
    let figure = FigureModel::human14();
    let motion = clip_motion(a.still, a.no_blur, a.no_occlusion);
    let mut dataset = Dataset::new_human14(a.out.clone());

    for i in 0..a.count {
        let sample = synth_pose_sample(a.seed + i as u64, &figure, a.height, a.width)?;
        let rel = PathBuf::from(format!("images/{i:05}.png"));
        save_png(&sample.image, &a.out.join(&rel))?;
        dataset.samples.push(SampleRecord {
            image: rel,
            bbox: sample.bbox,
            keypoints: sample.keypoints,
        });
    }
    for j in 0..a.clips {
        let clip = synth_video_clip(
            a.seed + (a.count + j) as u64,
            &figure,
            a.frames,
            a.height,
            a.width,
            &motion,
        )?;
        let mut frames = Vec::with_capacity(clip.frames.len());
        for (t, frame) in clip.frames.iter().enumerate() {
            let rel = PathBuf::from(format!("clips/{j:04}/{t:03}.png"));
            save_png(&frame.image, &a.out.join(&rel))?;
            frames.push(SampleRecord {
                image: rel,
                bbox: frame.bbox,
                keypoints: frame.keypoints.clone(),
            });
        }
        dataset.clips.push(ClipRecord { frames });
    }

    let annot = a.out.join("annotations.txt");
    save_annotations(&annot, &dataset)?;
    w!(out, "wrote {} samples and {} clips under {}", a.count, a.clips, a.out.display());
    w!(out, "annotations {}", annot.display());
    Ok(())
}

fn dataset_samples(ds: &Dataset) -> Result<Vec<PoseSample>> {
    ds.samples.iter().map(|rec| record_sample(ds, rec)).collect()
}

fn record_sample(ds: &Dataset, rec: &SampleRecord) -> Result<PoseSample> {
    Ok(PoseSample {
        image: load_png(&ds.resolve(rec))?,
        keypoints: ds.with_references(&rec.keypoints)?,
        bbox: rec.bbox,
        seed: 0,
        occluded: vec![false; ds.joints],
    })
}

fn dataset_clips(ds: &Dataset) -> Result<Vec<VideoClip>> {
    ds.clips
        .iter()
        .map(|clip| {
            let frames =
                clip.frames.iter().map(|rec| record_sample(ds, rec)).collect::<Result<_>>()?;
            Ok(VideoClip { frames, motion: MotionConfig::still(), occlusion: None })
        })
        .collect()
}

#[derive(Args)]
struct TrainArgs {
    /// Plain key-value config file; any flag below overrides its value.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Annotation file to train from.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate this many training samples (clips with --lstm) instead of --data.
    #[arg(long)]
    synth: Option<usize>,
    /// Held-out count: reserved from the end of --data, or generated extra with --synth.
    #[arg(long, default_value_t = 0)]
    holdout: usize,
    /// Output directory for checkpoints and the run log.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train the recurrent video variant on clips.
    #[arg(long)]
    lstm: bool,
    /// Model preset: tiny or default.
    #[arg(long, default_value = "tiny")]
    model: String,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Frames per generated clip with --synth --lstm.
    #[arg(long, default_value_t = 6)]
    frames: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs at which the learning rate decays by 10 (comma separated).
    #[arg(long, value_delimiter = ',')]
    lr_steps: Option<Vec<usize>>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gaussian target spread in pixels.
    #[arg(long)]
    sigma: Option<f64>,
    /// Recurrence window for --lstm training.
    #[arg(long)]
    lstm_frames: Option<usize>,
}

fn set_config_key(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let bad = |what: &str| Error::Config(format!("config key {key}: {what}: `{value}`"));
    match key {
        "initial_lr" => config.initial_lr = value.parse().map_err(|_| bad("expected a number"))?,
        "lr_step_epochs" => {
            config.lr_step_epochs = if value == "none" {
                Vec::new()
            } else {
                value
                    .split(',')
                    .map(|p| p.trim().parse().map_err(|_| bad("expected epochs")))
                    .collect::<Result<_>>()?
            }
        }
        "momentum" => config.momentum = value.parse().map_err(|_| bad("expected a number"))?,
        "normalize_grads" => {
            config.normalize_grads = value.parse().map_err(|_| bad("expected true or false"))?
        }
        "batch_size" => config.batch_size = value.parse().map_err(|_| bad("expected an integer"))?,
        "epochs" => config.epochs = value.parse().map_err(|_| bad("expected an integer"))?,
        "seed" => config.seed = value.parse().map_err(|_| bad("expected an integer"))?,
        "sigma" => config.sigma = value.parse().map_err(|_| bad("expected a number"))?,
        "lstm_frames" => {
            config.lstm_frames = value.parse().map_err(|_| bad("expected an integer"))?
        }
        _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
    }
    Ok(())
}

fn apply_config_file(path: &Path, config: &mut TrainConfig) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = match line.split_once(char::is_whitespace) {
            Some((k, v)) => (k, v.trim()),
            None => {
                return Err(Error::Config(format!(
                    "{}:{}: expected `key value`, got `{line}`",
                    path.display(),
                    n + 1
                )))
            }
        };
        set_config_key(config, key, value)
            .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
    }
    Ok(())
}

fn build_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = &a.config {
        apply_config_file(path, &mut config)?;
    }
    if let Some(v) = a.epochs {
        config.epochs = v;
    }
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.lr {
        config.initial_lr = v;
    }
    if let Some(v) = &a.lr_steps {
        config.lr_step_epochs = v.clone();
    }
    if let Some(v) = a.momentum {
        config.momentum = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.sigma {
        config.sigma = v;
    }
    if let Some(v) = a.lstm_frames {
        config.lstm_frames = v;
    }
    config.validate()?;
    Ok(config)
}

fn model_config(preset: &str, h: usize, w: usize) -> Result<ModelConfig> {
    let config = match preset {
        "tiny" => ModelConfig::tiny(14, h, w),
        "default" => ModelConfig { input_h: h, input_w: w, ..ModelConfig::default() },
        other => {
            return Err(Error::Config(format!("unknown model preset `{other}` (tiny, default)")))
        }
    };
    config.validate()?;
    Ok(config)
}

fn cmd_train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let config = build_train_config(&a)?;
    w!(out, "train config:");
    for line in config.echo().lines() {
        w!(out, "  {line}");
    }
    if config.epochs == 0 {
        w!(out, "epochs is 0; nothing to train");
        return Ok(());
    }

    let out_dir = a
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required when epochs > 0".into()))?;
    let mcfg = model_config(&a.model, a.height, a.width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let figure = FigureModel::human14();

    let log = if a.lstm {
        let (train_set, holdout) = match (&a.data, a.synth) {
            (Some(path), None) => split_tail(dataset_clips(&load_annotations(path)?)?, a.holdout),
            (None, Some(n)) => {
                let gen = |j: u64| {
                    synth_video_clip(
                        config.seed + j,
                        &figure,
                        a.frames,
                        a.height,
                        a.width,
                        &MotionConfig::default(),
                    )
                };
                let train_set = (0..n as u64).map(gen).collect::<Result<Vec<_>>>()?;
                let holdout =
                    (n as u64..(n + a.holdout) as u64).map(gen).collect::<Result<Vec<_>>>()?;
                (train_set, holdout)
            }
            _ => return Err(Error::Config("exactly one of --data or --synth is required".into())),
        };
        w!(out, "training video model on {} clips ({} held out)", train_set.len(), holdout.len());
        let mut model = UniPoseLstm::new(mcfg, &mut rng)?;
        train_lstm(&mut model, &train_set, &holdout, &config, &out_dir)?
    } else {
        let (train_set, holdout) = match (&a.data, a.synth) {
            (Some(path), None) => split_tail(dataset_samples(&load_annotations(path)?)?, a.holdout),
            (None, Some(n)) => {
                let gen =
                    |i: u64| synth_pose_sample(config.seed + i, &figure, a.height, a.width);
                let train_set = (0..n as u64).map(gen).collect::<Result<Vec<_>>>()?;
                let holdout =
                    (n as u64..(n + a.holdout) as u64).map(gen).collect::<Result<Vec<_>>>()?;
                (train_set, holdout)
            }
            _ => return Err(Error::Config("exactly one of --data or --synth is required".into())),
        };
        w!(
            out,
            "training single-frame model on {} samples ({} held out)",
            train_set.len(),
            holdout.len()
        );
        let mut model = UniPose::new(mcfg, &mut rng)?;
        train_single(&mut model, &train_set, &holdout, &config, &out_dir)?
    };

    for entry in &log.entries {
        w!(out, "{entry}");
    }
    w!(out, "checkpoints in {}", out_dir.display());
    Ok(())
}

fn split_tail<T>(mut all: Vec<T>, holdout: usize) -> (Vec<T>, Vec<T>) {
    let keep = all.len().saturating_sub(holdout);
    let tail = all.split_off(keep);
    (all, tail)
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to score; not needed with --encoded.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Annotation file to evaluate on.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate this many samples (clips for a video checkpoint) instead of --data.
    #[arg(long)]
    synth: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Frames per generated clip.
    #[arg(long, default_value_t = 6)]
    frames: usize,
    /// PCK threshold as a fraction of the torso length.
    #[arg(long, default_value_t = 0.2)]
    pck: f64,
    /// Score the label encoder's own heatmaps instead of a model.
    #[arg(long)]
    encoded: bool,
    /// Gaussian spread for --encoded.
    #[arg(long, default_value_t = 3.0)]
    sigma: f64,
    /// Recurrence window for a video checkpoint; defaults to its config.
    #[arg(long)]
    window: Option<usize>,
}

fn eval_samples(a: &EvalArgs) -> Result<Vec<PoseSample>> {
    match (&a.data, a.synth) {
        (Some(path), None) => dataset_samples(&load_annotations(path)?),
        (None, Some(n)) => {
            let figure = FigureModel::human14();
            (0..n as u64)
                .map(|i| synth_pose_sample(a.seed + i, &figure, a.height, a.width))
                .collect()
        }
        _ => Err(Error::Config("exactly one of --data or --synth is required".into())),
    }
}

fn eval_clips(a: &EvalArgs) -> Result<Vec<VideoClip>> {
    match (&a.data, a.synth) {
        (Some(path), None) => dataset_clips(&load_annotations(path)?),
        (None, Some(n)) => {
            let figure = FigureModel::human14();
            (0..n as u64)
                .map(|j| {
                    synth_video_clip(
                        a.seed + j,
                        &figure,
                        a.frames,
                        a.height,
                        a.width,
                        &MotionConfig::default(),
                    )
                })
                .collect()
        }
        _ => Err(Error::Config("exactly one of --data or --synth is required".into())),
    }
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    if a.encoded {
        let samples = eval_samples(&a)?;
        let reports = evaluate_encoded(&samples, a.sigma, a.pck)?;
        w!(out, "{}", reports.to_text());
        return Ok(());
    }
    let path = a
        .checkpoint
        .clone()
        .ok_or_else(|| Error::Config("--checkpoint is required unless --encoded".into()))?;
    match peek_checkpoint(&path)?.variant {
        Variant::Single => {
            let model = UniPose::<f32>::load(&path)?;
            let samples = eval_samples(&a)?;
            let reports = evaluate_single(&model, &samples, a.pck)?;
            w!(out, "{}", reports.to_text());
        }
        Variant::Lstm => {
            let model = UniPoseLstm::<f32>::load(&path)?;
            let clips = eval_clips(&a)?;
            let window = a.window.unwrap_or(model.config().lstm_frames);
            let (report, _) = clip_pck(&model, &clips, window, a.pck)?;
            w!(out, "window {window}");
            w!(out, "{}", report.to_text());
        }
    }
    Ok(())
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// PNG input for a single-frame checkpoint.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Generate the input from this seed instead of --image.
    #[arg(long)]
    sample_seed: Option<u64>,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Frames in the generated clip for a video checkpoint.
    #[arg(long, default_value_t = 6)]
    frames: usize,
    /// Overlay output path; video checkpoints write one file per frame.
    #[arg(long)]
    out: PathBuf,
}

fn joint_name(k: usize, i: usize) -> String {
    if k == HUMAN14_NAMES.len() {
        HUMAN14_NAMES[i].to_string()
    } else {
        format!("joint{i}")
    }
}

fn write_decoded(
    out: &mut dyn Write,
    maps: &crate::tensor::Tensor<f32>,
    joints: usize,
    image: &crate::tensor::Tensor<f32>,
    overlay: &Path,
) -> Result<()> {
    let (kp, conf) = decode_joints(maps, joints)?;
    let bbox = decode_bbox(maps, joints)?;
    for i in 0..joints {
        let (x, y) = kp.position(i);
        w!(out, "joint {} {x} {y} conf {:.4}", joint_name(joints, i), conf[i]);
    }
    w!(out, "bbox {} {} {} {}", bbox.0, bbox.1, bbox.2, bbox.3);
    render_overlay(image, &kp, bbox, overlay)?;
    w!(out, "overlay {}", overlay.display());
    Ok(())
}

fn numbered(path: &Path, t: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("overlay");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("png");
    path.with_file_name(format!("{stem}-{t:03}.{ext}"))
}

fn cmd_infer(a: InferArgs, out: &mut dyn Write) -> Result<()> {
    let info = peek_checkpoint(&a.checkpoint)?;
    let joints = info.config.joints;
    match info.variant {
        Variant::Single => {
            let model = UniPose::<f32>::load(&a.checkpoint)?;
            let image = match (&a.image, a.sample_seed) {
                (Some(path), None) => load_png(path)?,
                (None, Some(seed)) => {
                    synth_pose_sample(seed, &FigureModel::human14(), a.height, a.width)?.image
                }
                _ => {
                    return Err(Error::Config(
                        "exactly one of --image or --sample-seed is required".into(),
                    ))
                }
            };
            let maps = model.forward(&image, &mut Mode::Eval)?;
            write_decoded(out, &maps, joints, &image, &a.out)?;
        }
        Variant::Lstm => {
            let seed = a.sample_seed.ok_or_else(|| {
                Error::Config("a video checkpoint needs --sample-seed (clip input)".into())
            })?;
            let model = UniPoseLstm::<f32>::load(&a.checkpoint)?;
            let clip = synth_video_clip(
                seed,
                &FigureModel::human14(),
                a.frames,
                a.height,
                a.width,
                &MotionConfig::default(),
            )?;
            let frames: Vec<_> = clip.frames.iter().map(|f| f.image.clone()).collect();
            let outs = model.forward_clip(&frames, model.config().lstm_frames, &mut Mode::Eval)?;
            for (t, maps) in outs.iter().enumerate() {
                w!(out, "frame {t}");
                write_decoded(out, maps, joints, &frames[t], &numbered(&a.out, t))?;
            }
        }
    }
    Ok(())
}

#[derive(Args)]
struct ReportArchArgs {
    /// Context-module input channels.
    #[arg(long)]
    in_channels: Option<usize>,
    /// Per-branch channels.
    #[arg(long)]
    branch_channels: Option<usize>,
    /// Fused output channels.
    #[arg(long)]
    out_channels: Option<usize>,
}

fn cmd_report_arch(a: ReportArchArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = WaspConfig::default();
    if let Some(v) = a.in_channels {
        config.in_channels = v;
    }
    if let Some(v) = a.branch_channels {
        config.branch_channels = v;
    }
    if let Some(v) = a.out_channels {
        config.out_channels = v;
    }
    config.validate()?;
    let wasp = analyze(&Wasp::<f32>::module_spec(&config))?;
    let aspp = analyze(&Aspp::<f32>::module_spec(&config))?;
    w!(out, "{wasp}");
    w!(out, "{aspp}");
    w!(out, "wasp_params {}", wasp.params);
    w!(out, "aspp_params {}", aspp.params);
    w!(out, "wasp_receptive_field {}", wasp.receptive_field);
    w!(out, "aspp_receptive_field {}", aspp.receptive_field);
    w!(out, "wasp_params_smaller {}", wasp.params < aspp.params);
    Ok(())
}

#[derive(Args)]
struct StudyArgs {
    /// Video checkpoint to study.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Annotation file with clips.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Generate this many clips instead of --data.
    #[arg(long)]
    clips: Option<usize>,
    #[arg(long, default_value_t = 6)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Window lengths to score (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
    windows: Vec<usize>,
    #[arg(long, default_value_t = 0.2)]
    pck: f64,
}

fn cmd_study_lstm(a: StudyArgs, out: &mut dyn Write) -> Result<()> {
    let info = peek_checkpoint(&a.checkpoint)?;
    if info.variant != Variant::Lstm {
        return Err(Error::Config("study-lstm needs a video checkpoint".into()));
    }
    let model = UniPoseLstm::<f32>::load(&a.checkpoint)?;
    let clips = match (&a.data, a.clips) {
        (Some(path), None) => dataset_clips(&load_annotations(path)?)?,
        (None, Some(n)) => {
            let figure = FigureModel::human14();
            (0..n as u64)
                .map(|j| {
                    synth_video_clip(
                        a.seed + j,
                        &figure,
                        a.frames,
                        a.height,
                        a.width,
                        &MotionConfig::default(),
                    )
                })
                .collect::<Result<_>>()?
        }
        _ => return Err(Error::Config("exactly one of --data or --clips is required".into())),
    };
    let rows = frame_count_study(&model, &clips, &a.windows, a.pck)?;
    w!(out, "window pck");
    for (window, rate) in rows {
        w!(out, "{window} {rate:.4}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cli(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let mut argv = vec!["unipose"];
        argv.extend_from_slice(args);
        let code = run_to(argv, &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    fn field(text: &str, key: &str) -> u64 {
        text.lines()
            .find_map(|l| l.strip_prefix(key).map(|v| v.trim().parse().unwrap()))
            .unwrap_or_else(|| panic!("missing {key} in:\n{text}"))
    }

    #[test]
    fn report_arch_compares_the_modules() {
        let (code, text) = run_cli(&["report-arch"]);
        assert_eq!(code, 0, "{text}");
        assert_eq!(field(&text, "wasp_receptive_field"), 121);
        assert_eq!(field(&text, "aspp_receptive_field"), 49);
        assert!(field(&text, "wasp_params") < field(&text, "aspp_params"));
        assert!(text.contains("wasp_params_smaller true"));
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_cli(&["no-such-command"]).0, 2);
        assert_eq!(run_cli(&["synth"]).0, 2, "missing required --out");
        // Valid parse but contradictory flags is also a usage error.
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d");
        let (code, _) = run_cli(&["synth", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 2, "count and clips both zero");
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run_cli(&["--help"]).0, 0);
    }

    #[test]
    fn train_zero_epochs_echoes_config_and_succeeds() {
        let (code, text) = run_cli(&["train", "--epochs", "0"]);
        assert_eq!(code, 0, "{text}");
        assert!(text.contains("epochs 0"));
        assert!(text.contains("initial_lr 0.0001"));
        assert!(text.contains("nothing to train"));
    }

    #[test]
    fn config_file_applies_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "# comment\nepochs 7\nsigma 2.5\nlr_step_epochs 2,4\n").unwrap();
        let base = TrainArgs {
            config: Some(path.clone()),
            data: None,
            synth: None,
            holdout: 0,
            out: None,
            lstm: false,
            model: "tiny".into(),
            height: 64,
            width: 64,
            frames: 6,
            epochs: None,
            batch_size: None,
            lr: None,
            lr_steps: None,
            momentum: None,
            seed: None,
            sigma: None,
            lstm_frames: None,
        };
        let c = build_train_config(&base).unwrap();
        assert_eq!(c.epochs, 7);
        assert_eq!(c.sigma, 2.5);
        assert_eq!(c.lr_step_epochs, vec![2, 4]);

        let over = TrainArgs { epochs: Some(1), sigma: Some(4.0), ..base };
        let c = build_train_config(&over).unwrap();
        assert_eq!(c.epochs, 1);
        assert_eq!(c.sigma, 4.0);
        assert_eq!(c.lr_step_epochs, vec![2, 4]);

        std::fs::write(&path, "mystery 3\n").unwrap();
        let bad = TrainArgs { epochs: None, sigma: None, ..over };
        assert!(matches!(build_train_config(&bad), Err(Error::Config(m)) if m.contains("mystery")));
    }

    #[test]
    fn synth_then_encoded_eval_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data");
        let (code, _) = run_cli(&[
            "synth", "--out", out.to_str().unwrap(), "--count", "3", "--clips", "1", "--frames",
            "2", "--height", "48", "--width", "48", "--seed", "600",
        ]);
        assert_eq!(code, 0);
        assert!(out.join("images/00002.png").exists());
        assert!(out.join("clips/0000/001.png").exists());
        let annot = out.join("annotations.txt");
        let (code, text) =
            run_cli(&["eval", "--encoded", "--data", annot.to_str().unwrap()]);
        assert_eq!(code, 0, "{text}");
        assert_eq!(text.matches("overall 1.000000").count(), 4, "{text}");
    }

    #[test]
    fn infer_writes_an_overlay() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("m.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = UniPose::<f32>::new(ModelConfig::tiny(14, 48, 48), &mut rng).unwrap();
        model.save(&ckpt).unwrap();
        let overlay = dir.path().join("ov.png");
        let (code, text) = run_cli(&[
            "infer", "--checkpoint", ckpt.to_str().unwrap(), "--sample-seed", "11", "--height",
            "48", "--width", "48", "--out", overlay.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{text}");
        assert!(overlay.exists());
        assert!(text.contains("joint head_top"));
        assert!(text.contains("bbox "));
    }

    #[test]
    fn missing_and_corrupt_checkpoints_use_distinct_codes() {
        let dir = tempfile::tempdir().unwrap();
        let gone = dir.path().join("gone.ckpt");
        let (code, _) = run_cli(&["eval", "--checkpoint", gone.to_str().unwrap(), "--synth", "1"]);
        assert_eq!(code, 3, "missing file is an io error");

        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"not a checkpoint at all").unwrap();
        let (code, _) = run_cli(&["eval", "--checkpoint", junk.to_str().unwrap(), "--synth", "1"]);
        assert_eq!(code, 4, "corrupt file is a data error");
    }

    #[test]
    fn study_lstm_prints_a_window_table() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("v.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = UniPoseLstm::<f32>::new(ModelConfig::tiny(14, 48, 48), &mut rng).unwrap();
        model.save(&ckpt).unwrap();
        let (code, text) = run_cli(&[
            "study-lstm", "--checkpoint", ckpt.to_str().unwrap(), "--clips", "1", "--frames", "3",
            "--height", "48", "--width", "48", "--windows", "1,2",
        ]);
        assert_eq!(code, 0, "{text}");
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "window pck");
        assert!(lines[1].starts_with("1 "));
        assert!(lines[2].starts_with("2 "));
    }
}
