//! Training loops, evaluation, and the recurrence-window study.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{heatmap_loss, RunLog, RunLogEntry, Sgd, TrainConfig};
use crate::error::{Error, Result};
use crate::heatmap::{decode_joints, gaussian_targets, GaussianSpec};
use crate::keypoints::Keypoints;
use crate::metrics::{bbox_containment_rate, pck, pckh, pcp, MetricReport};
use crate::model::{UniPose, UniPoseLstm};
use crate::nn::Mode;
use crate::synth::{PoseSample, VideoClip};
use crate::tensor::Tensor;

pub const PCKH_FRACTION: f64 = 0.5;
pub const PCP_FRACTION: f64 = 0.5;

impl TrainConfig {
    /// Plain key-value echo of every field, one per line.
    pub fn echo(&self) -> String {
        let steps = if self.lr_step_epochs.is_empty() {
            "none".to_string()
        } else {
            self.lr_step_epochs
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "initial_lr {}\nlr_step_epochs {}\nmomentum {}\nnormalize_grads {}\nbatch_size {}\nepochs {}\nseed {}\nsigma {}\nlstm_frames {}",
            self.initial_lr,
            steps,
            self.momentum,
            self.normalize_grads,
            self.batch_size,
            self.epochs,
            self.seed,
            self.sigma,
            self.lstm_frames,
        )
    }
}

/// The full metric suite over one evaluation pass. The length-referenced
/// metrics need torso/head/limb segments on the ground truth and are
/// skipped when those are absent.
pub struct EvalReports {
    pub pck: MetricReport,
    pub pckh: Option<MetricReport>,
    pub pcp: Option<MetricReport>,
    pub containment: MetricReport,
}

impl EvalReports {
    pub fn to_text(&self) -> String {
        let mut out = self.pck.to_text();
        if let Some(r) = &self.pckh {
            out.push('\n');
            out.push_str(&r.to_text());
        }
        if let Some(r) = &self.pcp {
            out.push('\n');
            out.push_str(&r.to_text());
        }
        out.push('\n');
        out.push_str(&self.containment.to_text());
        out
    }
}

fn visibility(kp: &Keypoints) -> Vec<bool> {
    (0..kp.len()).map(|j| kp.visible(j)).collect()
}

fn reports(
    pred: &[Keypoints],
    gt: &[Keypoints],
    boxes: &[(f64, f64, f64, f64)],
    pck_fraction: f64,
) -> Result<EvalReports> {
    let pckh_r = if gt[0].head().is_some() && gt[0].torso().is_some() {
        Some(pckh(pred, gt, PCKH_FRACTION)?)
    } else {
        None
    };
    let pcp_r = if gt[0].limbs().is_empty() {
        None
    } else {
        Some(pcp(pred, gt, PCP_FRACTION)?)
    };
    Ok(EvalReports {
        pck: pck(pred, gt, pck_fraction)?,
        pckh: pckh_r,
        pcp: pcp_r,
        containment: bbox_containment_rate(pred, gt, boxes)?,
    })
}

/// Runs the model over every sample and scores the decoded joints against
/// the labels. The containment box is the labeled one.
pub fn evaluate_single(
    model: &UniPose<f32>,
    samples: &[PoseSample],
    pck_fraction: f64,
) -> Result<EvalReports> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one sample".into()));
    }
    let mut pred = Vec::with_capacity(samples.len());
    let mut gt = Vec::with_capacity(samples.len());
    let mut boxes = Vec::with_capacity(samples.len());
    for s in samples {
        let out = model.forward(&s.image, &mut Mode::Eval)?;
        let (kp, _) = decode_joints(&out, s.keypoints.len())?;
        pred.push(kp);
        gt.push(s.keypoints.clone());
        boxes.push(s.bbox);
    }
    reports(&pred, &gt, &boxes, pck_fraction)
}

/// Scores what the target encoder itself produces: labels are rendered to
/// heatmaps, decoded back, and fed through the metric suite. Any healthy
/// encode/decode pair scores 100% here, which pins the round trip.
pub fn evaluate_encoded(samples: &[PoseSample], sigma: f64, pck_fraction: f64) -> Result<EvalReports> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs at least one sample".into()));
    }
    let spec = GaussianSpec { sigma };
    let mut pred = Vec::with_capacity(samples.len());
    let mut gt = Vec::with_capacity(samples.len());
    let mut boxes = Vec::with_capacity(samples.len());
    for s in samples {
        let sh = s.image.shape();
        let maps = gaussian_targets::<f32>(&s.keypoints, s.bbox, sh.h, sh.w, &spec)?;
        let (kp, _) = decode_joints(&maps, s.keypoints.len())?;
        pred.push(kp);
        gt.push(s.keypoints.clone());
        boxes.push(s.bbox);
    }
    reports(&pred, &gt, &boxes, pck_fraction)
}

struct Prepared {
    target: Tensor<f32>,
    vis: Vec<bool>,
}

fn prepare(sample: &PoseSample, spec: &GaussianSpec) -> Result<Prepared> {
    let sh = sample.image.shape();
    Ok(Prepared {
        target: gaussian_targets(&sample.keypoints, sample.bbox, sh.h, sh.w, spec)?,
        vis: visibility(&sample.keypoints),
    })
}

/// Trains the single-frame model with mini-batch gradient descent.
///
/// Writes `train.log`, `last_good.ckpt` (refreshed after every finished
/// epoch, starting from the initial weights) and `best.ckpt` (highest
/// holdout PCK so far; latest epoch when there is no holdout) under
/// `out_dir`. A non-finite loss or update aborts with `Error::Diverged`,
/// leaving `last_good.ckpt` at the previous epoch. With `epochs == 0`
/// nothing is written and the returned log is empty.
pub fn train_single(
    model: &mut UniPose<f32>,
    train: &[PoseSample],
    holdout: &[PoseSample],
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<RunLog> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok(RunLog::in_memory());
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one sample".into()));
    }
    let spec = GaussianSpec { sigma: config.sigma };
    let prepared: Vec<Prepared> = train.iter().map(|s| prepare(s, &spec)).collect::<Result<_>>()?;

    let mut log = RunLog::create(&out_dir.join("train.log"), &config.echo())?;
    let last_good = out_dir.join("last_good.ckpt");
    let best = out_dir.join("best.ckpt");
    model.save(&last_good)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt =
        if config.normalize_grads { Sgd::normalized(config.momentum) } else { Sgd::new(config.momentum) };
    let mut best_pck = f64::NEG_INFINITY;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        let lr = config.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let inv = 1.0 / batch.len() as f32;
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut mode = Mode::Train { rng: &mut rng };
                let out = model.forward(&train[i].image, &mut mode)?;
                let loss = heatmap_loss(&out, &prepared[i].target, &prepared[i].vis)?;
                batch_loss += loss.data()[0] as f64;
                loss.scale(inv).backward()?;
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            opt.step(lr, &mut |f| model.visit_params(f))
                .map_err(|_| Error::Diverged { epoch, step })?;
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let mean_loss = epoch_loss / train.len() as f64;

        let eval_pck = if holdout.is_empty() {
            None
        } else {
            Some(evaluate_single(model, holdout, 0.2)?.pck.overall())
        };
        match eval_pck {
            Some(p) if p > best_pck => {
                best_pck = p;
                model.save(&best)?;
            }
            None => model.save(&best)?,
            _ => {}
        }
        model.save(&last_good)?;
        log.record(RunLogEntry { epoch, loss: mean_loss, lr, eval_pck })?;
    }
    Ok(log)
}

fn clip_frames(clip: &VideoClip) -> Vec<Tensor<f32>> {
    clip.frames.iter().map(|f| f.image.clone()).collect()
}

/// Trains the video variant. Each clip runs through the recurrence with the
/// window from `config.lstm_frames`; the loss is the per-frame heatmap loss
/// averaged over the clip. Checkpoint and log behavior matches
/// [`train_single`].
pub fn train_lstm(
    model: &mut UniPoseLstm<f32>,
    train: &[VideoClip],
    holdout: &[VideoClip],
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<RunLog> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok(RunLog::in_memory());
    }
    if train.is_empty() || train.iter().any(|c| c.frames.is_empty()) {
        return Err(Error::InvalidArgument("training needs at least one non-empty clip".into()));
    }
    let spec = GaussianSpec { sigma: config.sigma };
    let prepared: Vec<Vec<Prepared>> = train
        .iter()
        .map(|c| c.frames.iter().map(|f| prepare(f, &spec)).collect())
        .collect::<Result<_>>()?;

    let mut log = RunLog::create(&out_dir.join("train.log"), &config.echo())?;
    let last_good = out_dir.join("last_good.ckpt");
    let best = out_dir.join("best.ckpt");
    model.save(&last_good)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt =
        if config.normalize_grads { Sgd::normalized(config.momentum) } else { Sgd::new(config.momentum) };
    let mut best_pck = f64::NEG_INFINITY;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        let lr = config.lr_at_epoch(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let inv = 1.0 / batch.len() as f32;
            let mut batch_loss = 0.0;
            for &ci in batch {
                let frames = clip_frames(&train[ci]);
                let mut mode = Mode::Train { rng: &mut rng };
                let outs = model.forward_clip(&frames, config.lstm_frames, &mut mode)?;
                let mut clip_loss: Option<Tensor<f32>> = None;
                for (out, prep) in outs.iter().zip(&prepared[ci]) {
                    let l = heatmap_loss(out, &prep.target, &prep.vis)?;
                    clip_loss = Some(match clip_loss {
                        Some(acc) => acc.add(&l)?,
                        None => l,
                    });
                }
                let clip_loss = clip_loss.unwrap().scale(1.0 / frames.len() as f32);
                batch_loss += clip_loss.data()[0] as f64;
                clip_loss.scale(inv).backward()?;
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            opt.step(lr, &mut |f| model.visit_params(f))
                .map_err(|_| Error::Diverged { epoch, step })?;
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let mean_loss = epoch_loss / train.len() as f64;

        let eval_pck = if holdout.is_empty() {
            None
        } else {
            let (_, rate) =
                &clip_pck(model, holdout, config.lstm_frames, 0.2)?;
            Some(*rate)
        };
        match eval_pck {
            Some(p) if p > best_pck => {
                best_pck = p;
                model.save(&best)?;
            }
            None => model.save(&best)?,
            _ => {}
        }
        model.save(&last_good)?;
        log.record(RunLogEntry { epoch, loss: mean_loss, lr, eval_pck })?;
    }
    Ok(log)
}

/// PCK over every frame of every clip at the given recurrence window.
/// Returns the full report and its overall rate.
pub fn clip_pck(
    model: &UniPoseLstm<f32>,
    clips: &[VideoClip],
    window: usize,
    fraction: f64,
) -> Result<(MetricReport, f64)> {
    if clips.is_empty() || clips.iter().any(|c| c.frames.is_empty()) {
        return Err(Error::InvalidArgument("evaluation needs at least one non-empty clip".into()));
    }
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for clip in clips {
        let frames = clip_frames(clip);
        let outs = model.forward_clip(&frames, window, &mut Mode::Eval)?;
        for (out, frame) in outs.iter().zip(&clip.frames) {
            let (kp, _) = decode_joints(out, frame.keypoints.len())?;
            pred.push(kp);
            gt.push(frame.keypoints.clone());
        }
    }
    let report = pck(&pred, &gt, fraction)?;
    let rate = report.overall();
    Ok((report, rate))
}

/// Scores the same clips at each recurrence window length. Window 1 is the
/// single-frame baseline: state resets before every frame.
pub fn frame_count_study(
    model: &UniPoseLstm<f32>,
    clips: &[VideoClip],
    windows: &[usize],
    fraction: f64,
) -> Result<Vec<(usize, f64)>> {
    if windows.is_empty() {
        return Err(Error::InvalidArgument("study needs at least one window length".into()));
    }
    let mut rows = Vec::with_capacity(windows.len());
    for &w in windows {
        if w == 0 {
            return Err(Error::InvalidArgument("window must be >= 1".into()));
        }
        let (_, rate) = clip_pck(model, clips, w, fraction)?;
        rows.push((w, rate));
    }
    Ok(rows)
}
