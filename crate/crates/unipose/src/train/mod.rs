//! Training support: the masked heatmap loss, plain SGD with optional
//! momentum, the step learning-rate schedule, and the append-only run log.

mod run;

pub use run::{
    clip_pck, evaluate_encoded, evaluate_single, frame_count_study, train_lstm, train_single,
    EvalReports, PCKH_FRACTION, PCP_FRACTION,
};

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::ParamVisitor;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Epochs at which the learning rate drops by another factor of 10.
    pub lr_step_epochs: Vec<usize>,
    /// 0 disables momentum.
    pub momentum: f64,
    /// Rescale gradients to unit RMS per parameter tensor before each
    /// update. See [`Sgd::normalized`].
    pub normalize_grads: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub sigma: f64,
    /// Recurrence window for the video variant.
    pub lstm_frames: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-4,
            lr_step_epochs: Vec::new(),
            momentum: 0.0,
            normalize_grads: true,
            batch_size: 4,
            epochs: 10,
            seed: 0,
            sigma: 3.0,
            lstm_frames: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0) {
            return Err(Error::Config("initial_lr must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config("sigma must be > 0".into()));
        }
        if self.lstm_frames == 0 {
            return Err(Error::Config("lstm_frames must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        let mut prev = None;
        for &e in &self.lr_step_epochs {
            if prev.is_some_and(|p| e <= p) {
                return Err(Error::Config("lr_step_epochs must be strictly increasing".into()));
            }
            prev = Some(e);
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        lr_at_epoch(self.initial_lr, &self.lr_step_epochs, epoch)
    }
}

/// Step schedule: one factor-of-10 drop per boundary already passed.
pub fn lr_at_epoch(initial: f64, boundaries: &[usize], epoch: usize) -> f64 {
    let passed = boundaries.iter().filter(|&&b| epoch >= b).count();
    initial * 0.1f64.powi(passed as i32)
}

/// Mean squared error over heatmap channels, with the channels of
/// not-visible joints masked out. The two bbox corner channels always
/// count. The denominator is the number of unmasked elements.
pub fn heatmap_loss<E: Element>(
    pred: &Tensor<E>,
    target: &Tensor<E>,
    visibility: &[bool],
) -> Result<Tensor<E>> {
    let sh = pred.shape();
    if sh != target.shape() {
        return Err(Error::shape(
            "heatmap loss",
            sh.to_string(),
            target.shape().to_string(),
        ));
    }
    if sh.n != 1 {
        return Err(Error::InvalidArgument(
            "heatmap loss works on single samples; accumulate gradients for batches".into(),
        ));
    }
    if visibility.len() + 2 != sh.c {
        return Err(Error::shape(
            "heatmap loss visibility channels",
            format!("{} (channels - 2)", sh.c.saturating_sub(2)),
            visibility.len().to_string(),
        ));
    }
    let plane = sh.h * sh.w;
    let mut mask = vec![E::one(); sh.numel()];
    let mut counted = sh.numel();
    for (j, &v) in visibility.iter().enumerate() {
        if !v {
            mask[j * plane..(j + 1) * plane].fill(E::zero());
            counted -= plane;
        }
    }
    let mask = Tensor::new(sh, mask)?;
    let diff = pred.sub(target)?;
    let sq = diff.mul(&diff)?;
    Ok(sq.mul(&mask)?.sum_all().scale(E::from_f64(1.0 / counted as f64)))
}

/// Gradient descent over the parameter-visitor interface. Velocities are
/// keyed by parameter name, so the same optimizer instance must be reused
/// across steps for momentum to accumulate.
pub struct Sgd<E: Element = f32> {
    pub momentum: f64,
    /// Rescale each gradient to unit RMS before the update. Deep heatmap
    /// stacks concentrate most of the raw gradient magnitude in the last
    /// layers; this keeps every layer moving at the learning-rate scale.
    pub normalize: bool,
    velocity: HashMap<String, Vec<E>>,
}

impl<E: Element> Sgd<E> {
    pub fn new(momentum: f64) -> Self {
        Sgd { momentum, normalize: false, velocity: HashMap::new() }
    }

    pub fn normalized(momentum: f64) -> Self {
        Sgd { momentum, normalize: true, velocity: HashMap::new() }
    }

    /// Applies one update with the given learning rate and clears gradients.
    /// Parameters without a gradient are left untouched.
    pub fn step(
        &mut self,
        lr: f64,
        visit: &mut dyn FnMut(&mut ParamVisitor<E>),
    ) -> Result<()> {
        let mut failure: Option<Error> = None;
        visit(&mut |name, t| {
            if failure.is_some() {
                return;
            }
            let Some(mut grad) = t.take_grad() else { return };
            if self.normalize {
                let norm = grad
                    .iter()
                    .fold(0.0f64, |acc, g| acc + Element::to_f64(*g).powi(2))
                    .sqrt();
                let k = E::from_f64((grad.len() as f64).sqrt() / (norm + 1e-12));
                for g in &mut grad {
                    *g = *g * k;
                }
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![E::zero(); grad.len()]);
            let m = E::from_f64(self.momentum);
            let lr_e = E::from_f64(lr);
            let mut data = t.data().to_vec();
            let mut bad = false;
            for ((w, g), vel) in data.iter_mut().zip(&grad).zip(v.iter_mut()) {
                *vel = m * *vel + *g;
                *w = *w - lr_e * *vel;
                bad |= !w.is_finite();
            }
            if bad {
                failure = Some(Error::NonFinite(format!("parameter {name} after update")));
                return;
            }
            *t = Tensor::new_param(t.shape(), data).unwrap();
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLogEntry {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub eval_pck: Option<f64>,
}

impl fmt::Display for RunLogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch {} loss {:.6e} lr {:.3e}", self.epoch, self.loss, self.lr)?;
        if let Some(p) = self.eval_pck {
            write!(f, " pck {p:.4}")?;
        }
        Ok(())
    }
}

/// Line-oriented, append-only training log. When given a path, every entry
/// is flushed to disk as it is recorded.
pub struct RunLog {
    pub entries: Vec<RunLogEntry>,
    path: Option<PathBuf>,
}

impl RunLog {
    pub fn in_memory() -> Self {
        RunLog { entries: Vec::new(), path: None }
    }

    pub fn create(path: &Path, config_echo: &str) -> Result<Self> {
        let mut header = String::from("runlog v1\n");
        for line in config_echo.lines() {
            header.push_str(&format!("config {line}\n"));
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, header).map_err(|e| Error::io(path, e))?;
        Ok(RunLog { entries: Vec::new(), path: Some(path.to_path_buf()) })
    }

    pub fn record(&mut self, entry: RunLogEntry) -> Result<()> {
        if let Some(path) = &self.path {
            use std::io::Write;
            let mut f = std::fs::OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path.clone(), e))?;
            writeln!(f, "{entry}").map_err(|e| Error::io(path.clone(), e))?;
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lr_schedule_is_exact_powers_of_ten() {
        let b = vec![3, 6];
        assert_eq!(lr_at_epoch(1e-4, &b, 0), 1e-4);
        assert_eq!(lr_at_epoch(1e-4, &b, 2), 1e-4);
        assert_eq!(lr_at_epoch(1e-4, &b, 3), 1e-4 * 0.1);
        assert_eq!(lr_at_epoch(1e-4, &b, 5), 1e-4 * 0.1);
        assert_eq!(lr_at_epoch(1e-4, &b, 6), 1e-4 * 0.1f64.powi(2));
        assert_eq!(lr_at_epoch(1e-4, &b, 100), 1e-4 * 0.1f64.powi(2));
        assert_eq!(lr_at_epoch(1e-4, &[], 50), 1e-4);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        c = TrainConfig::default();
        c.lr_step_epochs = vec![5, 5];
        assert!(c.validate().is_err());
        c = TrainConfig::default();
        c.momentum = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn loss_zero_on_equal_and_one_on_unit_offset() {
        let sh = Shape::new(1, 4, 6, 6);
        let t = Tensor::<f64>::full(sh, 0.3);
        let vis = [true, true];
        assert_eq!(heatmap_loss(&t, &t, &vis).unwrap().data()[0], 0.0);
        let p = Tensor::<f64>::full(sh, 1.3);
        assert_eq!(heatmap_loss(&p, &t, &vis).unwrap().data()[0], 1.0);
    }

    #[test]
    fn masked_channels_leave_loss_and_denominator() {
        let sh = Shape::new(1, 4, 4, 4);
        let plane = 16;
        let target = Tensor::<f64>::zeros(sh);
        // Error of 3 on one pixel of the second bbox channel only.
        let mut data = vec![0.0; 4 * plane];
        data[3 * plane + 5] = 3.0;
        let pred = Tensor::new(sh, data).unwrap();
        // Joint 0 hidden: its channel drops out of the denominator.
        let loss = heatmap_loss(&pred, &target, &[false, true]).unwrap().data()[0];
        assert!((loss - 9.0 / (3 * plane) as f64).abs() < 1e-12, "{loss}");

        // Error only on the hidden joint's channel: fully masked out.
        let mut data = vec![0.0; 4 * plane];
        data[3] = 7.0;
        let pred = Tensor::new(sh, data).unwrap();
        assert_eq!(heatmap_loss(&pred, &target, &[false, true]).unwrap().data()[0], 0.0);
    }

    #[test]
    fn loss_matches_direct_summation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let sh = Shape::new(1, 5, 7, 9);
        let plane = 63;
        for _ in 0..10 {
            let p: Vec<f64> = (0..sh.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t: Vec<f64> = (0..sh.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let vis: Vec<bool> = (0..3).map(|_| rng.random_range(0.0..1.0) > 0.4).collect();
            let pred = Tensor::new(sh, p.clone()).unwrap();
            let target = Tensor::new(sh, t.clone()).unwrap();
            let loss = heatmap_loss(&pred, &target, &vis).unwrap().data()[0];
            let mut sum = 0.0;
            let mut n = 0usize;
            for c in 0..5 {
                if c < 3 && !vis[c] {
                    continue;
                }
                for i in 0..plane {
                    sum += (p[c * plane + i] - t[c * plane + i]).powi(2);
                    n += 1;
                }
            }
            assert!((loss - sum / n as f64).abs() <= 1e-6, "{loss} vs {}", sum / n as f64);
        }
    }

    #[test]
    fn loss_rejects_mismatches() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 4, 4, 4));
        let b = Tensor::<f32>::zeros(Shape::new(1, 4, 5, 4));
        assert!(heatmap_loss(&a, &b, &[true, true]).is_err());
        assert!(heatmap_loss(&a, &a, &[true]).is_err());
        let batched = Tensor::<f32>::zeros(Shape::new(2, 4, 4, 4));
        assert!(heatmap_loss(&batched, &batched, &[true, true]).is_err());
    }

    #[test]
    fn loss_gradient_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let sh = Shape::new(1, 3, 4, 4);
        let t: Vec<f64> = (0..sh.numel()).map(|_| rng.random_range(0.0..1.0)).collect();
        let p: Vec<f64> = (0..sh.numel()).map(|_| rng.random_range(0.0..1.0)).collect();
        let err = crate::tensor::grad_check(
            |x| {
                let target = Tensor::new(sh, t.clone())?;
                heatmap_loss(x, &target, &[false])
            },
            sh,
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-8, "err {err}");
    }

    #[test]
    fn sgd_moves_weights_and_momentum_accumulates() {
        // One scalar "parameter" driven by a constant gradient of 1.
        let mut w = Tensor::<f64>::new_param(Shape::new(1, 1, 1, 1), vec![0.0]).unwrap();
        let mut opt = Sgd::new(0.5);
        for step in 0..3 {
            let loss = w.sum_all();
            loss.backward().unwrap();
            opt.step(0.1, &mut |f| f("w".into(), &mut w)).unwrap();
            let got = w.data()[0];
            // Velocities: 1, 1.5, 1.75 -> positions -0.1, -0.25, -0.425.
            let expect = [-0.1, -0.25, -0.425][step];
            assert!((got - expect).abs() < 1e-12, "step {step}: {got}");
        }
    }

    #[test]
    fn normalized_step_scales_gradient_to_unit_rms() {
        // Gradient [3, 4, 0]: norm 5, n = 3, so the applied step is
        // lr * sqrt(3) / 5 * g.
        let sh = Shape::new(1, 1, 1, 3);
        let mut w = Tensor::<f64>::new_param(sh, vec![0.0; 3]).unwrap();
        let c = Tensor::new(sh, vec![3.0, 4.0, 0.0]).unwrap();
        let loss = w.mul(&c).unwrap().sum_all();
        loss.backward().unwrap();
        let mut opt = Sgd::normalized(0.0);
        opt.step(0.1, &mut |f| f("w".into(), &mut w)).unwrap();
        let k = 3f64.sqrt() / 5.0;
        for (got, g) in w.data().iter().zip([3.0, 4.0, 0.0]) {
            assert!((got - (-0.1 * k * g)).abs() <= 1e-9, "{got}");
        }
    }

    #[test]
    fn sgd_flags_non_finite_updates() {
        let mut w = Tensor::<f64>::new_param(Shape::new(1, 1, 1, 1), vec![0.0]).unwrap();
        let loss = w.scale(f64::MAX).sum_all();
        loss.backward().unwrap();
        let mut opt = Sgd::new(0.0);
        assert!(matches!(
            opt.step(f64::MAX, &mut |f| f("w".into(), &mut w)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn runlog_appends_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.log");
        let mut log = RunLog::create(&path, "epochs 2\nseed 7").unwrap();
        log.record(RunLogEntry { epoch: 0, loss: 0.5, lr: 1e-4, eval_pck: None }).unwrap();
        log.record(RunLogEntry { epoch: 1, loss: 0.25, lr: 1e-4, eval_pck: Some(0.75) })
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "runlog v1");
        assert_eq!(lines[1], "config epochs 2");
        assert_eq!(lines[2], "config seed 7");
        assert!(lines[3].starts_with("epoch 0 loss 5.0"));
        assert!(lines[4].ends_with("pck 0.7500"));
        assert_eq!(log.losses(), vec![0.5, 0.25]);
    }
}
