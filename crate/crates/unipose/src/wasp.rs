//! Waterfall multi-rate context module and its parallel-pyramid baseline.
//!
//! The waterfall variant chains four dilated 3x3 convolutions at increasing
//! rates, tapping a 1x1-projected branch after each stage; the pyramid
//! baseline runs the same four convolutions side by side on the module input.
//! Both add a global-average-pool branch and fuse the five concatenated
//! branches with a linear 1x1 convolution.

use rand_chacha::ChaCha8Rng;

use crate::arch::{LayerKind, ModuleSpec, INPUT};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ParamVisitor};
use crate::tensor::{concat_channels, Element, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaspConfig {
    pub in_channels: usize,
    pub branch_channels: usize,
    pub out_channels: usize,
    pub rates: [usize; 4],
}

impl Default for WaspConfig {
    fn default() -> Self {
        WaspConfig {
            in_channels: 512,
            branch_channels: 64,
            out_channels: 256,
            rates: [6, 12, 18, 24],
        }
    }
}

impl WaspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.branch_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("context-module channels must be >= 1".into()));
        }
        if self.rates[0] < 1 {
            return Err(Error::Config("dilation rates must be >= 1".into()));
        }
        if !self.rates.windows(2).all(|p| p[0] < p[1]) {
            return Err(Error::Config(format!(
                "dilation rates must be strictly increasing, got {:?}",
                self.rates
            )));
        }
        Ok(())
    }
}

struct Branches<E: Element> {
    atrous: [Conv2d<E>; 4],
    proj: [Conv2d<E>; 4],
    pool_proj: Conv2d<E>,
    fuse: Conv2d<E>,
}

impl<E: Element> Branches<E> {
    fn new(config: &WaspConfig, cascade: bool, rng: &mut ChaCha8Rng) -> Self {
        let (c_in, c_b) = (config.in_channels, config.branch_channels);
        let atrous = std::array::from_fn(|i| {
            let rate = config.rates[i];
            let src = if cascade && i > 0 { c_b } else { c_in };
            Conv2d::same3x3(src, c_b, 1, rate, rng)
        });
        let proj = std::array::from_fn(|_| Conv2d::pointwise(c_b, c_b, rng));
        Branches {
            atrous,
            proj,
            pool_proj: Conv2d::pointwise(c_in, c_b, rng),
            fuse: Conv2d::pointwise(5 * c_b, config.out_channels, rng),
        }
    }

    fn fuse_branches(&self, x: &Tensor<E>, maps: [Tensor<E>; 4]) -> Result<Tensor<E>> {
        let sh = x.shape();
        let mut branches: Vec<Tensor<E>> = Vec::with_capacity(5);
        for (map, proj) in maps.iter().zip(&self.proj) {
            branches.push(proj.forward(map)?.relu());
        }
        let pooled = self.pool_proj.forward(&x.global_avg_pool())?.relu();
        branches.push(pooled.broadcast_spatial(sh.h, sh.w)?);
        self.fuse.forward(&concat_channels(&branches)?)
    }

    fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<E>) {
        for (i, conv) in self.atrous.iter_mut().enumerate() {
            conv.visit(&format!("{prefix}.atrous{i}"), f);
        }
        for (i, conv) in self.proj.iter_mut().enumerate() {
            conv.visit(&format!("{prefix}.proj{i}"), f);
        }
        self.pool_proj.visit(&format!("{prefix}.pool_proj"), f);
        self.fuse.visit(&format!("{prefix}.fuse"), f);
    }
}

/// Waterfall module: cascaded dilated convolutions with per-stage branch
/// taps plus a pooled branch.
pub struct Wasp<E: Element = f32> {
    branches: Branches<E>,
    config: WaspConfig,
}

impl<E: Element> Wasp<E> {
    pub fn new(config: WaspConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        Ok(Wasp {
            branches: Branches::new(&config, true, rng),
            config,
        })
    }

    pub fn config(&self) -> &WaspConfig {
        &self.config
    }

    fn cascade_maps(&self, x: &Tensor<E>) -> Result<[Tensor<E>; 4]> {
        let t1 = self.branches.atrous[0].forward(x)?.relu();
        let t2 = self.branches.atrous[1].forward(&t1)?.relu();
        let t3 = self.branches.atrous[2].forward(&t2)?.relu();
        let t4 = self.branches.atrous[3].forward(&t3)?.relu();
        Ok([t1, t2, t3, t4])
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        self.branches.fuse_branches(x, self.cascade_maps(x)?)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<E>) {
        self.branches.visit(prefix, f);
    }

    /// Wiring description for the analyzers.
    pub fn module_spec(config: &WaspConfig) -> ModuleSpec {
        let (c_in, c_b) = (config.in_channels, config.branch_channels);
        let mut spec = ModuleSpec::new("wasp");
        let mut taps = Vec::new();
        let mut prev = INPUT;
        for (i, &rate) in config.rates.iter().enumerate() {
            let src_c = if i == 0 { c_in } else { c_b };
            prev = spec.conv(format!("atrous_r{rate}"), prev, src_c, c_b, 3, 1, rate);
            taps.push(spec.conv(format!("proj{i}"), prev, c_b, c_b, 1, 1, 1));
        }
        pool_and_fuse(&mut spec, config, taps)
    }
}

/// Pyramid baseline: the same four rates applied in parallel to the input.
pub struct Aspp<E: Element = f32> {
    branches: Branches<E>,
    config: WaspConfig,
}

impl<E: Element> Aspp<E> {
    pub fn new(config: WaspConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        Ok(Aspp {
            branches: Branches::new(&config, false, rng),
            config,
        })
    }

    pub fn config(&self) -> &WaspConfig {
        &self.config
    }

    fn parallel_maps(&self, x: &Tensor<E>) -> Result<[Tensor<E>; 4]> {
        let mut maps = Vec::with_capacity(4);
        for conv in &self.branches.atrous {
            maps.push(conv.forward(x)?.relu());
        }
        Ok(maps.try_into().ok().expect("four branches"))
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        self.branches.fuse_branches(x, self.parallel_maps(x)?)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<E>) {
        self.branches.visit(prefix, f);
    }

    pub fn module_spec(config: &WaspConfig) -> ModuleSpec {
        let (c_in, c_b) = (config.in_channels, config.branch_channels);
        let mut spec = ModuleSpec::new("aspp");
        let mut taps = Vec::new();
        for (i, &rate) in config.rates.iter().enumerate() {
            let conv = spec.conv(format!("atrous_r{rate}"), INPUT, c_in, c_b, 3, 1, rate);
            taps.push(spec.conv(format!("proj{i}"), conv, c_b, c_b, 1, 1, 1));
        }
        pool_and_fuse(&mut spec, config, taps)
    }
}

fn pool_and_fuse(spec: &mut ModuleSpec, config: &WaspConfig, mut taps: Vec<usize>) -> ModuleSpec {
    let (c_in, c_b) = (config.in_channels, config.branch_channels);
    let gap = spec.add("gap", LayerKind::GlobalPool, &[INPUT]);
    let pp = spec.conv("pool_proj", gap, c_in, c_b, 1, 1, 1);
    taps.push(spec.add("pool_up", LayerKind::Resize, &[pp]));
    let cat = spec.add("cat", LayerKind::Concat, &taps);
    spec.conv("fuse", cat, 5 * c_b, config.out_channels, 1, 1, 1);
    spec.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{param_count, receptive_field};
    use crate::tensor::{grad_check, Shape};
    use rand::{Rng, SeedableRng};

    fn tiny() -> WaspConfig {
        WaspConfig {
            in_channels: 4,
            branch_channels: 3,
            out_channels: 5,
            rates: [1, 2, 3, 4],
        }
    }

    #[test]
    fn config_validation() {
        assert!(WaspConfig::default().validate().is_ok());
        let mut c = WaspConfig::default();
        c.rates = [6, 12, 12, 24];
        assert!(c.validate().is_err());
        c.rates = [0, 1, 2, 3];
        assert!(c.validate().is_err());
        c = WaspConfig::default();
        c.branch_channels = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn output_shape_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let config = WaspConfig {
            in_channels: 16,
            ..WaspConfig::default()
        };
        let wasp = Wasp::<f32>::new(config.clone(), &mut rng).unwrap();
        let y = wasp.forward(&Tensor::zeros(Shape::new(1, 16, 8, 8))).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 256, 8, 8));

        let aspp = Aspp::<f32>::new(config, &mut rng).unwrap();
        let y = aspp.forward(&Tensor::zeros(Shape::new(1, 16, 8, 8))).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 256, 8, 8));
    }

    #[test]
    fn spatial_size_preserved_for_odd_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let wasp = Wasp::<f32>::new(tiny(), &mut rng).unwrap();
        for (h, w) in [(5, 7), (9, 3), (6, 6)] {
            let y = wasp.forward(&Tensor::zeros(Shape::new(1, 4, h, w))).unwrap();
            assert_eq!(y.shape(), Shape::new(1, 5, h, w), "{h}x{w}");
        }
    }

    #[test]
    fn zero_input_zero_biases_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut wasp = Wasp::<f64>::new(tiny(), &mut rng).unwrap();
        wasp.visit("w", &mut |name, t| {
            if name.ends_with(".bias") {
                *t = Tensor::new_param(t.shape(), vec![0.0; t.numel()]).unwrap();
            }
        });
        let y = wasp.forward(&Tensor::zeros(Shape::new(1, 4, 6, 6))).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn wasp_matches_transliterated_dataflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let wasp = Wasp::<f64>::new(tiny(), &mut rng).unwrap();
        let data: Vec<f64> = (0..4 * 36).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(Shape::new(1, 4, 6, 6), data).unwrap();
        let got = wasp.forward(&x).unwrap();

        // Straight-line oracle: the five-branch dataflow written out long-hand
        // against the same parameters.
        let b = &wasp.branches;
        let conv = |c: &Conv2d<f64>, x: &Tensor<f64>| {
            x.conv2d(&c.weight, c.bias.as_ref(), c.stride, c.padding, c.dilation)
                .unwrap()
        };
        let t1 = conv(&b.atrous[0], &x).relu();
        let t2 = conv(&b.atrous[1], &t1).relu();
        let t3 = conv(&b.atrous[2], &t2).relu();
        let t4 = conv(&b.atrous[3], &t3).relu();
        let p1 = conv(&b.proj[0], &t1).relu();
        let p2 = conv(&b.proj[1], &t2).relu();
        let p3 = conv(&b.proj[2], &t3).relu();
        let p4 = conv(&b.proj[3], &t4).relu();
        let pool = conv(&b.pool_proj, &x.global_avg_pool())
            .relu()
            .broadcast_spatial(6, 6)
            .unwrap();
        let cat = concat_channels(&[p1, p2, p3, p4, pool]).unwrap();
        let want = conv(&b.fuse, &cat);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() <= 1e-6);
        }
    }

    #[test]
    fn aspp_identical_branches_under_forced_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let mut aspp = Aspp::<f64>::new(tiny(), &mut rng).unwrap();
        let w0 = aspp.branches.atrous[0].weight.detach_as_param();
        let b0 = aspp.branches.atrous[0].bias.as_ref().unwrap().detach_as_param();
        for conv in &mut aspp.branches.atrous {
            conv.weight = w0.detach_as_param();
            conv.bias = Some(b0.detach_as_param());
            conv.dilation = 2;
            conv.padding = 2;
        }
        let data: Vec<f64> = (0..4 * 25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(Shape::new(1, 4, 5, 5), data).unwrap();
        let maps = aspp.parallel_maps(&x).unwrap();
        for m in &maps[1..] {
            assert_eq!(m.data(), maps[0].data());
        }
    }

    #[test]
    fn wasp_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let wasp = Wasp::<f64>::new(tiny(), &mut rng).unwrap();
        let data: Vec<f64> = (0..4 * 25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let readout: Vec<f64> = (0..5 * 25).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = grad_check(
            |x| {
                let y = wasp.forward(x)?;
                let r = Tensor::new(y.shape(), readout.clone())?;
                Ok(y.mul(&r)?.sum_all())
            },
            Shape::new(1, 4, 5, 5),
            &data,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "err {err}");
    }

    #[test]
    fn default_receptive_fields() {
        let config = WaspConfig::default();
        assert_eq!(receptive_field(&Wasp::<f32>::module_spec(&config)).unwrap(), 121);
        assert_eq!(receptive_field(&Aspp::<f32>::module_spec(&config)).unwrap(), 49);
    }

    #[test]
    fn default_param_counts() {
        let config = WaspConfig::default();
        let wasp = param_count(&Wasp::<f32>::module_spec(&config));
        let aspp = param_count(&Aspp::<f32>::module_spec(&config));
        // Closed-form: cascade 512*64*9+64 + 3*(64*64*9+64); parallel 4*(512*64*9+64);
        // both plus 4 projections, the pool projection, and the fusion conv.
        assert_eq!(wasp, 537_408);
        assert_eq!(aspp, 1_311_552);
        assert!(wasp < aspp);
    }

    #[test]
    fn spec_counts_match_actual_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        for cascade in [true, false] {
            let config = tiny();
            let (spec, mut total) = if cascade {
                let mut m = Wasp::<f32>::new(config.clone(), &mut rng).unwrap();
                let mut n = 0u64;
                m.visit("m", &mut |_, t| n += t.numel() as u64);
                (Wasp::<f32>::module_spec(&config), n)
            } else {
                let mut m = Aspp::<f32>::new(config.clone(), &mut rng).unwrap();
                let mut n = 0u64;
                m.visit("m", &mut |_, t| n += t.numel() as u64);
                (Aspp::<f32>::module_spec(&config), n)
            };
            assert_eq!(param_count(&spec), std::mem::take(&mut total));
        }
    }
}
