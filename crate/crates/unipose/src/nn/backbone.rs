//! Residual feature extractor with two taps: low-level features at 1/4
//! resolution and deep features at 1/8.
//!
//! The stride plan is fixed: stem pool /2, then stage strides [1, 2, 2, 1]
//! with the last stage trading stride for dilation 2. That pins the taps to
//! strides 4 (after the second stage) and 8 (after the fourth) for any
//! channel widths.

use rand_chacha::ChaCha8Rng;

use super::{ChannelAffine, Conv2d, ParamVisitor};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

const STAGE_STRIDES: [usize; 4] = [1, 2, 2, 1];
const STAGE_DILATIONS: [usize; 4] = [1, 1, 1, 2];
/// Low-level features are tapped after this stage, where cumulative stride
/// is 4 and the channel count is `stage_channels[1]`.
const TAP_STAGE: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub stem_channels: usize,
    pub stage_channels: [usize; 4],
    pub blocks_per_stage: [usize; 4],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stem_channels: 64,
            stage_channels: [64, 256, 512, 512],
            blocks_per_stage: [2, 2, 2, 2],
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stem_channels == 0 {
            return Err(Error::Config("backbone stem_channels must be >= 1".into()));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("backbone stage channels must be >= 1".into()));
        }
        if self.blocks_per_stage.iter().any(|&b| b == 0) {
            return Err(Error::Config("backbone stages need at least one block".into()));
        }
        Ok(())
    }

    /// Ratio of input to deep-feature resolution; fixed by the stride plan.
    pub fn output_stride(&self) -> usize {
        8
    }

    pub fn low_level_channels(&self) -> usize {
        self.stage_channels[TAP_STAGE]
    }

    pub fn deep_channels(&self) -> usize {
        self.stage_channels[3]
    }
}

/// Two 3x3 convs with per-channel affine and a projection shortcut when the
/// shape changes: `relu(F(x) + shortcut(x))`.
pub struct ResidualBlock<E: Element = f32> {
    conv1: Conv2d<E>,
    affine1: ChannelAffine<E>,
    conv2: Conv2d<E>,
    affine2: ChannelAffine<E>,
    shortcut: Option<(Conv2d<E>, ChannelAffine<E>)>,
}

impl<E: Element> ResidualBlock<E> {
    pub fn new(in_c: usize, out_c: usize, stride: usize, dilation: usize, rng: &mut ChaCha8Rng) -> Self {
        let shortcut = (in_c != out_c || stride != 1).then(|| {
            (
                Conv2d::new(in_c, out_c, 1, stride, 0, 1, rng),
                ChannelAffine::new(out_c),
            )
        });
        ResidualBlock {
            conv1: Conv2d::same3x3(in_c, out_c, stride, dilation, rng),
            affine1: ChannelAffine::new(out_c),
            conv2: Conv2d::same3x3(out_c, out_c, 1, dilation, rng),
            affine2: ChannelAffine::new(out_c),
            shortcut,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let y = self.affine1.forward(&self.conv1.forward(x)?)?.relu();
        let y = self.affine2.forward(&self.conv2.forward(&y)?)?;
        let s = match &self.shortcut {
            Some((conv, affine)) => affine.forward(&conv.forward(x)?)?,
            None => x.clone(),
        };
        Ok(y.add(&s)?.relu())
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<E>) {
        self.conv1.visit(&format!("{prefix}.conv1"), f);
        self.affine1.visit(&format!("{prefix}.affine1"), f);
        self.conv2.visit(&format!("{prefix}.conv2"), f);
        self.affine2.visit(&format!("{prefix}.affine2"), f);
        if let Some((conv, affine)) = &mut self.shortcut {
            conv.visit(&format!("{prefix}.shortcut"), f);
            affine.visit(&format!("{prefix}.shortcut_affine"), f);
        }
    }
}

pub struct Backbone<E: Element = f32> {
    stem: Conv2d<E>,
    stem_affine: ChannelAffine<E>,
    stages: Vec<Vec<ResidualBlock<E>>>,
    config: BackboneConfig,
}

impl<E: Element> Backbone<E> {
    pub fn new(config: BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let stem = Conv2d::same3x3(3, config.stem_channels, 1, 1, rng);
        let stem_affine = ChannelAffine::new(config.stem_channels);
        let mut stages = Vec::with_capacity(4);
        let mut in_c = config.stem_channels;
        for s in 0..4 {
            let out_c = config.stage_channels[s];
            let mut blocks = Vec::with_capacity(config.blocks_per_stage[s]);
            for b in 0..config.blocks_per_stage[s] {
                let stride = if b == 0 { STAGE_STRIDES[s] } else { 1 };
                blocks.push(ResidualBlock::new(in_c, out_c, stride, STAGE_DILATIONS[s], rng));
                in_c = out_c;
            }
            stages.push(blocks);
        }
        Ok(Backbone {
            stem,
            stem_affine,
            stages,
            config,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Runs the extractor and returns `(low_level, deep)`: features at 1/4
    /// and 1/8 of the input resolution.
    pub fn forward(&self, image: &Tensor<E>) -> Result<(Tensor<E>, Tensor<E>)> {
        let sh = image.shape();
        if sh.h % 8 != 0 || sh.w % 8 != 0 || sh.h == 0 || sh.w == 0 {
            return Err(Error::InvalidArgument(format!(
                "backbone input {}x{} must be divisible by 8; pad to {}x{}",
                sh.h,
                sh.w,
                sh.h.div_ceil(8) * 8,
                sh.w.div_ceil(8) * 8,
            )));
        }
        let mut x = self
            .stem_affine
            .forward(&self.stem.forward(image)?)?
            .relu()
            .max_pool2d(2, 2)?;
        let mut low = None;
        for (s, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                x = block.forward(&x)?;
            }
            if s == TAP_STAGE {
                low = Some(x.clone());
            }
        }
        Ok((low.expect("tap stage always runs"), x))
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<E>) {
        self.stem.visit(&format!("{prefix}.stem"), f);
        self.stem_affine.visit(&format!("{prefix}.stem_affine"), f);
        for (s, blocks) in self.stages.iter_mut().enumerate() {
            for (b, block) in blocks.iter_mut().enumerate() {
                block.visit(&format!("{prefix}.stage{s}.block{b}"), f);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Shape};
    use rand::{Rng, SeedableRng};

    fn zero_convs<E: Element>(block: &mut ResidualBlock<E>) {
        block.visit("b", &mut |name, t| {
            if name.contains("conv") || name.contains("shortcut.") || name.ends_with(".bias") {
                *t = Tensor::new_param(t.shape(), vec![E::zero(); t.numel()]).unwrap();
            }
        });
    }

    #[test]
    fn zero_weights_identity_shortcut_gives_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut block = ResidualBlock::<f64>::new(4, 4, 1, 1, &mut rng);
        zero_convs(&mut block);
        let data: Vec<f64> = (0..4 * 9).map(|i| (i as f64 * 0.9).sin()).collect();
        let x = Tensor::new(Shape::new(1, 4, 3, 3), data.clone()).unwrap();
        let y = block.forward(&x).unwrap();
        for (got, v) in y.data().iter().zip(&data) {
            assert_eq!(*got, v.max(0.0));
        }
    }

    #[test]
    fn stride_two_block_halves_spatial() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let block = ResidualBlock::<f32>::new(8, 12, 2, 1, &mut rng);
        let y = block.forward(&Tensor::zeros(Shape::new(1, 8, 16, 16))).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 12, 8, 8));
    }

    #[test]
    fn block_rejects_channel_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let block = ResidualBlock::<f32>::new(8, 8, 1, 1, &mut rng);
        assert!(block.forward(&Tensor::zeros(Shape::new(1, 4, 8, 8))).is_err());
    }

    #[test]
    fn two_block_stack_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b1 = ResidualBlock::<f64>::new(2, 3, 1, 1, &mut rng);
        let b2 = ResidualBlock::<f64>::new(3, 3, 2, 1, &mut rng);
        let data: Vec<f64> = (0..2 * 36).map(|_| rng.random_range(-1.0..1.0)).collect();
        let readout: Vec<f64> = (0..3 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = grad_check(
            |x| {
                let y = b2.forward(&b1.forward(x)?)?;
                let r = Tensor::new(y.shape(), readout.clone())?;
                Ok(y.mul(&r)?.sum_all())
            },
            Shape::new(1, 2, 6, 6),
            &data,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "err {err}");
    }

    #[test]
    fn default_config_tap_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bb = Backbone::<f32>::new(BackboneConfig::default(), &mut rng).unwrap();
        let (low, deep) = bb.forward(&Tensor::zeros(Shape::new(1, 3, 64, 64))).unwrap();
        assert_eq!(low.shape(), Shape::new(1, 256, 16, 16));
        assert_eq!(deep.shape(), Shape::new(1, 512, 8, 8));
    }

    fn small_config() -> BackboneConfig {
        BackboneConfig {
            stem_channels: 8,
            stage_channels: [8, 16, 16, 16],
            blocks_per_stage: [1, 1, 1, 1],
        }
    }

    #[test]
    fn small_config_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let bb = Backbone::<f32>::new(small_config(), &mut rng).unwrap();
        let data: Vec<f32> = (0..3 * 32 * 32).map(|i| (i as f32 * 0.11).sin()).collect();
        let x = Tensor::new(Shape::new(1, 3, 32, 32), data).unwrap();
        let (l1, d1) = bb.forward(&x).unwrap();
        let (l2, d2) = bb.forward(&x).unwrap();
        assert_eq!(l1.data(), l2.data());
        assert_eq!(d1.data(), d2.data());
    }

    #[test]
    fn doubling_input_doubles_tap_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bb = Backbone::<f32>::new(small_config(), &mut rng).unwrap();
        let (l1, d1) = bb.forward(&Tensor::zeros(Shape::new(1, 3, 32, 32))).unwrap();
        let (l2, d2) = bb.forward(&Tensor::zeros(Shape::new(1, 3, 64, 32))).unwrap();
        assert_eq!(l1.shape(), Shape::new(1, 16, 8, 8));
        assert_eq!(l2.shape(), Shape::new(1, 16, 16, 8));
        assert_eq!(d1.shape(), Shape::new(1, 16, 4, 4));
        assert_eq!(d2.shape(), Shape::new(1, 16, 8, 4));
    }

    #[test]
    fn non_divisible_input_names_required_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let bb = Backbone::<f32>::new(small_config(), &mut rng).unwrap();
        let err = bb.forward(&Tensor::zeros(Shape::new(1, 3, 60, 64))).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("divisible by 8") && msg.contains("64x64"), "{msg}");
    }

    #[test]
    fn config_validation() {
        assert!(BackboneConfig::default().validate().is_ok());
        let mut c = BackboneConfig::default();
        c.blocks_per_stage[2] = 0;
        assert!(c.validate().is_err());
        c = BackboneConfig::default();
        c.stage_channels[0] = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn visit_covers_all_blocks_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut bb = Backbone::<f32>::new(small_config(), &mut rng).unwrap();
        let mut names = Vec::new();
        bb.visit("bb", &mut |name, _| names.push(name));
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        // stem conv+affine, 4 stages x 1 block; stage1 has a projection.
        assert!(names.contains(&"bb.stem.weight".to_string()));
        assert!(names.contains(&"bb.stage1.block0.shortcut.weight".to_string()));
        assert!(names.contains(&"bb.stage3.block0.affine2.beta".to_string()));
    }
}
