//! Network building blocks on top of the tensor engine.
//!
//! Layers are plain structs holding parameter tensors. Forward passes borrow
//! the layer immutably; optimizers and persistence walk parameters through
//! [`visit`] callbacks that hand out `&mut Tensor` so a step can swap in an
//! updated leaf. Randomness (init, dropout) always flows through an explicit
//! seeded generator.

mod backbone;
mod lstm;

pub use backbone::{Backbone, BackboneConfig, ResidualBlock};
pub use lstm::{ConvLstmCell, ConvLstmState};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Forward-pass mode. Training mode carries the generator that drives
/// dropout; eval mode is fully deterministic.
pub enum Mode<'r> {
    Eval,
    Train { rng: &'r mut ChaCha8Rng },
}

/// Parameter visitor: receives a dotted name and a mutable handle for every
/// parameter tensor, in a fixed order.
pub type ParamVisitor<'a, E> = dyn FnMut(String, &mut Tensor<E>) + 'a;

fn uniform<E: Element>(rng: &mut ChaCha8Rng, shape: Shape, bound: f64) -> Tensor<E> {
    let data: Vec<E> = (0..shape.numel())
        .map(|_| E::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new_param(shape, data).expect("sized by shape")
}

/// 2-D convolution layer with fan-in-scaled uniform init.
pub struct Conv2d<E: Element = f32> {
    pub weight: Tensor<E>,
    pub bias: Option<Tensor<E>>,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl<E: Element> Conv2d<E> {
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (in_c * kernel * kernel) as f64;
        let weight = uniform(rng, Shape::new(out_c, in_c, kernel, kernel), (6.0 / fan_in).sqrt());
        let bias = uniform(rng, Shape::new(1, out_c, 1, 1), 1.0 / fan_in.sqrt());
        Conv2d {
            weight,
            bias: Some(bias),
            stride,
            padding,
            dilation,
        }
    }

    /// 3x3 conv whose padding preserves spatial size at stride 1.
    pub fn same3x3(in_c: usize, out_c: usize, stride: usize, dilation: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(in_c, out_c, 3, stride, dilation, dilation, rng)
    }

    pub fn pointwise(in_c: usize, out_c: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(in_c, out_c, 1, 1, 0, 1, rng)
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.conv2d(&self.weight, self.bias.as_ref(), self.stride, self.padding, self.dilation)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<E>) {
        f(format!("{prefix}.weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(format!("{prefix}.bias"), b);
        }
    }
}

/// Per-channel learnable scale and shift; the normalization stand-in for
/// tiny-batch training.
pub struct ChannelAffine<E: Element = f32> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
}

impl<E: Element> ChannelAffine<E> {
    pub fn new(channels: usize) -> Self {
        let shape = Shape::new(1, channels, 1, 1);
        ChannelAffine {
            gamma: Tensor::new_param(shape, vec![E::one(); channels]).expect("sized"),
            beta: Tensor::new_param(shape, vec![E::zero(); channels]).expect("sized"),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.channel_affine(&self.gamma, &self.beta)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<E>) {
        f(format!("{prefix}.gamma"), &mut self.gamma);
        f(format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Inverted dropout: training zeroes each element with probability `rate`
/// and scales survivors by `1/(1-rate)`; eval is the identity.
pub struct Dropout {
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(Dropout { rate })
    }

    pub fn forward<E: Element>(&self, x: &Tensor<E>, mode: &mut Mode) -> Result<Tensor<E>> {
        let rng = match mode {
            Mode::Eval => return Ok(x.clone()),
            Mode::Train { rng } => rng,
        };
        if self.rate == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.rate;
        let scale = E::from_f64(1.0 / keep);
        let mask: Vec<E> = (0..x.numel())
            .map(|_| {
                if rng.random_range(0.0..1.0) < self.rate {
                    E::zero()
                } else {
                    scale
                }
            })
            .collect();
        let mask = Tensor::new(x.shape(), mask)?;
        x.mul(&mask)
    }
}
