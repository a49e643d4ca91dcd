//! Full pose networks: feature extractor, waterfall context module, and
//! decoder composed into a single-frame model, plus the recurrent video
//! variant that runs a convolutional LSTM over per-frame heatmaps.

mod checkpoint;

pub use checkpoint::{peek as peek_checkpoint, CheckpointInfo, Variant};

use std::cell::Cell;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    Backbone, BackboneConfig, ChannelAffine, Conv2d, ConvLstmCell, ConvLstmState, Dropout, Mode,
    ParamVisitor,
};
use crate::tensor::{concat_channels, Element, Tensor};
use crate::wasp::{Wasp, WaspConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of body joints (K). The network emits K+2 heatmap channels:
    /// one per joint plus two bounding-box corner maps.
    pub joints: usize,
    pub input_h: usize,
    pub input_w: usize,
    /// Truncation window of the recurrent variant.
    pub lstm_frames: usize,
    pub dropout: f64,
    pub decoder_channels: usize,
    pub lstm_post_channels: usize,
    pub backbone: BackboneConfig,
    pub wasp: WaspConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            joints: 14,
            input_h: 64,
            input_w: 64,
            lstm_frames: 5,
            dropout: 0.1,
            decoder_channels: 256,
            lstm_post_channels: 64,
            backbone: BackboneConfig::default(),
            wasp: WaspConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Reduced widths for fast tests; keeps every architectural element.
    pub fn tiny(joints: usize, input_h: usize, input_w: usize) -> Self {
        ModelConfig {
            joints,
            input_h,
            input_w,
            lstm_frames: 5,
            dropout: 0.0,
            decoder_channels: 16,
            lstm_post_channels: 16,
            backbone: BackboneConfig {
                stem_channels: 8,
                stage_channels: [8, 16, 16, 16],
                blocks_per_stage: [1, 1, 1, 1],
            },
            wasp: WaspConfig {
                in_channels: 16,
                branch_channels: 8,
                out_channels: 16,
                rates: [1, 2, 3, 4],
            },
        }
    }

    pub fn heatmap_channels(&self) -> usize {
        self.joints + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints == 0 {
            return Err(Error::Config("joints must be >= 1".into()));
        }
        if self.input_h % 8 != 0 || self.input_w % 8 != 0 || self.input_h == 0 || self.input_w == 0
        {
            return Err(Error::Config(format!(
                "input size {}x{} must be a positive multiple of 8",
                self.input_h, self.input_w
            )));
        }
        if self.lstm_frames == 0 {
            return Err(Error::Config("lstm_frames must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.decoder_channels == 0 || self.lstm_post_channels == 0 {
            return Err(Error::Config("decoder widths must be >= 1".into()));
        }
        self.backbone.validate()?;
        self.wasp.validate()?;
        if self.wasp.in_channels != self.backbone.deep_channels() {
            return Err(Error::Config(format!(
                "context module reads {} channels but the backbone emits {}",
                self.wasp.in_channels,
                self.backbone.deep_channels()
            )));
        }
        Ok(())
    }
}

/// Decoder: upsamples the context features to the low-level tap's 1/4
/// grid, concatenates, refines with a 3x3 conv, upsamples to half
/// resolution for a second refinement, and projects to K+2 heatmap
/// channels before the final x2 bilinear step.
///
/// Two resolution constraints drive this layout. The head must run no
/// coarser than stride 2: a bilinearly upsampled map can only attain its
/// maximum on the source lattice, so emitting heatmaps at stride s leaves
/// argmax decoding quantized to s pixels. And the low-level tap must enter
/// at its native 1/4 grid: pooling it to 1/8 first averages away the
/// small cues that tell the two ends of a limb apart.
pub struct Decoder<E: Element = f32> {
    conv1: Conv2d<E>,
    affine1: ChannelAffine<E>,
    conv2: Conv2d<E>,
    affine2: ChannelAffine<E>,
    dropout: Dropout,
    head: Conv2d<E>,
}

/// Initial scale of the head weights. Shrinking them starts training from
/// near-empty heatmaps, which is a few steps from the all-background
/// solution instead of a few hundred.
const HEAD_INIT_SCALE: f64 = 0.1;

impl<E: Element> Decoder<E> {
    pub fn new(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let in_c = config.wasp.out_channels + config.backbone.low_level_channels();
        let c = config.decoder_channels;
        let conv1 = Conv2d::same3x3(in_c, c, 1, 1, rng);
        let conv2 = Conv2d::same3x3(c, c, 1, 1, rng);
        let mut head = Conv2d::pointwise(c, config.heatmap_channels(), rng);
        let shrink = |t: &Tensor<E>| {
            let data = t.data().iter().map(|&v| v * E::from_f64(HEAD_INIT_SCALE)).collect();
            Tensor::new_param(t.shape(), data).unwrap()
        };
        head.weight = shrink(&head.weight);
        head.bias = head.bias.as_ref().map(&shrink);
        Ok(Decoder {
            conv1,
            affine1: ChannelAffine::new(c),
            conv2,
            affine2: ChannelAffine::new(c),
            dropout: Dropout::new(config.dropout)?,
            head,
        })
    }

    pub fn forward(
        &self,
        context: &Tensor<E>,
        low_level: &Tensor<E>,
        out_h: usize,
        out_w: usize,
        mode: &mut Mode,
    ) -> Result<Tensor<E>> {
        let (cs, ls) = (context.shape(), low_level.shape());
        if cs.h * 2 != ls.h || cs.w * 2 != ls.w {
            return Err(Error::shape(
                "decoder tap resolution",
                format!("{}x{}", cs.h * 2, cs.w * 2),
                format!("{}x{}", ls.h, ls.w),
            ));
        }
        let up = context.bilinear_resize(ls.h, ls.w)?;
        let x = concat_channels(&[up, low_level.clone()])?;
        let x = self.affine1.forward(&self.conv1.forward(&x)?)?.relu();
        let x = self.dropout.forward(&x, mode)?;
        let x = x.bilinear_resize(out_h / 2, out_w / 2)?;
        let x = self.affine2.forward(&self.conv2.forward(&x)?)?.relu();
        let x = self.dropout.forward(&x, mode)?;
        self.head.forward(&x)?.bilinear_resize(out_h, out_w)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<E>) {
        self.conv1.visit(&format!("{prefix}.conv1"), f);
        self.affine1.visit(&format!("{prefix}.affine1"), f);
        self.conv2.visit(&format!("{prefix}.conv2"), f);
        self.affine2.visit(&format!("{prefix}.affine2"), f);
        self.head.visit(&format!("{prefix}.head"), f);
    }
}

/// Single-frame network. One forward pass per image: backbone, context
/// module, decoder, no iterative refinement.
pub struct UniPose<E: Element = f32> {
    config: ModelConfig,
    backbone: Backbone<E>,
    wasp: Wasp<E>,
    decoder: Decoder<E>,
    passes: Cell<u64>,
}

impl<E: Element> UniPose<E> {
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        Ok(UniPose {
            backbone: Backbone::new(config.backbone.clone(), rng)?,
            wasp: Wasp::new(config.wasp.clone(), rng)?,
            decoder: Decoder::new(&config, rng)?,
            config,
            passes: Cell::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Heatmaps at the input resolution: `(N, K+2, H, W)`.
    pub fn forward(&self, image: &Tensor<E>, mode: &mut Mode) -> Result<Tensor<E>> {
        self.passes.set(self.passes.get() + 1);
        let sh = image.shape();
        let (low, deep) = self.backbone.forward(image)?;
        let context = self.wasp.forward(&deep)?;
        self.decoder.forward(&context, &low, sh.h, sh.w, mode)
    }

    /// Number of complete forward passes since construction or reset; each
    /// frame must cost exactly one.
    pub fn passes(&self) -> u64 {
        self.passes.get()
    }

    pub fn reset_passes(&self) {
        self.passes.set(0);
    }

    pub fn visit_params(&mut self, f: &mut ParamVisitor<E>) {
        self.backbone.visit("backbone", f);
        self.wasp.visit("wasp", f);
        self.decoder.visit("decoder", f);
    }
}

/// Recurrent video variant: per-frame heatmaps feed a convolutional LSTM
/// whose hidden state carries over within a truncation window; two convs
/// reshape the hidden state into the final heatmaps.
pub struct UniPoseLstm<E: Element = f32> {
    base: UniPose<E>,
    lstm: ConvLstmCell<E>,
    post1: Conv2d<E>,
    post2: Conv2d<E>,
}

impl<E: Element> UniPoseLstm<E> {
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let k2 = config.heatmap_channels();
        let post_c = config.lstm_post_channels;
        let base = UniPose::new(config, rng)?;
        let mut lstm = ConvLstmCell::new(k2, rng);
        // Open the forget gate at init so early training keeps state useful.
        lstm.nudge_gate_bias(1, E::one());
        let post1 = Conv2d::same3x3(k2, post_c, 1, 1, rng);
        // The last conv is a heatmap head; same shrunk init as the decoder's.
        let mut post2 = Conv2d::same3x3(post_c, k2, 1, 1, rng);
        let shrink = |t: &Tensor<E>| {
            let data = t.data().iter().map(|&v| v * E::from_f64(HEAD_INIT_SCALE)).collect();
            Tensor::new_param(t.shape(), data).unwrap()
        };
        post2.weight = shrink(&post2.weight);
        post2.bias = post2.bias.as_ref().map(&shrink);
        Ok(UniPoseLstm { base, lstm, post1, post2 })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.base.config
    }

    pub fn base(&self) -> &UniPose<E> {
        &self.base
    }

    fn finalize(&self, state: &ConvLstmState<E>) -> Result<Tensor<E>> {
        self.post2.forward(&self.post1.forward(&state.hidden)?.relu())
    }

    /// One recurrent step on an already-computed heatmap tensor.
    pub fn step(
        &self,
        heatmaps: &Tensor<E>,
        state: &ConvLstmState<E>,
    ) -> Result<(Tensor<E>, ConvLstmState<E>)> {
        let next = self.lstm.step(heatmaps, state)?;
        Ok((self.finalize(&next)?, next))
    }

    pub fn zero_state(&self, n: usize, h: usize, w: usize) -> ConvLstmState<E> {
        ConvLstmState::zeros(n, self.base.config.heatmap_channels(), h, w)
    }

    /// Runs a clip with the recurrence truncated to `window` frames: state
    /// resets to zero at every window boundary. Returns per-frame heatmaps.
    pub fn forward_clip(
        &self,
        frames: &[Tensor<E>],
        window: usize,
        mode: &mut Mode,
    ) -> Result<Vec<Tensor<E>>> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("empty frame sequence".into()));
        }
        if window == 0 {
            return Err(Error::InvalidArgument("window must be >= 1".into()));
        }
        let sh = frames[0].shape();
        let mut out = Vec::with_capacity(frames.len());
        let mut state = self.zero_state(sh.n, sh.h, sh.w);
        for (t, frame) in frames.iter().enumerate() {
            if frame.shape() != sh {
                return Err(Error::shape(
                    "clip frame shapes",
                    sh.to_string(),
                    frame.shape().to_string(),
                ));
            }
            if t % window == 0 {
                state = self.zero_state(sh.n, sh.h, sh.w);
            }
            let maps = self.base.forward(frame, mode)?;
            let (finalized, next) = self.step(&maps, &state)?;
            out.push(finalized);
            state = next;
        }
        Ok(out)
    }

    pub fn visit_params(&mut self, f: &mut ParamVisitor<E>) {
        self.base.visit_params(f);
        self.lstm.visit("lstm", f);
        self.post1.visit("post1", f);
        self.post2.visit("post2", f);
    }
}

/// Pixel box decoded from the two corner heatmap channels, in
/// `(x_min, y_min, x_max, y_max)` order.
///
/// The top-left corner is the argmax of channel K, the bottom-right of
/// channel K+1; an axis decoded inverted is swapped rather than rejected.
pub fn decode_bbox<E: Element>(heatmaps: &Tensor<E>, joints: usize) -> Result<(f64, f64, f64, f64)> {
    let sh = heatmaps.shape();
    if sh.c != joints + 2 {
        return Err(Error::shape(
            "bbox decode channels",
            format!("{} (joints + 2)", joints + 2),
            sh.c.to_string(),
        ));
    }
    let plane = |c: usize| {
        let base = c * sh.h * sh.w;
        &heatmaps.data()[base..base + sh.h * sh.w]
    };
    let argmax = |p: &[E]| {
        let mut best = 0usize;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        ((best % sh.w) as f64, (best / sh.w) as f64)
    };
    let (x1, y1) = argmax(plane(joints));
    let (x2, y2) = argmax(plane(joints + 1));
    Ok((x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2)))
}
