//! Convolutional LSTM cell: gates are 3x3 convolutions over the
//! concatenation of the input and the previous hidden map, so the recurrence
//! preserves spatial structure.

use rand_chacha::ChaCha8Rng;

use super::{Conv2d, ParamVisitor};
use crate::error::{Error, Result};
use crate::tensor::{concat_channels, Element, Shape, Tensor};

/// Recurrent state: hidden and cell maps of identical shape.
#[derive(Clone)]
pub struct ConvLstmState<E: Element = f32> {
    pub hidden: Tensor<E>,
    pub cell: Tensor<E>,
}

impl<E: Element> ConvLstmState<E> {
    /// All-zero initial state.
    pub fn zeros(n: usize, channels: usize, h: usize, w: usize) -> Self {
        let shape = Shape::new(n, channels, h, w);
        ConvLstmState {
            hidden: Tensor::zeros(shape),
            cell: Tensor::zeros(shape),
        }
    }

    /// State cut off from the recorded graph; used at truncation boundaries.
    pub fn detached(&self) -> Self {
        ConvLstmState {
            hidden: self.hidden.detach(),
            cell: self.cell.detach(),
        }
    }
}

/// One gated update. The four gates come from a single conv producing 4C
/// channels, split in i, f, o, g order.
pub struct ConvLstmCell<E: Element = f32> {
    gates: Conv2d<E>,
    channels: usize,
}

impl<E: Element> ConvLstmCell<E> {
    pub fn new(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        ConvLstmCell {
            gates: Conv2d::same3x3(2 * channels, 4 * channels, 1, 1, rng),
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn step(&self, x: &Tensor<E>, state: &ConvLstmState<E>) -> Result<ConvLstmState<E>> {
        let sh = x.shape();
        if sh.c != self.channels {
            return Err(Error::shape(
                "conv-lstm input channels",
                self.channels.to_string(),
                sh.c.to_string(),
            ));
        }
        if state.hidden.shape() != sh || state.cell.shape() != sh {
            return Err(Error::shape(
                "conv-lstm state",
                sh.to_string(),
                format!("hidden {} cell {}", state.hidden.shape(), state.cell.shape()),
            ));
        }
        let c = self.channels;
        let z = self.gates.forward(&concat_channels(&[x.clone(), state.hidden.clone()])?)?;
        let i = z.slice_channels(0, c)?.sigmoid();
        let f = z.slice_channels(c, 2 * c)?.sigmoid();
        let o = z.slice_channels(2 * c, 3 * c)?.sigmoid();
        let g = z.slice_channels(3 * c, 4 * c)?.tanh_act();
        let cell = f.mul(&state.cell)?.add(&i.mul(&g)?)?;
        let hidden = o.mul(&cell.tanh_act())?;
        Ok(ConvLstmState { hidden, cell })
    }

    /// Adds `delta` to the bias of one gate (0=i, 1=f, 2=o, 3=g) across all
    /// its channels; used to pre-open or pre-close gates.
    pub fn nudge_gate_bias(&mut self, gate: usize, delta: E) {
        assert!(gate < 4);
        let bias = self.gates.bias.as_mut().expect("gate conv has bias");
        let mut data = bias.data().to_vec();
        for v in &mut data[gate * self.channels..(gate + 1) * self.channels] {
            *v += delta;
        }
        *bias = Tensor::new_param(bias.shape(), data).expect("same shape");
    }

    pub fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<E>) {
        self.gates.visit(&format!("{prefix}.gates"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_everything_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut cell = ConvLstmCell::<f64>::new(2, &mut rng);
        cell.visit("c", &mut |_, t| {
            *t = Tensor::new_param(t.shape(), vec![0.0; t.numel()]).unwrap();
        });
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4));
        let state = ConvLstmState::zeros(1, 2, 4, 4);
        let next = cell.step(&x, &state).unwrap();
        assert!(next.hidden.data().iter().all(|v| *v == 0.0));
        assert!(next.cell.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn saturated_gates_preserve_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut cell = ConvLstmCell::<f64>::new(2, &mut rng);
        // Forget gate wide open, input gate slammed shut: cell' ~= cell.
        cell.nudge_gate_bias(1, 10.0);
        cell.nudge_gate_bias(0, -10.0);
        let x = Tensor::new(
            Shape::new(1, 2, 3, 3),
            (0..18).map(|i| (i as f64 * 0.3).sin() * 0.1).collect(),
        )
        .unwrap();
        let prev_cell: Vec<f64> = (0..18).map(|i| (i as f64 * 0.7).cos() * 0.5).collect();
        let state = ConvLstmState {
            hidden: Tensor::zeros(Shape::new(1, 2, 3, 3)),
            cell: Tensor::new(Shape::new(1, 2, 3, 3), prev_cell.clone()).unwrap(),
        };
        let next = cell.step(&x, &state).unwrap();
        for (got, want) in next.cell.data().iter().zip(&prev_cell) {
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn step_matches_gate_equation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let channels = 2;
        let (h, w) = (3, 4);
        let cell = ConvLstmCell::<f64>::new(channels, &mut rng);
        let xd: Vec<f64> = (0..channels * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hd: Vec<f64> = (0..channels * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cd: Vec<f64> = (0..channels * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::new(Shape::new(1, channels, h, w), xd.clone()).unwrap();
        let state = ConvLstmState {
            hidden: Tensor::new(Shape::new(1, channels, h, w), hd.clone()).unwrap(),
            cell: Tensor::new(Shape::new(1, channels, h, w), cd.clone()).unwrap(),
        };
        let next = cell.step(&x, &state).unwrap();

        // Oracle: direct per-pixel gate equations on top of a raw conv of the
        // concatenated input, written without the op library.
        let concat = Tensor::new(
            Shape::new(1, 2 * channels, h, w),
            xd.iter().chain(&hd).copied().collect(),
        )
        .unwrap();
        let z = concat
            .conv2d(&cell.gates.weight, cell.gates.bias.as_ref(), 1, 1, 1)
            .unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        for c in 0..channels {
            for y in 0..h {
                for xx in 0..w {
                    let i = sig(z.at(0, c, y, xx));
                    let f = sig(z.at(0, channels + c, y, xx));
                    let o = sig(z.at(0, 2 * channels + c, y, xx));
                    let g = z.at(0, 3 * channels + c, y, xx).tanh();
                    let prev = cd[(c * h + y) * w + xx];
                    let cell_want = f * prev + i * g;
                    let hidden_want = o * cell_want.tanh();
                    assert!((next.cell.at(0, c, y, xx) - cell_want).abs() < 1e-6);
                    assert!((next.hidden.at(0, c, y, xx) - hidden_want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn repeated_input_stays_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cell = ConvLstmCell::<f32>::new(3, &mut rng);
        let x = Tensor::new(
            Shape::new(1, 3, 4, 4),
            (0..48).map(|i| (i as f32 * 0.2).sin()).collect(),
        )
        .unwrap();
        let mut state = ConvLstmState::zeros(1, 3, 4, 4);
        for _ in 0..12 {
            state = cell.step(&x, &state).unwrap();
            assert_eq!(state.hidden.shape(), Shape::new(1, 3, 4, 4));
            assert!(state.hidden.data().iter().all(|v| v.is_finite()));
            assert!(state.cell.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn mismatched_state_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let cell = ConvLstmCell::<f32>::new(2, &mut rng);
        let x = Tensor::zeros(Shape::new(1, 2, 4, 4));
        let bad = ConvLstmState::zeros(1, 2, 5, 5);
        assert!(cell.step(&x, &bad).is_err());
        let wrong_c = Tensor::zeros(Shape::new(1, 3, 4, 4));
        assert!(cell.step(&wrong_c, &ConvLstmState::zeros(1, 3, 4, 4)).is_err());
    }
}
