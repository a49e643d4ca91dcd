//! Central-difference gradient verification.
//!
//! The check instantiates the differentiated code in `f64`, runs one backward
//! pass for the analytic gradients, then perturbs every input element by
//! `+h` / `-h` and compares. Errors are relative:
//! `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.

use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Largest relative error over all elements of all checked tensors, plus
/// where it occurred.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, flat element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

fn scalar_loss(t: &Tensor<f64>) -> Result<f64> {
    if t.numel() != 1 {
        return Err(Error::NonScalarLoss(t.numel()));
    }
    let v = t.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite("gradient-check loss".into()));
    }
    Ok(v)
}

/// Checks the gradient of `f` with respect to every listed input.
///
/// `f` must build its graph from scratch on each call and reduce to a scalar.
/// Each input is `(shape, values)`; all are passed to `f` as
/// gradient-requiring leaves in order.
pub fn grad_check_multi<F>(f: F, inputs: &[(Shape, Vec<f64>)], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive and finite, got {h}"
        )));
    }
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|(s, d)| Tensor::new_param(*s, d.clone()))
        .collect::<Result<_>>()?;
    let loss = f(&leaves)?;
    scalar_loss(&loss)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.take_grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    for (ti, (shape, base)) in inputs.iter().enumerate() {
        for ei in 0..base.len() {
            let eval = |delta: f64| -> Result<f64> {
                let args: Vec<Tensor<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, (s, d))| {
                        if i == ti {
                            let mut nudged = d.clone();
                            nudged[ei] += delta;
                            Tensor::new_param(*s, nudged)
                        } else {
                            Tensor::new_param(*s, d.clone())
                        }
                    })
                    .collect::<Result<_>>()?;
                scalar_loss(&f(&args)?)
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            let a = analytic[ti][ei];
            if !a.is_finite() || !numeric.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient-check derivative at input {ti} element {ei}"
                )));
            }
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (ti, ei);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
        let _ = shape;
    }
    Ok(report)
}

/// Single-input convenience wrapper around [`grad_check_multi`]. Returns the
/// largest relative error.
pub fn grad_check<F>(f: F, shape: Shape, data: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let report = grad_check_multi(|args| f(&args[0]), &[(shape, data.to_vec())], h)?;
    Ok(report.max_rel_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::GradFn;

    #[test]
    fn linear_function_is_near_exact() {
        let err = grad_check(
            |x| Ok(x.scale(3.0).sum_all()),
            Shape::new(1, 1, 2, 3),
            &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-10, "err {err}");
    }

    #[test]
    fn conv_softmax_composite_within_tolerance() {
        let data: Vec<f64> = (0..2 * 25).map(|i| (i as f64 * 0.43).sin()).collect();
        let weights: Vec<f64> = (0..2 * 2 * 9).map(|i| (i as f64 * 0.77).cos() * 0.3).collect();
        let readout: Vec<f64> = (0..2 * 25).map(|i| ((i * 7) % 11) as f64 * 0.2 - 1.0).collect();
        let report = grad_check_multi(
            |args| {
                let y = args[0].conv2d(&args[1], None, 1, 2, 2)?.spatial_softmax();
                let r = Tensor::new(y.shape(), readout.clone())?;
                Ok(y.mul(&r)?.sum_all())
            },
            &[
                (Shape::new(1, 2, 5, 5), data),
                (Shape::new(2, 2, 3, 3), weights),
            ],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "err {}", report.max_rel_err);
    }

    struct CorruptedSumGrad {
        x: Tensor<f64>,
    }

    impl GradFn<f64> for CorruptedSumGrad {
        fn parents(&self) -> Vec<Tensor<f64>> {
            vec![self.x.clone()]
        }
        fn backward(&self, grad_out: &[f64]) {
            // Deliberately 1% off: the checker must notice.
            let g = vec![grad_out[0] * 1.01; self.x.numel()];
            self.x.accumulate_grad(&g);
        }
    }

    #[test]
    fn corrupted_gradient_is_flagged() {
        let err = grad_check(
            |x| {
                let s: f64 = x.data().iter().sum();
                Ok(Tensor::from_op(
                    Shape::new(1, 1, 1, 1),
                    vec![s],
                    Box::new(CorruptedSumGrad { x: x.clone() }),
                ))
            },
            Shape::new(1, 1, 2, 2),
            &[0.4, 1.2, -0.7, 0.9],
            1e-5,
        )
        .unwrap();
        assert!(err >= 5e-3, "corruption went unnoticed, err {err}");
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let err = grad_check(
            |x| Ok(x.scale(f64::INFINITY).sum_all()),
            Shape::new(1, 1, 1, 1),
            &[1.0],
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn bad_step_rejected() {
        assert!(grad_check(|x| Ok(x.sum_all()), Shape::new(1, 1, 1, 1), &[1.0], 0.0).is_err());
        assert!(grad_check(|x| Ok(x.sum_all()), Shape::new(1, 1, 1, 1), &[1.0], -1e-5).is_err());
    }
}
