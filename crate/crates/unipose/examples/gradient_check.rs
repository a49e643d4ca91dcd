//! Finite differences against the autodiff engine.
//!
//! Checks a dilated convolution, the pooling/resize pair the decoder leans
//! on, and a composite expression, all in f64 where central differences are
//! trustworthy.
//!
//! Run: cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unipose::tensor::{grad_check, Shape, Tensor};

fn main() -> unipose::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sample = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };

    let ish = Shape::new(1, 2, 8, 8);
    let wsh = Shape::new(3, 2, 3, 3);
    let osh = Shape::new(1, 3, 8, 8);
    let weight_data = sample(wsh.numel());
    // A fixed random readout turns any output into a scalar loss without
    // flattening the gradient to all-ones.
    let readout_conv = sample(osh.numel());
    let readout_in = sample(ish.numel());

    let err = grad_check(
        |x| {
            let w = Tensor::new(wsh, weight_data.clone())?;
            let r = Tensor::new(osh, readout_conv.clone())?;
            Ok(x.conv2d(&w, None, 1, 2, 2)?.mul(&r)?.sum_all())
        },
        ish,
        &sample(ish.numel()),
        1e-5,
    )?;
    println!("conv2d dilation 2, d(loss)/d(input): max rel err {err:.2e}");
    assert!(err < 1e-6);

    let err = grad_check(
        |x| {
            let r = Tensor::new(ish, readout_in.clone())?;
            Ok(x.max_pool2d(2, 2)?.bilinear_resize(8, 8)?.mul(&r)?.sum_all())
        },
        ish,
        &sample(ish.numel()),
        1e-5,
    )?;
    println!("max_pool2d + bilinear_resize:    max rel err {err:.2e}");
    assert!(err < 1e-6);

    let err = grad_check(
        |x| {
            let r = Tensor::new(ish, readout_in.clone())?;
            let y = x.relu().mul(x)?;
            Ok(y.scale(0.5).add(&y.sigmoid())?.mul(&r)?.sum_all())
        },
        ish,
        &sample(ish.numel()),
        1e-5,
    )?;
    println!("relu/mul/sigmoid composite:      max rel err {err:.2e}");
    assert!(err < 1e-6);

    println!("all checks under 1e-6 relative error");
    Ok(())
}
