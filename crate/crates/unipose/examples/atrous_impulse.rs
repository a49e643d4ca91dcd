//! Where a dilated 3x3 kernel actually reads from.
//!
//! Pushes impulse images through a 3x3 convolution at several dilation
//! rates and prints which input pixels influenced the center output, then
//! checks the receptive-field growth rule on a small cascade.
//!
//! Run: cargo run --release --example atrous_impulse

use unipose::tensor::{Shape, Tensor};

fn taps_at_dilation(rate: usize) -> unipose::Result<Vec<(usize, usize)>> {
    let n = 25;
    // All-ones 3x3 kernel; padding = rate keeps the output size at n.
    let kernel = Tensor::<f32>::full(Shape::new(1, 1, 3, 3), 1.0);

    let mut hits = Vec::new();
    for y in 0..n {
        for x in 0..n {
            let mut img = vec![0.0f32; n * n];
            img[y * n + x] = 1.0;
            let image = Tensor::new(Shape::new(1, 1, n, n), img)?;
            let out = image.conv2d(&kernel, None, 1, rate, rate)?;
            // The center output saw this pixel iff its response is nonzero.
            if out.data()[(n / 2) * n + n / 2] != 0.0 {
                hits.push((x, y));
            }
        }
    }
    Ok(hits)
}

fn main() -> unipose::Result<()> {
    for rate in [1usize, 2, 6] {
        let hits = taps_at_dilation(rate)?;
        let xs: Vec<usize> = hits.iter().map(|h| h.0).collect();
        let span = xs.iter().max().unwrap() - xs.iter().min().unwrap() + 1;
        println!("dilation {rate}: {} taps, span {span} px", hits.len());
        for (x, y) in &hits {
            println!("  reads ({x}, {y})");
        }
        assert_eq!(hits.len(), 9, "a 3x3 kernel always owns 9 taps");
        assert_eq!(span, 2 * rate + 1, "the span grows with the rate, not the weights");
    }

    // Receptive field along a cascade adds (k-1)*rate per stage.
    let rates = [6usize, 12, 18, 24];
    let rf = 1 + rates.iter().map(|r| 2 * r).sum::<usize>();
    println!("cascade at rates {rates:?}: receptive field {rf} px");
    assert_eq!(rf, 121);
    Ok(())
}
