//! The metric suite on a pose you can check by hand.
//!
//! One 3-joint figure: torso 0-1 of length 100, head 0-2 of length 40, one
//! limb. Predictions are placed at exactly the threshold distances to show
//! the inclusive boundaries, the visibility gating, and how the reports
//! read.
//!
//! Run: cargo run --release --example metrics_walkthrough

use unipose::keypoints::Keypoints;
use unipose::metrics::{bbox_containment_rate, pck, pckh, pcp};

fn figure(points: Vec<(f64, f64, bool)>) -> Keypoints {
    Keypoints::with_segments(points, Some((0, 1)), Some((0, 2)), vec![(1, 2)]).unwrap()
}

fn main() -> unipose::Result<()> {
    let gt = vec![figure(vec![
        (0.0, 0.0, true),    // joint 0, torso top and head top
        (0.0, 100.0, true),  // joint 1, torso bottom
        (40.0, 0.0, true),   // joint 2, head end
    ])];

    // PCK@0.2 threshold is 0.2 * torso = 20 px, inclusive.
    let pred = vec![figure(vec![
        (20.0, 0.0, true),  // exactly at the threshold: correct
        (20.1, 100.0, true), // just past it: wrong
        (40.0, 19.9, true),  // just inside: correct
    ])];
    let report = pck(&pred, &gt, 0.2)?;
    println!("{}", report.to_text());
    assert_eq!((report.correct, report.counted), (2, 3));

    // PCKh@0.5 rescales the same errors against half the head length (20 px).
    let report = pckh(&pred, &gt, 0.5)?;
    println!("{}", report.to_text());
    assert_eq!((report.correct, report.counted), (2, 3));

    // PCP: the limb 1-2 spans (0,100)-(40,0); both endpoint errors must be
    // within half its length. Endpoints above are off by 20.1 and 19.9 px
    // against a threshold of ~53.9, so the limb counts as correct.
    let report = pcp(&pred, &gt, 0.5)?;
    println!("{}", report.to_text());
    assert_eq!((report.correct, report.counted), (1, 1));

    // Hidden ground-truth joints leave every denominator.
    let gt_hidden = vec![figure(vec![
        (0.0, 0.0, true),
        (0.0, 100.0, false), // not visible: joint 1 and limb 1-2 are excluded
        (40.0, 0.0, true),
    ])];
    let report = pck(&pred, &gt_hidden, 0.2)?;
    println!("with joint 1 hidden:\n{}", report.to_text());
    assert_eq!((report.correct, report.counted), (2, 2));
    // The only limb lost an endpoint, so the limb metric has nothing left
    // to count and says so instead of reporting 0/0.
    match pcp(&pred, &gt_hidden, 0.5) {
        Err(e) => println!("limb metric: {e}"),
        Ok(_) => unreachable!("no countable limbs"),
    }

    // Containment only asks whether predictions fall inside a given box.
    let boxes = vec![(0.0, 0.0, 40.0, 100.0)];
    let report = bbox_containment_rate(&pred, &gt, &boxes)?;
    println!("{}", report.to_text());
    assert_eq!((report.correct, report.counted), (3, 3), "edges are inside");

    Ok(())
}
