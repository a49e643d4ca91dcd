//! Generate a small labeled dataset: images, a video clip, annotations,
//! and one ground-truth overlay you can open and inspect.
//!
//! Everything is deterministic per seed; rerunning rewrites identical bytes.
//! Output lands in target/example-out/synthesize_dataset/.
//!
//! Run: cargo run --release --example synthesize_dataset

use std::path::PathBuf;

use unipose::synth::annot::{load_annotations, save_annotations, ClipRecord, Dataset, SampleRecord};
use unipose::synth::figure::FigureModel;
use unipose::synth::render::{render_overlay, save_png};
use unipose::synth::{synth_pose_sample, synth_video_clip, MotionConfig};

fn main() -> unipose::Result<()> {
    let out = PathBuf::from("target/example-out/synthesize_dataset");
    let figure = FigureModel::human14();
    let mut dataset = Dataset::new_human14(out.clone());

    for i in 0..4u64 {
        let sample = synth_pose_sample(100 + i, &figure, 64, 64)?;
        let visible = (0..14).filter(|&j| sample.keypoints.visible(j)).count();
        println!(
            "sample {i}: bbox ({:.1}, {:.1})-({:.1}, {:.1}), {visible}/14 joints visible",
            sample.bbox.0, sample.bbox.1, sample.bbox.2, sample.bbox.3
        );
        let rel = PathBuf::from(format!("images/{i:05}.png"));
        save_png(&sample.image, &out.join(&rel))?;
        if i == 0 {
            render_overlay(
                &sample.image,
                &sample.keypoints,
                sample.bbox,
                &out.join("sample0_truth_overlay.png"),
            )?;
        }
        dataset.samples.push(SampleRecord {
            image: rel,
            bbox: sample.bbox,
            keypoints: sample.keypoints,
        });
    }

    // A clip with everything on: motion, blur, and a transient occluder.
    let clip = synth_video_clip(7, &figure, 6, 64, 64, &MotionConfig::default())?;
    if let Some(event) = &clip.occlusion {
        println!(
            "clip: occluder over frames {}..{} at ({:.0}, {:.0})",
            event.start,
            event.start + event.len,
            event.rect.0,
            event.rect.1
        );
    }
    let mut frames = Vec::new();
    for (t, frame) in clip.frames.iter().enumerate() {
        let hidden: Vec<usize> = (0..14).filter(|&j| !frame.keypoints.visible(j)).collect();
        if !hidden.is_empty() {
            println!("  frame {t}: joints {hidden:?} occluded");
        }
        let rel = PathBuf::from(format!("clips/0000/{t:03}.png"));
        save_png(&frame.image, &out.join(&rel))?;
        frames.push(SampleRecord {
            image: rel,
            bbox: frame.bbox,
            keypoints: frame.keypoints.clone(),
        });
    }
    dataset.clips.push(ClipRecord { frames });

    let annot = out.join("annotations.txt");
    save_annotations(&annot, &dataset)?;

    // The format round-trips exactly.
    let loaded = load_annotations(&annot)?;
    assert_eq!(loaded.samples.len(), 4);
    assert_eq!(loaded.clips[0].frames.len(), 6);
    assert_eq!(loaded, dataset);

    println!("\nwrote {}", annot.display());
    println!("open {} to see the labels drawn on a sample", out.join("sample0_truth_overlay.png").display());
    Ok(())
}
