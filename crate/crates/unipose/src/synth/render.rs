//! Software rasterizer for the synthetic data: anti-aliased capsules and
//! discs, low-frequency noise backgrounds, line-kernel motion blur, overlay
//! drawing, and PNG round-tripping.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::keypoints::Keypoints;
use crate::tensor::{Shape, Tensor};

/// Channel-major RGB pixel buffer in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub h: usize,
    pub w: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(h: usize, w: usize) -> Self {
        Raster { h, w, data: vec![0.0; 3 * h * w] }
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let sh = t.shape();
        if sh.n != 1 || sh.c != 3 {
            return Err(Error::shape("raster source", "1x3xHxW", sh.to_string()));
        }
        Ok(Raster { h: sh.h, w: sh.w, data: t.data().to_vec() })
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        Tensor::new(Shape::new(1, 3, self.h, self.w), self.data).unwrap()
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let plane = self.h * self.w;
        let i = y * self.w + x;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }

    pub fn set(&mut self, x: usize, y: usize, color: [f32; 3]) {
        let plane = self.h * self.w;
        let i = y * self.w + x;
        for c in 0..3 {
            self.data[c * plane + i] = color[c];
        }
    }

    /// Alpha-blends `color` over the pixel with coverage `cov` in [0,1].
    pub fn blend(&mut self, x: usize, y: usize, color: [f32; 3], cov: f32) {
        let plane = self.h * self.w;
        let i = y * self.w + x;
        for c in 0..3 {
            let v = &mut self.data[c * plane + i];
            *v = *v * (1.0 - cov) + color[c] * cov;
        }
    }
}

/// Smooth background: per-channel random values on a coarse `cell`-pitch
/// grid, bilinearly interpolated, all within `[lo, hi]`.
pub fn low_freq_background(r: &mut Raster, lo: f32, hi: f32, cell: usize, rng: &mut ChaCha8Rng) {
    let gw = r.w.div_ceil(cell) + 1;
    let gh = r.h.div_ceil(cell) + 1;
    let plane = r.h * r.w;
    for c in 0..3 {
        let nodes: Vec<f32> = (0..gw * gh).map(|_| rng.random_range(lo..=hi)).collect();
        for y in 0..r.h {
            let gy = y as f32 / cell as f32;
            let y0 = (gy as usize).min(gh - 2);
            let fy = gy - y0 as f32;
            for x in 0..r.w {
                let gx = x as f32 / cell as f32;
                let x0 = (gx as usize).min(gw - 2);
                let fx = gx - x0 as f32;
                let n = |yy: usize, xx: usize| nodes[yy * gw + xx];
                let top = n(y0, x0) * (1.0 - fx) + n(y0, x0 + 1) * fx;
                let bot = n(y0 + 1, x0) * (1.0 - fx) + n(y0 + 1, x0 + 1) * fx;
                r.data[c * plane + y * r.w + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
}

fn dist_to_segment(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * vx + (py - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * vx, a.1 + t * vy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Anti-aliased thick segment with round caps.
pub fn draw_capsule(r: &mut Raster, a: (f64, f64), b: (f64, f64), radius: f64, color: [f32; 3]) {
    let pad = radius + 1.0;
    let x0 = (a.0.min(b.0) - pad).floor().max(0.0) as usize;
    let x1 = (a.0.max(b.0) + pad).ceil().min((r.w - 1) as f64) as usize;
    let y0 = (a.1.min(b.1) - pad).floor().max(0.0) as usize;
    let y1 = (a.1.max(b.1) + pad).ceil().min((r.h - 1) as f64) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = dist_to_segment(x as f64, y as f64, a, b);
            let cov = (radius + 0.5 - d).clamp(0.0, 1.0) as f32;
            if cov > 0.0 {
                r.blend(x, y, color, cov);
            }
        }
    }
}

pub fn draw_disc(r: &mut Raster, center: (f64, f64), radius: f64, color: [f32; 3]) {
    draw_capsule(r, center, center, radius, color);
}

/// Filled axis-aligned rectangle with hard edges, clipped to the frame.
pub fn draw_rect_filled(r: &mut Raster, x0: f64, y0: f64, x1: f64, y1: f64, color: [f32; 3]) {
    let xa = x0.round().max(0.0) as usize;
    let xb = (x1.round().min((r.w - 1) as f64)).max(0.0) as usize;
    let ya = y0.round().max(0.0) as usize;
    let yb = (y1.round().min((r.h - 1) as f64)).max(0.0) as usize;
    if x1 < 0.0 || y1 < 0.0 || x0 > (r.w - 1) as f64 || y0 > (r.h - 1) as f64 {
        return;
    }
    for y in ya..=yb {
        for x in xa..=xb {
            r.set(x, y, color);
        }
    }
}

pub fn draw_rect_outline(r: &mut Raster, x0: f64, y0: f64, x1: f64, y1: f64, color: [f32; 3]) {
    draw_capsule(r, (x0, y0), (x1, y0), 0.5, color);
    draw_capsule(r, (x1, y0), (x1, y1), 0.5, color);
    draw_capsule(r, (x1, y1), (x0, y1), 0.5, color);
    draw_capsule(r, (x0, y1), (x0, y0), 0.5, color);
}

/// Distinct saturated color for bone `i`: 13 equally spaced hues visited
/// with stride 6, so bones that are adjacent in the skeleton get hues far
/// apart on the wheel. Limbs that look alike are the main failure mode for
/// small pose models, so the palette keeps every pair of bones, and every
/// bone against white, strongly separated.
pub fn bone_color(i: usize) -> [f32; 3] {
    const SAT: f64 = 0.75;
    let hue = 6.0 * ((i * 6) % 13) as f64 / 13.0;
    let sector = hue.floor() as usize % 6;
    let frac = hue - hue.floor();
    let lo = 1.0 - SAT;
    let down = 1.0 - SAT * frac;
    let up = 1.0 - SAT * (1.0 - frac);
    let rgb = match sector {
        0 => [1.0, up, lo],
        1 => [down, 1.0, lo],
        2 => [lo, 1.0, up],
        3 => [lo, down, 1.0],
        4 => [up, lo, 1.0],
        _ => [1.0, lo, down],
    };
    rgb.map(|v| v as f32)
}

fn sample_clamped(plane: &[f32], w: usize, h: usize, x: f64, y: f64) -> f32 {
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (xc - x0 as f64) as f32;
    let fy = (yc - y0 as f64) as f32;
    let at = |yy: usize, xx: usize| plane[yy * w + xx];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Averages samples along the line `(-v/2, v/2)`: a box blur oriented along
/// the velocity. Velocities under half a pixel leave the frame untouched.
pub fn motion_blur(r: &Raster, vx: f64, vy: f64) -> Raster {
    let speed = (vx * vx + vy * vy).sqrt();
    if speed < 0.5 {
        return r.clone();
    }
    let taps = (speed.ceil() as usize + 1).max(2);
    let mut out = Raster::new(r.h, r.w);
    let plane = r.h * r.w;
    for c in 0..3 {
        let src = &r.data[c * plane..(c + 1) * plane];
        for y in 0..r.h {
            for x in 0..r.w {
                let mut acc = 0.0f32;
                for t in 0..taps {
                    let s = t as f64 / (taps - 1) as f64 - 0.5;
                    acc += sample_clamped(src, r.w, r.h, x as f64 - vx * s, y as f64 - vy * s);
                }
                out.data[c * plane + y * r.w + x] = acc / taps as f32;
            }
        }
    }
    out
}

pub fn save_png(t: &Tensor<f32>, path: &Path) -> Result<()> {
    let r = Raster::from_tensor(t)?;
    let mut img = image::RgbImage::new(r.w as u32, r.h as u32);
    for y in 0..r.h {
        for x in 0..r.w {
            let px = r.get(x, y);
            img.put_pixel(
                x as u32,
                y as u32,
                image::Rgb(px.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)),
            );
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })
}

pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(Error::Image)?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut r = Raster::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x as u32, y as u32);
            r.set(x, y, [0, 1, 2].map(|c| px.0[c] as f32 / 255.0));
        }
    }
    Ok(r.into_tensor())
}

/// Writes the sample image with the given pose and box drawn on top:
/// green reference segments, red joint discs, blue box outline.
pub fn render_overlay(
    image: &Tensor<f32>,
    pose: &Keypoints,
    bbox: (f64, f64, f64, f64),
    path: &Path,
) -> Result<()> {
    let mut r = Raster::from_tensor(image)?;
    let limb_color = [0.2, 0.95, 0.2];
    let joint_color = [1.0, 0.15, 0.15];
    let box_color = [0.3, 0.5, 1.0];
    let mut segments: Vec<(usize, usize)> = pose.limbs().to_vec();
    segments.extend(pose.torso());
    segments.extend(pose.head());
    for (a, b) in segments {
        draw_capsule(&mut r, pose.position(a), pose.position(b), 0.7, limb_color);
    }
    for i in 0..pose.len() {
        draw_disc(&mut r, pose.position(i), 1.1, joint_color);
    }
    draw_rect_outline(&mut r, bbox.0, bbox.1, bbox.2, bbox.3, box_color);
    save_png(&r.into_tensor(), path)
}
