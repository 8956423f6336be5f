//! Procedural stand-ins for handwritten Arabic-Indic digits.
//!
//! Each class is a fixed stroke skeleton loosely shaped like its glyph
//! (٠ ١ ٢ ٣ ٤ ٥ ٦ ٧ ٨ ٩), rendered with a random affine jitter, stroke width
//! and speckle noise as dark ink on white. Used by tests, demos and the
//! acceptance suite when the real corpus is not available.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::{encode_bitmap, RawImage, CLASSES, IMAGE_SIDE};
use crate::error::{Error, Result};
use crate::seed;

type Stroke = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64) -> Stroke {
    (0..=16)
        .map(|i| {
            let t = from + (to - from) * f64::from(i) / 16.0;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Stroke skeleton of `digit` in the unit square, y pointing down.
fn skeleton(digit: usize) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.09, 0.11, 0.0, 2.0 * PI)],
        1 => vec![vec![(0.52, 0.15), (0.5, 0.85)]],
        2 => vec![
            vec![(0.45, 0.85), (0.45, 0.2)],
            vec![(0.45, 0.3), (0.6, 0.22), (0.7, 0.12)],
        ],
        3 => vec![
            vec![(0.4, 0.85), (0.4, 0.2)],
            vec![(0.4, 0.3), (0.5, 0.2), (0.56, 0.3), (0.64, 0.18), (0.72, 0.1)],
        ],
        4 => vec![
            arc(0.52, 0.32, 0.16, 0.13, -0.4 * PI, 0.6 * PI),
            arc(0.52, 0.62, 0.2, 0.17, -0.4 * PI, 0.7 * PI),
        ],
        5 => vec![arc(0.5, 0.55, 0.2, 0.26, 0.0, 2.0 * PI)],
        6 => vec![vec![(0.28, 0.2), (0.66, 0.22), (0.6, 0.55), (0.55, 0.85)]],
        7 => vec![vec![(0.25, 0.18), (0.5, 0.85), (0.75, 0.18)]],
        8 => vec![vec![(0.25, 0.85), (0.5, 0.18), (0.75, 0.85)]],
        _ => vec![
            arc(0.45, 0.32, 0.15, 0.15, 0.0, 2.0 * PI),
            vec![(0.6, 0.32), (0.58, 0.85)],
        ],
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Renders one jittered 32×32 sample of `digit`, deterministic in
/// `(seed, digit, index)`.
pub fn render_digit(digit: usize, index: usize, seed: u64) -> RawImage {
    let mut rng = seed::rng(seed::derive(seed, &[digit as u64, index as u64]));
    let side = IMAGE_SIDE as f64;
    let scale = rng.gen_range(0.8..1.05) * side;
    let angle = rng.gen_range(-0.18..0.18f64);
    let shear = rng.gen_range(-0.15..0.15);
    let (sx, sy) = (rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5));
    let width = rng.gen_range(1.1..2.1);
    let (cos, sin) = (angle.cos(), angle.sin());

    let segments: Vec<((f64, f64), (f64, f64))> = skeleton(digit)
        .into_iter()
        .flat_map(|stroke| {
            let pts: Vec<(f64, f64)> = stroke
                .into_iter()
                .map(|(x, y)| {
                    let (x, y) = (x - 0.5 + shear * (y - 0.5), y - 0.5);
                    let (x, y) = (x * cos - y * sin, x * sin + y * cos);
                    (x * scale + side / 2.0 + sx, y * scale + side / 2.0 + sy)
                })
                .collect();
            pts.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
        })
        .collect();

    let mut img = RawImage::filled(IMAGE_SIDE, IMAGE_SIDE, [255, 255, 255]);
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let d = segments
                .iter()
                .map(|&(a, b)| segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min);
            let ink = (width + 0.5 - d).clamp(0.0, 1.0);
            let noise = if rng.gen_bool(0.02) { rng.gen_range(0.2..0.6) } else { 0.0 };
            let v = 255.0 * (1.0 - ink.max(noise));
            let tint = rng.gen_range(-6.0..6.0);
            img.pixels[y * IMAGE_SIDE + x] = [
                (v + tint).clamp(0.0, 255.0) as u8,
                v.clamp(0.0, 255.0) as u8,
                (v - tint).clamp(0.0, 255.0) as u8,
            ];
        }
    }
    img
}

/// Writes `per_class` bitmaps per digit as `<root>/<d>/<d>_<i>.bmp`.
pub fn write_dataset(root: &Path, per_class: usize, seed: u64) -> Result<()> {
    for digit in 0..CLASSES {
        let dir = root.join(digit.to_string());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..per_class {
            let path = dir.join(format!("{digit}_{i:04}.bmp"));
            fs::write(&path, encode_bitmap(&render_digit(digit, i, seed)))
                .map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

/// Writes `per_class` bitmaps per digit into `root` itself, named
/// `<d>_<i>.bmp`.
pub fn write_flat_dataset(root: &Path, per_class: usize, seed: u64) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for digit in 0..CLASSES {
        for i in 0..per_class {
            let path = root.join(format!("{digit}_{i:04}.bmp"));
            fs::write(&path, encode_bitmap(&render_digit(digit, i, seed)))
                .map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}
