//! Rasterizer: scene -> 32x32x3 image in [-1, 1].

use super::{Scene, Shape, GRID};
use crate::error::Result;
use crate::{Image, Tensor};

pub const IMG_SIZE: usize = 32;
pub const IMG_CHANNELS: usize = 3;

const BACKGROUND: f64 = 0.0;

/// Quantizes a value in [-1,1] to the 256-level pixel grid.
pub(crate) fn quantize(v: f64) -> u8 {
    let k = ((v + 1.0) / 2.0 * 255.0).round();
    k.clamp(0.0, 255.0) as u8
}

/// Maps a pixel level back to [-1, 1].
pub(crate) fn dequantize(k: u8) -> f64 {
    (k as f64 / 255.0) * 2.0 - 1.0
}

fn cell_bounds(index: u8) -> (usize, usize, usize, usize) {
    let row = index as usize / GRID;
    let col = index as usize % GRID;
    let y0 = row * IMG_SIZE / GRID;
    let y1 = (row + 1) * IMG_SIZE / GRID;
    let x0 = col * IMG_SIZE / GRID;
    let x1 = (col + 1) * IMG_SIZE / GRID;
    (y0, y1, x0, x1)
}

fn covers(shape: Shape, y: usize, x: usize, cy: f64, cx: f64, r: f64) -> bool {
    let dy = y as f64 + 0.5 - cy;
    let dx = x as f64 + 0.5 - cx;
    match shape {
        Shape::Circle => dy * dy + dx * dx <= r * r,
        Shape::Square => dy.abs() <= r && dx.abs() <= r,
        // Filled upward triangle: apex at the top, base at the bottom.
        Shape::Triangle => {
            let t = dy + r; // 0 at the apex row, 2r at the base
            t >= 0.0 && t <= 2.0 * r && dx.abs() <= t / 2.0
        }
    }
}

/// Deterministic rasterization: filled shapes on a gray background,
/// quantized to 256 levels and mapped back into [-1, 1].
pub fn render(scene: &Scene) -> Result<Image> {
    scene.validate()?;
    let mut pixels = vec![BACKGROUND; IMG_SIZE * IMG_SIZE * IMG_CHANNELS];
    for obj in &scene.objects {
        let (y0, y1, x0, x1) = cell_bounds(obj.cell);
        let cy = (y0 + y1) as f64 / 2.0;
        let cx = (x0 + x1) as f64 / 2.0;
        let r = ((y1 - y0).min(x1 - x0) as f64) / 2.0 - 1.0;
        let rgb = obj.color.rgb();
        for y in y0..y1 {
            for x in x0..x1 {
                if covers(obj.shape, y, x, cy, cx, r) {
                    let off = (y * IMG_SIZE + x) * IMG_CHANNELS;
                    pixels[off..off + 3].copy_from_slice(&rgb);
                }
            }
        }
    }
    let data: Vec<f64> = pixels.iter().map(|&v| dequantize(quantize(v))).collect();
    Ok(Tensor::new(
        vec![IMG_SIZE, IMG_SIZE, IMG_CHANNELS],
        data,
    ))
}
