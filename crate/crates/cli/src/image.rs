//! Traversal grids: one row of tiles, tile `t` at columns `t*W .. (t+1)*W`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};

/// Decoder logit to an 8-bit grey level.
pub fn to_grey(logit: f64) -> u8 {
    let p = 1.0 / (1.0 + (-logit).exp());
    (255.0 * p.clamp(0.0, 1.0)).round() as u8
}

/// Lays `tiles` (each `w * h`, row-major) side by side.
pub fn tile_row(tiles: &[Vec<u8>], w: usize, h: usize) -> Vec<u8> {
    let mut out = vec![0u8; tiles.len() * w * h];
    let stride = tiles.len() * w;
    for (t, tile) in tiles.iter().enumerate() {
        for r in 0..h {
            out[r * stride + t * w..r * stride + (t + 1) * w].copy_from_slice(&tile[r * w..(r + 1) * w]);
        }
    }
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(pixels)?;
    f.flush()?;
    Ok(())
}

pub fn write_png(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    let mut enc = png::Encoder::new(f, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header()?.write_image_data(pixels)?;
    Ok(())
}
