//! Pure rasterizers. Pixel (row r, column c) is centred at integer
//! coordinates (x = c, y = r).

use std::f64::consts::PI;

pub const IMAGE_SIZE: usize = 16;

const BAR_HALF_LENGTH: f64 = 4.5;
const BAR_WIDTH: f64 = 0.7;

/// Isotropic Gaussian bump with unit peak.
pub fn render_bump(x: f64, y: f64, sigma: f64) -> Vec<f64> {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut img = vec![0.0; IMAGE_SIZE * IMAGE_SIZE];
    for r in 0..IMAGE_SIZE {
        for c in 0..IMAGE_SIZE {
            let dx = c as f64 - x;
            let dy = r as f64 - y;
            img[r * IMAGE_SIZE + c] = (-(dx * dx + dy * dy) * inv).exp();
        }
    }
    img
}

/// Soft bar through (7.5, `y`) rotated by `degrees`. Rotations are taken mod
/// 180 since the bar is symmetric.
pub fn render_bar(degrees: f64, y: f64) -> Vec<f64> {
    let theta = degrees * PI / 180.0;
    let (s, co) = theta.sin_cos();
    let inv = 1.0 / (2.0 * BAR_WIDTH * BAR_WIDTH);
    let centre = (IMAGE_SIZE as f64 - 1.0) / 2.0;
    let mut img = vec![0.0; IMAGE_SIZE * IMAGE_SIZE];
    for r in 0..IMAGE_SIZE {
        for c in 0..IMAGE_SIZE {
            let dx = c as f64 - centre;
            let dy = r as f64 - y;
            let along = dx * co + dy * s;
            let across = -dx * s + dy * co;
            let overshoot = (along.abs() - BAR_HALF_LENGTH).max(0.0);
            img[r * IMAGE_SIZE + c] = (-(across * across + overshoot * overshoot) * inv).exp();
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argmax(img: &[f64]) -> (usize, usize) {
        let i = img
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        (i / IMAGE_SIZE, i % IMAGE_SIZE)
    }

    #[test]
    fn centred_bump_peaks_at_8_8() {
        let img = render_bump(8.0, 8.0, 1.5);
        assert_eq!(argmax(&img), (8, 8));
        assert_eq!(img[8 * IMAGE_SIZE + 8], 1.0);
    }

    #[test]
    fn bar_is_symmetric_under_half_turn() {
        let a = render_bar(30.0, 7.0);
        let b = render_bar(210.0, 7.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn horizontal_bar_lies_on_its_row() {
        let img = render_bar(0.0, 5.0);
        assert!(img[5 * IMAGE_SIZE + 7] > 0.99);
        assert!(img[9 * IMAGE_SIZE + 7] < 1e-3);
    }
}
