//! 2-D FFT helpers shared by the optics and acquisition modules.
//!
//! Wraps rustfft with cached row/column plans for one grid size. The
//! forward transform is the plain unnormalized DFT; the inverse carries
//! the full 1/(W*H) factor, so `inverse(forward(x)) == x` up to rounding.

use crate::grid::{ImageGrid, RasterImage};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct Fft2 {
    width: usize,
    height: usize,
    fwd_row: Arc<dyn Fft<f64>>,
    fwd_col: Arc<dyn Fft<f64>>,
    inv_row: Arc<dyn Fft<f64>>,
    inv_col: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish()
    }
}

impl Clone for Fft2 {
    fn clone(&self) -> Self {
        Fft2 {
            width: self.width,
            height: self.height,
            fwd_row: Arc::clone(&self.fwd_row),
            fwd_col: Arc::clone(&self.fwd_col),
            inv_row: Arc::clone(&self.inv_row),
            inv_col: Arc::clone(&self.inv_col),
        }
    }
}

impl Fft2 {
    pub fn new(grid: ImageGrid) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            width: grid.width(),
            height: grid.height(),
            fwd_row: planner.plan_fft_forward(grid.width()),
            fwd_col: planner.plan_fft_forward(grid.height()),
            inv_row: planner.plan_fft_inverse(grid.width()),
            inv_col: planner.plan_fft_inverse(grid.height()),
        }
    }

    fn apply(&self, data: &mut [Complex<f64>], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(data.len(), self.width * self.height);
        // Rows are contiguous; rustfft processes the buffer chunk by chunk.
        let mut scratch = vec![Complex::default(); row.get_inplace_scratch_len()];
        row.process_with_scratch(data, &mut scratch);

        // Columns via transpose, batch FFT, transpose back.
        let mut t = vec![Complex::default(); data.len()];
        transpose(data, self.width, self.height, &mut t);
        let mut scratch = vec![Complex::default(); col.get_inplace_scratch_len()];
        col.process_with_scratch(&mut t, &mut scratch);
        transpose(&t, self.height, self.width, data);
    }

    /// In-place unnormalized 2-D DFT.
    pub fn forward(&self, data: &mut [Complex<f64>]) {
        self.apply(data, &self.fwd_row, &self.fwd_col);
    }

    /// In-place inverse 2-D DFT, scaled by 1/(W*H).
    pub fn inverse(&self, data: &mut [Complex<f64>]) {
        self.apply(data, &self.inv_row, &self.inv_col);
        let scale = 1.0 / (self.width * self.height) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Spectrum of a real image.
    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Real part of the inverse transform (imaginary parts are rounding
    /// noise whenever the spectrum came from a real signal).
    pub fn inverse_real(&self, spectrum: &[Complex<f64>]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.inverse(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }
}

fn transpose(src: &[Complex<f64>], width: usize, height: usize, dst: &mut [Complex<f64>]) {
    for r in 0..height {
        for c in 0..width {
            dst[c * height + r] = src[r * width + c];
        }
    }
}

/// Move the pixel at the grid center to index (0, 0): the inverse FFT
/// shift. A kernel stored centered must pass through this before its
/// spectrum is taken, so its center pixel becomes the zero-shift tap.
pub fn ifftshift(grid: ImageGrid, values: &[f64]) -> Vec<f64> {
    let (h, w) = (grid.height(), grid.width());
    let (cr, cc) = grid.center();
    let mut out = vec![0.0; values.len()];
    for r in 0..h {
        let sr = (r + cr) % h;
        for c in 0..w {
            let sc = (c + cc) % w;
            out[r * w + c] = values[sr * w + sc];
        }
    }
    out
}

/// Move index (0, 0) to the grid center: the forward FFT shift.
pub fn fftshift(grid: ImageGrid, values: &[f64]) -> Vec<f64> {
    let (h, w) = (grid.height(), grid.width());
    let (cr, cc) = grid.center();
    let mut out = vec![0.0; values.len()];
    for r in 0..h {
        let dr = (r + cr) % h;
        for c in 0..w {
            let dc = (c + cc) % w;
            out[dr * w + dc] = values[r * w + c];
        }
    }
    out
}

/// Periodic Gaussian blur. The blur kernel is the wrapped isotropic
/// Gaussian of the given standard deviation, normalized to unit sum, so a
/// constant image is exactly preserved.
pub fn gaussian_blur(image: &RasterImage, sigma: f64) -> RasterImage {
    let grid = image.grid();
    let (h, w) = (grid.height(), grid.width());
    let mut kernel = vec![0.0f64; grid.n()];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for r in 0..h {
        let dr = r.min(h - r) as f64;
        for c in 0..w {
            let dc = c.min(w - c) as f64;
            kernel[r * w + c] = (-(dr * dr + dc * dc) * inv).exp();
        }
    }
    let total: f64 = kernel.iter().sum();
    for v in &mut kernel {
        *v /= total;
    }

    let fft = Fft2::new(grid);
    let mut spec = fft.forward_real(image.values());
    let kspec = fft.forward_real(&kernel);
    for (s, k) in spec.iter_mut().zip(&kspec) {
        *s *= k;
    }
    let blurred = fft.inverse_real(&spec);
    RasterImage::from_values(grid, blurred).expect("blur preserves length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::RandomStream;
    use rand::Rng;

    #[test]
    fn forward_inverse_round_trip() {
        let grid = ImageGrid::new(12, 10).unwrap();
        let mut rng = RandomStream::new(3).rng();
        let values: Vec<f64> = (0..grid.n()).map(|_| rng.random::<f64>() - 0.5).collect();
        let fft = Fft2::new(grid);
        let spec = fft.forward_real(&values);
        let back = fft.inverse_real(&spec);
        for (a, b) in values.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn dc_bin_is_sum() {
        let grid = ImageGrid::square(8).unwrap();
        let values: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let fft = Fft2::new(grid);
        let spec = fft.forward_real(&values);
        let sum: f64 = values.iter().sum();
        assert!((spec[0].re - sum).abs() < 1e-9);
        assert!(spec[0].im.abs() < 1e-9);
    }

    #[test]
    fn shifts_are_inverses() {
        for (w, h) in [(8, 8), (9, 9), (8, 6), (7, 10)] {
            let grid = ImageGrid::new(w, h).unwrap();
            let values: Vec<f64> = (0..grid.n()).map(|i| i as f64).collect();
            let round = ifftshift(grid, &fftshift(grid, &values));
            assert_eq!(round, values, "shift round trip failed for {w}x{h}");
        }
    }

    #[test]
    fn fftshift_moves_origin_to_center() {
        let grid = ImageGrid::square(8).unwrap();
        let mut values = vec![0.0; 64];
        values[0] = 1.0;
        let shifted = fftshift(grid, &values);
        let (cr, cc) = grid.center();
        assert_eq!(shifted[cr * 8 + cc], 1.0);
    }

    #[test]
    fn gaussian_blur_preserves_constants() {
        let grid = ImageGrid::square(16).unwrap();
        let img = RasterImage::constant(grid, 3.25);
        let blurred = gaussian_blur(&img, 4.0);
        for v in blurred.values() {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_blur_preserves_mean() {
        let grid = ImageGrid::square(16).unwrap();
        let mut rng = RandomStream::new(9).rng();
        let img = RasterImage::from_values(
            grid,
            (0..grid.n()).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let blurred = gaussian_blur(&img, 4.0);
        assert!((img.sum() - blurred.sum()).abs() < 1e-9);
    }
}
