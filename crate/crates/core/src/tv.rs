//! Discrete total-variation primitives: forward-difference gradient, its
//! negative adjoint (divergence), the isotropic TV norm, and the grouped
//! shrinkage that is the proximal step of the TV term.
//!
//! Boundary rule: forward differences with replicate (Neumann) boundary,
//! so the last column of gx and the last row of gy are identically zero.

use crate::grid::{ImageGrid, RasterImage};

/// Horizontal and vertical forward differences of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    grid: ImageGrid,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl GradientField {
    pub fn zeros(grid: ImageGrid) -> Self {
        GradientField {
            grid,
            gx: vec![0.0; grid.n()],
            gy: vec![0.0; grid.n()],
        }
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn gx(&self) -> &[f64] {
        &self.gx
    }

    pub fn gy(&self) -> &[f64] {
        &self.gy
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let x: f64 = self.gx.iter().zip(&other.gx).map(|(a, b)| a * b).sum();
        let y: f64 = self.gy.iter().zip(&other.gy).map(|(a, b)| a * b).sum();
        x + y
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// self += a * other
    pub fn axpy(&mut self, a: f64, other: &GradientField) {
        debug_assert_eq!(self.grid, other.grid);
        for (s, o) in self.gx.iter_mut().zip(&other.gx) {
            *s += a * o;
        }
        for (s, o) in self.gy.iter_mut().zip(&other.gy) {
            *s += a * o;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.gx.iter().chain(&self.gy).all(|v| v.is_finite())
    }
}

/// Forward-difference gradient with replicate boundary.
pub fn gradient(u: &RasterImage) -> GradientField {
    let grid = u.grid();
    let (h, w) = (grid.height(), grid.width());
    let v = u.values();
    let mut g = GradientField::zeros(grid);
    for r in 0..h {
        let row = r * w;
        for c in 0..w - 1 {
            g.gx[row + c] = v[row + c + 1] - v[row + c];
        }
    }
    for r in 0..h - 1 {
        let row = r * w;
        for c in 0..w {
            g.gy[row + c] = v[row + w + c] - v[row + c];
        }
    }
    g
}

/// Exact negative adjoint of [`gradient`]: <gradient(u), g> = <u, -divergence(g)>
/// for every u and g. Entries of g on the zero boundary (last column of gx,
/// last row of gy) are ignored.
pub fn divergence(g: &GradientField) -> RasterImage {
    let grid = g.grid();
    let (h, w) = (grid.height(), grid.width());
    let mut out = RasterImage::zeros(grid);
    let v = out.values_mut();
    for r in 0..h {
        let row = r * w;
        for c in 0..w {
            let mut acc = 0.0;
            if c + 1 < w {
                acc += g.gx[row + c];
            }
            if c > 0 {
                acc -= g.gx[row + c - 1];
            }
            if r + 1 < h {
                acc += g.gy[row + c];
            }
            if r > 0 {
                acc -= g.gy[row - w + c];
            }
            v[row + c] = acc;
        }
    }
    out
}

/// Isotropic total variation: sum over pixels of sqrt(gx^2 + gy^2).
pub fn tv_norm(u: &RasterImage) -> f64 {
    let g = gradient(u);
    g.gx
        .iter()
        .zip(&g.gy)
        .map(|(x, y)| (x * x + y * y).sqrt())
        .sum()
}

/// Grouped soft threshold, the proximal operator of tau * isotropic TV on
/// the split variable: each pixel's (gx, gy) pair shrinks toward zero by
/// tau in magnitude, reaching exactly zero when the magnitude is <= tau.
pub fn group_soft_threshold(g: &GradientField, tau: f64) -> GradientField {
    let mut out = GradientField::zeros(g.grid());
    for i in 0..g.gx.len() {
        let m = (g.gx[i] * g.gx[i] + g.gy[i] * g.gy[i]).sqrt();
        if m > tau {
            let factor = 1.0 - tau / m;
            out.gx[i] = factor * g.gx[i];
            out.gy[i] = factor * g.gy[i];
        }
    }
    out
}
