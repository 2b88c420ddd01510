//! Pixel-grid primitives: images, index partitions, centered windows, and
//! the masking/restriction/embedding operators built on them.
//!
//! All pixel data is stored in a single fixed row-major, 0-based
//! linearization: pixel (row, col) lives at index `row * width + col`.
//! Every operator in the crate relies on that one convention.

use crate::error::{SimError, SimResult};
use crate::stream::RandomStream;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Dimensions of a pixel grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageGrid {
    width: usize,
    height: usize,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize) -> SimResult<Self> {
        if width == 0 || height == 0 {
            return Err(SimError::InvalidArgument(format!(
                "grid dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(ImageGrid { width, height })
    }

    pub fn square(side: usize) -> SimResult<Self> {
        ImageGrid::new(side, side)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Total pixel count N.
    pub fn n(&self) -> usize {
        self.width * self.height
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    /// Center pixel (row, col); for even dimensions the convention is
    /// floor(dim / 2), matching the FFT-shift placement of the DC sample.
    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }
}

/// A real-valued field on a pixel grid. Holds samples, estimates and
/// kernels alike; intermediate quantities (residuals, duals) may be signed.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    grid: ImageGrid,
    values: Vec<f64>,
}

impl RasterImage {
    pub fn zeros(grid: ImageGrid) -> Self {
        RasterImage {
            grid,
            values: vec![0.0; grid.n()],
        }
    }

    pub fn constant(grid: ImageGrid, value: f64) -> Self {
        RasterImage {
            grid,
            values: vec![value; grid.n()],
        }
    }

    pub fn from_values(grid: ImageGrid, values: Vec<f64>) -> SimResult<Self> {
        if values.len() != grid.n() {
            return Err(SimError::InvalidArgument(format!(
                "value count {} does not match grid size {}",
                values.len(),
                grid.n()
            )));
        }
        Ok(RasterImage { grid, values })
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.grid.index(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let idx = self.grid.index(row, col);
        self.values[idx] = value;
    }

    pub fn dot(&self, other: &RasterImage) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// self += a * other
    pub fn axpy(&mut self, a: f64, other: &RasterImage) {
        debug_assert_eq!(self.grid, other.grid);
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    pub fn scale_in_place(&mut self, a: f64) {
        for v in &mut self.values {
            *v *= a;
        }
    }

    pub fn clamp_non_negative(&mut self) {
        for v in &mut self.values {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Disjoint index sets {Omega_1, ..., Omega_P} covering {0, ..., N-1};
/// each set selects the pixels illuminated by one pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexPartition {
    n: usize,
    subsets: Vec<Vec<usize>>,
    seed: u64,
}

impl IndexPartition {
    /// Rebuild a partition from a per-index assignment (index i belongs to
    /// subset assignment[i]). Used when loading stored acquisitions.
    pub fn from_assignment(assignment: &[u8], patterns: usize) -> SimResult<Self> {
        if patterns == 0 {
            return Err(SimError::InvalidArgument("pattern count must be >= 1".into()));
        }
        let mut subsets = vec![Vec::new(); patterns];
        for (i, &k) in assignment.iter().enumerate() {
            let k = k as usize;
            if k >= patterns {
                return Err(SimError::InvalidArgument(format!(
                    "assignment value {k} out of range for {patterns} patterns"
                )));
            }
            subsets[k].push(i);
        }
        Ok(IndexPartition {
            n: assignment.len(),
            subsets,
            seed: 0,
        })
    }

    pub fn pattern_count(&self) -> usize {
        self.subsets.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn subsets(&self) -> &[Vec<usize>] {
        &self.subsets
    }

    pub fn subset(&self, i: usize) -> &[usize] {
        &self.subsets[i]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Per-index subset membership, one byte per pixel.
    pub fn assignment(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.n];
        for (k, subset) in self.subsets.iter().enumerate() {
            for &i in subset {
                out[i] = k as u8;
            }
        }
        out
    }
}

/// Assign each of the N indices independently and uniformly to one of P
/// subsets. Deterministic given the stream.
pub fn make_partition(n: usize, patterns: usize, stream: RandomStream) -> SimResult<IndexPartition> {
    if patterns < 1 {
        return Err(SimError::InvalidArgument("pattern count must be >= 1".into()));
    }
    if patterns > n {
        return Err(SimError::InvalidArgument(format!(
            "pattern count {patterns} exceeds index count {n}"
        )));
    }
    if patterns > u8::MAX as usize + 1 {
        return Err(SimError::InvalidArgument(format!(
            "pattern count {patterns} exceeds the supported maximum of 256"
        )));
    }
    let mut rng = stream.rng();
    let mut subsets = vec![Vec::new(); patterns];
    for i in 0..n {
        let k = if patterns == 1 {
            0
        } else {
            rng.random_range(0..patterns)
        };
        subsets[k].push(i);
    }
    Ok(IndexPartition {
        n,
        subsets,
        seed: stream.seed(),
    })
}

/// Square observation support of M = side^2 pixels centered in the field
/// of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CenteredWindow {
    grid: ImageGrid,
    side: usize,
    top_row: usize,
    top_col: usize,
}

impl CenteredWindow {
    /// Window of the given side length, centered on the grid.
    pub fn with_side(grid: ImageGrid, side: usize) -> SimResult<Self> {
        if side == 0 || side > grid.width() || side > grid.height() {
            return Err(SimError::InvalidArgument(format!(
                "window side {side} does not fit a {}x{} grid",
                grid.width(),
                grid.height()
            )));
        }
        Ok(CenteredWindow {
            grid,
            side,
            top_row: (grid.height() - side) / 2,
            top_col: (grid.width() - side) / 2,
        })
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Observed pixel count M = side^2.
    pub fn m(&self) -> usize {
        self.side * self.side
    }

    pub fn top_left(&self) -> (usize, usize) {
        (self.top_row, self.top_col)
    }

    /// M/N actually achieved after rounding the side length.
    pub fn achieved_ratio(&self) -> f64 {
        self.m() as f64 / self.grid.n() as f64
    }

    /// Grid indices covered by the window, in row-major window order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        let width = self.grid.width();
        (0..self.side).flat_map(move |r| {
            let base = (self.top_row + r) * width + self.top_col;
            base..base + self.side
        })
    }
}

/// Centered window covering approximately `ratio` of the field of view:
/// side = round(sqrt(ratio) * width), clamped so the square fits. The
/// achieved ratio M/N is available from the returned window; requested
/// ratios like 0.1 are generally not exactly achievable.
pub fn centered_window(grid: ImageGrid, ratio: f64) -> SimResult<CenteredWindow> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(SimError::InvalidArgument(format!(
            "ratio must lie in (0, 1], got {ratio}"
        )));
    }
    let side = (ratio.sqrt() * grid.width() as f64).round() as usize;
    let side = side.clamp(1, grid.width().min(grid.height()));
    CenteredWindow::with_side(grid, side)
}

/// Keep the listed pixels, zero the rest.
pub fn apply_mask(u: &RasterImage, indices: &[usize]) -> SimResult<RasterImage> {
    let n = u.grid().n();
    let mut out = RasterImage::zeros(u.grid());
    for &i in indices {
        if i >= n {
            return Err(SimError::InvalidArgument(format!(
                "mask index {i} out of range for {n} pixels"
            )));
        }
        out.values_mut()[i] = u.values()[i];
    }
    Ok(out)
}

/// Read the window's pixels out of the image, row-major, length M.
pub fn restrict(u: &RasterImage, window: &CenteredWindow) -> SimResult<Vec<f64>> {
    if u.grid() != window.grid() {
        return Err(SimError::InvalidArgument(
            "image grid does not match window grid".into(),
        ));
    }
    Ok(window.indices().map(|i| u.values()[i]).collect())
}

/// Adjoint of [`restrict`]: place the M values on the window, zero
/// elsewhere, so that <restrict(u), v> = <u, embed(v)> for all u, v.
pub fn embed(v: &[f64], window: &CenteredWindow) -> SimResult<RasterImage> {
    if v.len() != window.m() {
        return Err(SimError::InvalidArgument(format!(
            "expected {} window values, got {}",
            window.m(),
            v.len()
        )));
    }
    let mut out = RasterImage::zeros(window.grid());
    for (value, i) in v.iter().zip(window.indices()) {
        out.values_mut()[i] = *value;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_image(grid: ImageGrid, stream: RandomStream) -> RasterImage {
        let mut rng = stream.rng();
        let values = (0..grid.n()).map(|_| rng.random::<f64>() - 0.5).collect();
        RasterImage::from_values(grid, values).unwrap()
    }

    #[test]
    fn partition_single_subset_is_full_set() {
        let p = make_partition(16, 1, RandomStream::new(999)).unwrap();
        assert_eq!(p.subsets().len(), 1);
        assert_eq!(p.subset(0), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn partition_disjoint_and_covering() {
        let p = make_partition(16, 4, RandomStream::new(7)).unwrap();
        let mut seen = vec![false; 16];
        let mut total = 0;
        for subset in p.subsets() {
            for &i in subset {
                assert!(!seen[i], "index {i} appears in two subsets");
                seen[i] = true;
                total += 1;
            }
        }
        assert_eq!(total, 16);
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn partition_is_deterministic() {
        let a = make_partition(100, 2, RandomStream::new(3)).unwrap();
        let b = make_partition(100, 2, RandomStream::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_rejects_bad_pattern_counts() {
        assert!(make_partition(4, 0, RandomStream::new(0)).is_err());
        assert!(make_partition(4, 5, RandomStream::new(0)).is_err());
    }

    #[test]
    fn partition_assignment_round_trip() {
        let p = make_partition(50, 3, RandomStream::new(11)).unwrap();
        let rebuilt = IndexPartition::from_assignment(&p.assignment(), 3).unwrap();
        assert_eq!(p.subsets(), rebuilt.subsets());
    }

    #[test]
    fn window_full_ratio_covers_grid() {
        let grid = ImageGrid::square(128).unwrap();
        let w = centered_window(grid, 1.0).unwrap();
        assert_eq!(w.side(), 128);
        assert_eq!(w.m(), 16384);
        assert_eq!(w.top_left(), (0, 0));
    }

    #[test]
    fn window_quarter_ratio() {
        let grid = ImageGrid::square(128).unwrap();
        let w = centered_window(grid, 0.25).unwrap();
        assert_eq!(w.side(), 64);
        assert_eq!(w.m(), 4096);
        assert_eq!(w.top_left(), (32, 32));
    }

    #[test]
    fn window_tenth_ratio() {
        let grid = ImageGrid::square(128).unwrap();
        let w = centered_window(grid, 0.1).unwrap();
        assert_eq!(w.side(), 40);
        assert_eq!(w.m(), 1600);
    }

    #[test]
    fn window_rejects_bad_ratios() {
        let grid = ImageGrid::square(8).unwrap();
        assert!(centered_window(grid, 0.0).is_err());
        assert!(centered_window(grid, -0.5).is_err());
        assert!(centered_window(grid, 1.5).is_err());
    }

    #[test]
    fn mask_identity_empty_and_partial() {
        let grid = ImageGrid::new(4, 1).unwrap();
        let u = RasterImage::from_values(grid, vec![1.0, 2.0, 3.0, 4.0]).unwrap();

        let all: Vec<usize> = (0..4).collect();
        assert_eq!(apply_mask(&u, &all).unwrap(), u);

        let none = apply_mask(&u, &[]).unwrap();
        assert!(none.values().iter().all(|&v| v == 0.0));

        let some = apply_mask(&u, &[0, 2]).unwrap();
        assert_eq!(some.values(), &[1.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn mask_rejects_out_of_range() {
        let grid = ImageGrid::new(2, 2).unwrap();
        let u = RasterImage::zeros(grid);
        assert!(apply_mask(&u, &[4]).is_err());
    }

    #[test]
    fn restrict_centered_window_of_counting_image() {
        let grid = ImageGrid::square(4).unwrap();
        let u = RasterImage::from_values(grid, (0..16).map(|v| v as f64).collect()).unwrap();
        let w = CenteredWindow::with_side(grid, 2).unwrap();
        assert_eq!(restrict(&u, &w).unwrap(), vec![5.0, 6.0, 9.0, 10.0]);
    }

    #[test]
    fn restrict_full_window_is_identity() {
        let grid = ImageGrid::square(5).unwrap();
        let u = random_image(grid, RandomStream::new(1));
        let w = CenteredWindow::with_side(grid, 5).unwrap();
        assert_eq!(restrict(&u, &w).unwrap(), u.values());
    }

    #[test]
    fn restrict_rejects_grid_mismatch() {
        let u = RasterImage::zeros(ImageGrid::square(4).unwrap());
        let w = CenteredWindow::with_side(ImageGrid::square(6).unwrap(), 2).unwrap();
        assert!(restrict(&u, &w).is_err());
    }

    #[test]
    fn embed_then_restrict_is_identity() {
        let grid = ImageGrid::square(8).unwrap();
        let w = CenteredWindow::with_side(grid, 3).unwrap();
        let v: Vec<f64> = (0..9).map(|i| i as f64 * 0.7 - 2.0).collect();
        let img = embed(&v, &w).unwrap();
        assert_eq!(restrict(&img, &w).unwrap(), v);
    }

    #[test]
    fn restrict_embed_adjoint_identity() {
        let grid = ImageGrid::square(8).unwrap();
        let w = CenteredWindow::with_side(grid, 4).unwrap();
        let u = random_image(grid, RandomStream::new(5));
        let mut rng = RandomStream::new(6).rng();
        let v: Vec<f64> = (0..w.m()).map(|_| rng.random::<f64>() - 0.5).collect();

        let ru = restrict(&u, &w).unwrap();
        let lhs: f64 = ru.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs = u.dot(&embed(&v, &w).unwrap());
        let scale = lhs.abs().max(rhs.abs()).max(1e-300);
        assert!(
            ((lhs - rhs) / scale).abs() <= 1e-12,
            "adjoint identity violated: {lhs} vs {rhs}"
        );
    }

    proptest! {
        #[test]
        fn prop_partition_disjoint_cover(n in 1usize..200, p in 1usize..8, seed in 0u64..1000) {
            prop_assume!(p <= n);
            let part = make_partition(n, p, RandomStream::new(seed)).unwrap();
            let mut seen = vec![0usize; n];
            for subset in part.subsets() {
                for &i in subset {
                    seen[i] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }

        #[test]
        fn prop_mask_sum_recovers_image(n in 1usize..100, p in 1usize..6, seed in 0u64..1000) {
            prop_assume!(p <= n);
            let grid = ImageGrid::new(n, 1).unwrap();
            let u = random_image(grid, RandomStream::new(seed ^ 0xABCD));
            let part = make_partition(n, p, RandomStream::new(seed)).unwrap();
            let mut acc = RasterImage::zeros(grid);
            for subset in part.subsets() {
                acc.axpy(1.0, &apply_mask(&u, subset).unwrap());
            }
            for (a, b) in acc.values().iter().zip(u.values()) {
                prop_assert_eq!(a, b);
            }
        }
    }
}
