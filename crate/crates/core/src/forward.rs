//! The acquisition operator and its exact adjoint.
//!
//! Observations are the centered-window restriction of a sum of masked
//! circular convolutions, one per illumination pattern:
//!
//!     y = R ( sum_i S_i (h_i (*) x) ) + n
//!
//! Convolutions are circular (periodic boundary) and computed in the
//! Fourier domain, with each kernel's center pixel acting as the
//! zero-shift tap. The periodic choice keeps the operator and its adjoint
//! exactly consistent, which the solver's conjugate-gradient step needs.

use crate::error::{SimError, SimResult};
use crate::fft::{ifftshift, Fft2};
use crate::grid::{embed, restrict, CenteredWindow, ImageGrid, IndexPartition, RasterImage};
use crate::optics::Kernel;
use crate::stream::RandomStream;
use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Circular convolution of an image with a centered kernel.
pub fn convolve(x: &RasterImage, h: &Kernel) -> SimResult<RasterImage> {
    if x.grid() != h.grid() {
        return Err(SimError::InvalidArgument(
            "image and kernel grids differ".into(),
        ));
    }
    let fft = Fft2::new(x.grid());
    let spectrum = kernel_spectrum(&fft, h);
    Ok(convolve_with_spectrum(&fft, x, &spectrum, false))
}

/// Circular correlation: convolution with the spatially reversed kernel,
/// i.e. the adjoint of [`convolve`] with the same kernel.
pub fn correlate(x: &RasterImage, h: &Kernel) -> SimResult<RasterImage> {
    if x.grid() != h.grid() {
        return Err(SimError::InvalidArgument(
            "image and kernel grids differ".into(),
        ));
    }
    let fft = Fft2::new(x.grid());
    let spectrum = kernel_spectrum(&fft, h);
    Ok(convolve_with_spectrum(&fft, x, &spectrum, true))
}

fn kernel_spectrum(fft: &Fft2, h: &Kernel) -> Vec<Complex<f64>> {
    fft.forward_real(&ifftshift(h.grid(), h.image().values()))
}

fn convolve_with_spectrum(
    fft: &Fft2,
    x: &RasterImage,
    spectrum: &[Complex<f64>],
    conjugate: bool,
) -> RasterImage {
    let mut buf = fft.forward_real(x.values());
    if conjugate {
        for (b, s) in buf.iter_mut().zip(spectrum) {
            *b *= s.conj();
        }
    } else {
        for (b, s) in buf.iter_mut().zip(spectrum) {
            *b *= s;
        }
    }
    let out = fft.inverse_real(&buf);
    RasterImage::from_values(x.grid(), out).expect("length preserved")
}

/// The composite operator R sum_i S_i (h_i (*) .) with precomputed kernel
/// spectra and pattern masks.
#[derive(Debug, Clone)]
pub struct AcquisitionModel {
    grid: ImageGrid,
    kernels: Vec<Kernel>,
    partition: IndexPartition,
    window: CenteredWindow,
    fft: Fft2,
    spectra: Vec<Vec<Complex<f64>>>,
    masks: Vec<Vec<f64>>,
    norm_sq: f64,
}

impl AcquisitionModel {
    pub fn new(
        kernels: Vec<Kernel>,
        partition: IndexPartition,
        window: CenteredWindow,
    ) -> SimResult<Self> {
        if kernels.is_empty() {
            return Err(SimError::InvalidArgument("at least one kernel required".into()));
        }
        let grid = kernels[0].grid();
        if kernels.iter().any(|k| k.grid() != grid) {
            return Err(SimError::InvalidArgument(
                "all kernels must share one grid".into(),
            ));
        }
        if window.grid() != grid {
            return Err(SimError::InvalidArgument(
                "window grid does not match kernel grid".into(),
            ));
        }
        if partition.n() != grid.n() {
            return Err(SimError::InvalidArgument(format!(
                "partition covers {} indices but the grid has {} pixels",
                partition.n(),
                grid.n()
            )));
        }
        if partition.pattern_count() != kernels.len() {
            return Err(SimError::InvalidArgument(format!(
                "kernel count {} does not match pattern count {}",
                kernels.len(),
                partition.pattern_count()
            )));
        }
        let fft = Fft2::new(grid);
        let spectra = kernels.iter().map(|k| kernel_spectrum(&fft, k)).collect();
        let masks = partition
            .subsets()
            .iter()
            .map(|subset| {
                let mut mask = vec![0.0; grid.n()];
                for &i in subset {
                    mask[i] = 1.0;
                }
                mask
            })
            .collect();
        // Mean eigenvalue of A^T A, exact: the cross terms vanish because
        // the masks are disjoint, leaving
        // tr(A^T A) = sum_i |Omega_i within window| * ||h_i||^2.
        let window_set: std::collections::HashSet<usize> = window.indices().collect();
        let mut trace = 0.0;
        for (kernel, subset) in kernels.iter().zip(partition.subsets()) {
            let overlap = subset.iter().filter(|i| window_set.contains(i)).count();
            let energy: f64 = kernel.image().values().iter().map(|v| v * v).sum();
            trace += overlap as f64 * energy;
        }
        let scale = (trace / grid.n() as f64).max(f64::MIN_POSITIVE);

        Ok(AcquisitionModel {
            grid,
            kernels,
            partition,
            window,
            fft,
            spectra,
            masks,
            norm_sq: scale,
        })
    }

    /// Mean eigenvalue of A^T A (trace / N). Quantifies the data-term
    /// curvature, which for speckle kernels is orders of magnitude below
    /// a focused kernel's; the solver scales its penalty by it.
    pub fn operator_scale(&self) -> f64 {
        self.norm_sq
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn partition(&self) -> &IndexPartition {
        &self.partition
    }

    pub fn window(&self) -> &CenteredWindow {
        &self.window
    }

    pub fn pattern_count(&self) -> usize {
        self.kernels.len()
    }

    /// Noiseless observations: restrict(sum_i mask_i(h_i (*) x)).
    pub fn forward(&self, x: &RasterImage) -> SimResult<Vec<f64>> {
        if x.grid() != self.grid {
            return Err(SimError::InvalidArgument(
                "image grid does not match model grid".into(),
            ));
        }
        let x_spec = self.fft.forward_real(x.values());
        let mut acc = vec![0.0f64; self.grid.n()];
        let mut buf = vec![Complex::new(0.0, 0.0); self.grid.n()];
        for (spectrum, mask) in self.spectra.iter().zip(&self.masks) {
            for ((b, xs), s) in buf.iter_mut().zip(&x_spec).zip(spectrum) {
                *b = xs * s;
            }
            self.fft.inverse(&mut buf);
            for ((a, m), b) in acc.iter_mut().zip(mask).zip(&buf) {
                *a += m * b.re;
            }
        }
        let acc = RasterImage::from_values(self.grid, acc).expect("length preserved");
        restrict(&acc, &self.window)
    }

    /// Exact adjoint of [`Self::forward`]:
    /// sum_i correlate(mask_i(embed(v)), h_i).
    pub fn adjoint(&self, v: &[f64]) -> SimResult<RasterImage> {
        if v.len() != self.window.m() {
            return Err(SimError::InvalidArgument(format!(
                "expected {} observation values, got {}",
                self.window.m(),
                v.len()
            )));
        }
        let embedded = embed(v, &self.window)?;
        let mut acc_spec = vec![Complex::new(0.0, 0.0); self.grid.n()];
        let mut buf = vec![Complex::new(0.0, 0.0); self.grid.n()];
        for (spectrum, mask) in self.spectra.iter().zip(&self.masks) {
            for ((b, e), m) in buf.iter_mut().zip(embedded.values()).zip(mask) {
                *b = Complex::new(e * m, 0.0);
            }
            self.fft.forward(&mut buf);
            for ((a, b), s) in acc_spec.iter_mut().zip(&buf).zip(spectrum) {
                *a += b * s.conj();
            }
        }
        let out = self.fft.inverse_real(&acc_spec);
        Ok(RasterImage::from_values(self.grid, out).expect("length preserved"))
    }

    /// adjoint(forward(x)), the Gram operator used in the solver's
    /// quadratic step.
    pub fn normal_apply(&self, x: &RasterImage) -> SimResult<RasterImage> {
        let y = self.forward(x)?;
        self.adjoint(&y)
    }
}

/// Gaussian observation noise calibrated to a target blurred SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
    pub bsnr_target_db: f64,
    pub stream: RandomStream,
}

/// Choose sigma so the expected realized BSNR equals the target:
/// sigma = ||y_clean|| / (sqrt(M) * 10^(bsnr/20)). A target of +infinity
/// is the noiseless sentinel (sigma = 0).
pub fn calibrate_noise(
    y_clean: &[f64],
    bsnr_db: f64,
    stream: RandomStream,
) -> SimResult<NoiseModel> {
    let norm: f64 = y_clean.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(SimError::InvalidArgument(
            "cannot calibrate noise against zero observations".into(),
        ));
    }
    let sigma = if bsnr_db.is_infinite() && bsnr_db > 0.0 {
        0.0
    } else {
        norm / ((y_clean.len() as f64).sqrt() * 10f64.powf(bsnr_db / 20.0))
    };
    Ok(NoiseModel {
        sigma,
        bsnr_target_db: bsnr_db,
        stream,
    })
}

/// One simulated acquisition: the observation vector plus everything that
/// produced it. The noiseless observation is retained for metrics.
#[derive(Debug, Clone)]
pub struct AcquisitionRecord {
    pub y: Vec<f64>,
    pub y_clean: Vec<f64>,
    pub model: AcquisitionModel,
    pub noise: NoiseModel,
}

/// Simulate an acquisition at the given BSNR. Noise is drawn i.i.d.
/// Gaussian directly on the M window samples (the restriction of an
/// i.i.d. field is itself i.i.d.).
pub fn acquire(
    x: &RasterImage,
    model: AcquisitionModel,
    bsnr_db: f64,
    stream: RandomStream,
) -> SimResult<AcquisitionRecord> {
    let y_clean = model.forward(x)?;
    let noise = calibrate_noise(&y_clean, bsnr_db, stream)?;
    let y = if noise.sigma == 0.0 {
        y_clean.clone()
    } else {
        let normal = Normal::new(0.0, noise.sigma).map_err(|e| {
            SimError::InvalidArgument(format!("invalid noise parameters: {e}"))
        })?;
        let mut rng = stream.rng();
        y_clean.iter().map(|v| v + normal.sample(&mut rng)).collect()
    };
    Ok(AcquisitionRecord {
        y,
        y_clean,
        model,
        noise,
    })
}
