//! Illumination kernel synthesis.
//!
//! Kernels come from a Fourier-optics pupil model: a uniform circular
//! aperture in the frequency plane. With zero phase the inverse transform
//! gives the focused, diffraction-limited spot of a calibrated device;
//! with i.i.d. uniform random phases it gives the fully developed speckle
//! of an uncalibrated one. Intensities are vignetting-corrected (speckle)
//! and normalized to unit total energy.

use crate::error::{SimError, SimResult};
use crate::fft::{fftshift, gaussian_blur, Fft2};
use crate::grid::{ImageGrid, RasterImage};
use crate::stream::RandomStream;
use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

pub const DEFAULT_PUPIL_RADIUS: f64 = 0.15;

/// Circular pupil in the frequency plane. The radius is a fraction of the
/// Nyquist frequency (0.5 cycles/pixel), so it directly sets the
/// diffraction-limited spot size and the speckle grain size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PupilModel {
    grid: ImageGrid,
    pupil_radius: f64,
}

impl PupilModel {
    pub fn new(grid: ImageGrid, pupil_radius: f64) -> SimResult<Self> {
        if !(pupil_radius > 0.0 && pupil_radius <= 0.5) {
            return Err(SimError::InvalidArgument(format!(
                "pupil radius must lie in (0, 0.5], got {pupil_radius}"
            )));
        }
        Ok(PupilModel { grid, pupil_radius })
    }

    pub fn grid(&self) -> ImageGrid {
        self.grid
    }

    pub fn pupil_radius(&self) -> f64 {
        self.pupil_radius
    }

    /// Indices of the frequency samples inside the aperture.
    fn aperture_indices(&self) -> Vec<usize> {
        let (w, h) = (self.grid.width(), self.grid.height());
        let r2 = self.pupil_radius * self.pupil_radius;
        let mut indices = Vec::new();
        for kr in 0..h {
            // Signed frequency in cycles/pixel, in [-0.5, 0.5).
            let fr = if kr <= h / 2 { kr as f64 } else { kr as f64 - h as f64 } / h as f64;
            for kc in 0..w {
                let fc = if kc <= w / 2 { kc as f64 } else { kc as f64 - w as f64 } / w as f64;
                if fr * fr + fc * fc <= r2 {
                    indices.push(kr * w + kc);
                }
            }
        }
        indices
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Focused,
    Speckle,
}

/// An illumination pattern: non-negative, unit total energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    image: RasterImage,
    kind: KernelKind,
    seed: Option<u64>,
}

impl Kernel {
    /// Normalize a raw intensity pattern into a kernel.
    pub fn from_intensity(
        image: RasterImage,
        kind: KernelKind,
        seed: Option<u64>,
    ) -> SimResult<Self> {
        if image.values().iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(SimError::InvalidArgument(
                "kernel intensities must be finite and non-negative".into(),
            ));
        }
        let total = image.sum();
        if total <= 0.0 {
            return Err(SimError::InvalidArgument(
                "kernel has zero total energy".into(),
            ));
        }
        let mut image = image;
        image.scale_in_place(1.0 / total);
        Ok(Kernel { image, kind, seed })
    }

    /// Unit impulse at the grid center; convolving with it is the identity.
    pub fn delta(grid: ImageGrid) -> Kernel {
        let mut image = RasterImage::zeros(grid);
        let (cr, cc) = grid.center();
        image.set(cr, cc, 1.0);
        Kernel {
            image,
            kind: KernelKind::Focused,
            seed: None,
        }
    }

    pub fn image(&self) -> &RasterImage {
        &self.image
    }

    pub fn grid(&self) -> ImageGrid {
        self.image.grid()
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

/// Diffraction-limited PSF of the calibrated device: squared magnitude of
/// the zero-phase aperture transform, shifted so the peak sits at the grid
/// center.
pub fn focused_psf(pupil: &PupilModel) -> Kernel {
    let grid = pupil.grid();
    let fft = Fft2::new(grid);
    let mut field = vec![Complex::new(0.0, 0.0); grid.n()];
    for idx in pupil.aperture_indices() {
        field[idx] = Complex::new(1.0, 0.0);
    }
    fft.inverse(&mut field);
    let intensity: Vec<f64> = field.iter().map(|c| c.norm_sqr()).collect();
    let centered = fftshift(grid, &intensity);
    let image = RasterImage::from_values(grid, centered).expect("shift preserves length");
    Kernel::from_intensity(image, KernelKind::Focused, None)
        .expect("aperture intensity is non-negative with positive energy")
}

/// Fully developed speckle: the aperture carries unit-modulus random
/// phases, i.i.d. uniform on [0, 2pi). Vignetting-corrected and
/// normalized. Deterministic given the stream.
pub fn speckle_psf(pupil: &PupilModel, stream: RandomStream) -> SimResult<Kernel> {
    let grid = pupil.grid();
    let fft = Fft2::new(grid);
    let mut rng = stream.rng();
    let mut field = vec![Complex::new(0.0, 0.0); grid.n()];
    for idx in pupil.aperture_indices() {
        let phase = rng.random::<f64>() * TAU;
        field[idx] = Complex::from_polar(1.0, phase);
    }
    fft.inverse(&mut field);
    let intensity: Vec<f64> = field.iter().map(|c| c.norm_sqr()).collect();
    let image = RasterImage::from_values(grid, intensity).expect("length preserved");
    let raw = Kernel::from_intensity(image, KernelKind::Speckle, Some(stream.seed()))?;
    correct_vignetting(&raw)
}

/// Divide the pattern by a low-pass estimate of its envelope (Gaussian
/// blur with standard deviation width/4, floored at 1e-6 of its maximum),
/// then renormalize. Removes slow illumination falloff while keeping the
/// grain.
pub fn correct_vignetting(kernel: &Kernel) -> SimResult<Kernel> {
    let image = kernel.image();
    let grid = image.grid();
    let sigma = grid.width() as f64 / 4.0;
    let envelope = gaussian_blur(image, sigma);
    let env_max = envelope.values().iter().fold(0.0f64, |m, &v| m.max(v));
    if env_max <= 0.0 {
        return Err(SimError::InvalidArgument(
            "cannot correct vignetting of an all-zero kernel".into(),
        ));
    }
    let floor = env_max * 1e-6;
    let corrected: Vec<f64> = image
        .values()
        .iter()
        .zip(envelope.values())
        .map(|(&v, &e)| v / e.max(floor))
        .collect();
    let corrected = RasterImage::from_values(grid, corrected).expect("length preserved");
    Kernel::from_intensity(corrected, kernel.kind(), kernel.seed())
}
