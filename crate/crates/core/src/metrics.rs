//! Reconstruction quality metrics.

use crate::error::{SimError, SimResult};
use crate::forward::AcquisitionRecord;
use crate::grid::{restrict, RasterImage};

/// SNR between an estimate and the truth, in decibels:
/// 20 log10(||estimate|| / ||truth - estimate||). Exact agreement maps to
/// +infinity. Note the normalization by the estimate's norm, not the
/// truth's.
pub fn snr(estimate: &RasterImage, truth: &RasterImage) -> SimResult<f64> {
    if estimate.grid() != truth.grid() {
        return Err(SimError::InvalidArgument(
            "estimate and truth grids differ".into(),
        ));
    }
    Ok(snr_slices(estimate.values(), truth.values()))
}

/// Same formula on raw sample vectors (e.g. window-restricted pixels).
pub fn snr_slices(estimate: &[f64], truth: &[f64]) -> f64 {
    debug_assert_eq!(estimate.len(), truth.len());
    let num: f64 = estimate.iter().map(|v| v * v).sum::<f64>().sqrt();
    let den: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (t - e) * (t - e))
        .sum::<f64>()
        .sqrt();
    if den == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (num / den).log10()
    }
}

/// BSNR actually realized by a record's noise draw:
/// 20 log10(||y_clean|| / ||y - y_clean||); +infinity when noiseless.
pub fn realized_bsnr(record: &AcquisitionRecord) -> f64 {
    snr_slices(&record.y_clean, &record.y)
}

/// Full-FOV SNR, window-restricted SNR, and the realized BSNR of the
/// acquisition the estimate came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrReport {
    pub full_fov_db: f64,
    pub window_db: f64,
    pub realized_bsnr_db: f64,
}

pub fn snr_report(
    estimate: &RasterImage,
    truth: &RasterImage,
    record: &AcquisitionRecord,
) -> SimResult<SnrReport> {
    let window = record.model.window();
    let est_w = restrict(estimate, window)?;
    let tru_w = restrict(truth, window)?;
    Ok(SnrReport {
        full_fov_db: snr(estimate, truth)?,
        window_db: snr_slices(&est_w, &tru_w),
        realized_bsnr_db: realized_bsnr(record),
    })
}
