//! Synthetic ground-truth generator.
//!
//! A tissue-like phantom: a few dozen soft-edged elliptical blobs over a
//! faint background, threaded with low-amplitude filament curves. The
//! result is piecewise smooth, non-negative and normalized to [0, 1],
//! which is the regime the TV prior targets.

use crate::grid::{ImageGrid, RasterImage};
use crate::stream::RandomStream;
use rand::Rng;
use std::f64::consts::PI;

pub fn make_phantom(grid: ImageGrid, stream: RandomStream) -> RasterImage {
    let mut rng = stream.rng();
    let (h, w) = (grid.height() as f64, grid.width() as f64);
    let mut values = vec![0.0f64; grid.n()];

    let blob_count = rng.random_range(20..=40);
    for _ in 0..blob_count {
        let cr = rng.random::<f64>() * h;
        let cc = rng.random::<f64>() * w;
        let a = (0.04 + 0.12 * rng.random::<f64>()) * w;
        let b = (0.04 + 0.12 * rng.random::<f64>()) * w;
        let theta = rng.random::<f64>() * PI;
        let amp = 0.25 + 0.75 * rng.random::<f64>();
        let softness = 0.05 + 0.15 * rng.random::<f64>();
        let (sin_t, cos_t) = theta.sin_cos();

        // Only touch pixels within a conservative bounding box.
        let reach = a.max(b) * 2.0;
        let r_lo = ((cr - reach).floor().max(0.0)) as usize;
        let r_hi = ((cr + reach).ceil().min(h - 1.0)) as usize;
        let c_lo = ((cc - reach).floor().max(0.0)) as usize;
        let c_hi = ((cc + reach).ceil().min(w - 1.0)) as usize;
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                let dr = r as f64 - cr;
                let dc = c as f64 - cc;
                let u = (dc * cos_t + dr * sin_t) / a;
                let v = (-dc * sin_t + dr * cos_t) / b;
                let d = (u * u + v * v).sqrt();
                // Soft edge: ~amp inside d < 1, rolling off over `softness`.
                let edge = 1.0 / (1.0 + ((d - 1.0) / softness).exp());
                values[r * grid.width() + c] += amp * edge;
            }
        }
    }

    let filament_count = rng.random_range(3..=6);
    for _ in 0..filament_count {
        // Quadratic Bezier with random control points.
        let p0 = (rng.random::<f64>() * h, rng.random::<f64>() * w);
        let p1 = (rng.random::<f64>() * h, rng.random::<f64>() * w);
        let p2 = (rng.random::<f64>() * h, rng.random::<f64>() * w);
        let amp = 0.05 + 0.15 * rng.random::<f64>();
        let width_px = 0.8 + 1.2 * rng.random::<f64>();
        let steps = 4 * grid.width().max(grid.height());
        let reach = (3.0 * width_px).ceil() as isize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let mt = 1.0 - t;
            let pr = mt * mt * p0.0 + 2.0 * mt * t * p1.0 + t * t * p2.0;
            let pc = mt * mt * p0.1 + 2.0 * mt * t * p1.1 + t * t * p2.1;
            let r0 = pr.round() as isize;
            let c0 = pc.round() as isize;
            for dr in -reach..=reach {
                let r = r0 + dr;
                if r < 0 || r >= grid.height() as isize {
                    continue;
                }
                for dc in -reach..=reach {
                    let c = c0 + dc;
                    if c < 0 || c >= grid.width() as isize {
                        continue;
                    }
                    let d2 = (r as f64 - pr).powi(2) + (c as f64 - pc).powi(2);
                    let splat = amp * (-d2 / (2.0 * width_px * width_px)).exp();
                    let idx = r as usize * grid.width() + c as usize;
                    // max instead of += so the dense sampling along the
                    // curve does not stack into a ridge of spikes.
                    values[idx] = values[idx].max(splat.min(amp));
                }
            }
        }
    }

    let max = values.iter().fold(0.0f64, |m, &v| m.max(v));
    if max > 0.0 {
        for v in &mut values {
            *v /= max;
        }
    }
    RasterImage::from_values(grid, values).expect("length preserved")
}
