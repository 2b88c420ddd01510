//! File formats: portable graymaps for visual output, raw little-endian
//! f64 grids for kernels, a self-describing binary container for
//! acquisition records, and the delimited result tables.

use crate::error::{SimError, SimResult};
use crate::forward::{AcquisitionModel, AcquisitionRecord, NoiseModel};
use crate::grid::{CenteredWindow, ImageGrid, IndexPartition, RasterImage};
use crate::optics::{Kernel, KernelKind};
use crate::stream::RandomStream;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

// ---------------------------------------------------------------------------
// Portable graymaps
// ---------------------------------------------------------------------------

/// Write a 16-bit binary PGM, linearly rescaling [min, max] to the full
/// sample range. A flat image comes out all zero.
pub fn write_pgm(path: &Path, image: &RasterImage) -> SimResult<()> {
    write_pgm_values(path, image.values(), image.grid().width(), image.grid().height())
}

/// Same, for a bare row-major buffer (e.g. a window raster).
pub fn write_pgm_values(path: &Path, values: &[f64], width: usize, height: usize) -> SimResult<()> {
    if values.len() != width * height {
        return Err(SimError::InvalidArgument(format!(
            "value count {} does not match {width}x{height}",
            values.len()
        )));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{width} {height}\n65535\n")?;
    for &v in values {
        let level = if span > 0.0 {
            ((v - min) / span * 65535.0).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        out.write_all(&level.to_be_bytes())?; // PGM samples are big-endian
    }
    Ok(())
}

/// Stack a window raster above a full-grid estimate on one canvas,
/// separated by a blank gap: observations on top, estimate below. Each
/// panel is rescaled independently.
pub fn write_observation_estimate_pair(
    path: &Path,
    observations: &[f64],
    window_side: usize,
    estimate: &RasterImage,
) -> SimResult<()> {
    let width = estimate.grid().width().max(window_side);
    let gap = 2;
    let height = window_side + gap + estimate.grid().height();
    let mut canvas = vec![0.0f64; width * height];

    let rescale = |vals: &[f64]| -> Vec<f64> {
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        vals.iter()
            .map(|&v| if span > 0.0 { (v - min) / span } else { 0.0 })
            .collect()
    };

    let obs = rescale(observations);
    let col0 = (width - window_side) / 2;
    for r in 0..window_side {
        for c in 0..window_side {
            canvas[r * width + col0 + c] = obs[r * window_side + c];
        }
    }
    let est = rescale(estimate.values());
    let row0 = window_side + gap;
    let ew = estimate.grid().width();
    let col0 = (width - ew) / 2;
    for r in 0..estimate.grid().height() {
        for c in 0..ew {
            canvas[(row0 + r) * width + col0 + c] = est[r * ew + c];
        }
    }
    write_pgm_values(path, &canvas, width, height)
}

/// Load a grayscale image from any format the `image` crate understands,
/// linearly rescaled from the sample-type range to [0, 1].
pub fn load_grayscale(path: &Path) -> SimResult<RasterImage> {
    let img = image::open(path)
        .map_err(|e| SimError::Format(format!("cannot read image {}: {e}", path.display())))?
        .into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let grid = ImageGrid::new(w, h)?;
    let values = img.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
    RasterImage::from_values(grid, values)
}

// ---------------------------------------------------------------------------
// Raw kernel grids
// ---------------------------------------------------------------------------

fn kind_code(kind: KernelKind) -> u32 {
    match kind {
        KernelKind::Focused => 0,
        KernelKind::Speckle => 1,
    }
}

fn kind_from_code(code: u32) -> SimResult<KernelKind> {
    match code {
        0 => Ok(KernelKind::Focused),
        1 => Ok(KernelKind::Speckle),
        other => Err(SimError::Format(format!("unknown kernel kind code {other}"))),
    }
}

/// Raw kernel grid: a 3 x u32 little-endian header (width, height, kind)
/// followed by width*height little-endian f64 samples, row-major.
pub fn write_kernel_raw(path: &Path, kernel: &Kernel) -> SimResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let grid = kernel.grid();
    out.write_all(&(grid.width() as u32).to_le_bytes())?;
    out.write_all(&(grid.height() as u32).to_le_bytes())?;
    out.write_all(&kind_code(kernel.kind()).to_le_bytes())?;
    for &v in kernel.image().values() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_kernel_raw(path: &Path) -> SimResult<Kernel> {
    let mut input = BufReader::new(File::open(path)?);
    let width = read_u32(&mut input)? as usize;
    let height = read_u32(&mut input)? as usize;
    let kind = kind_from_code(read_u32(&mut input)?)?;
    let grid = ImageGrid::new(width, height)?;
    let values = read_f64_vec(&mut input, grid.n())?;
    let image = RasterImage::from_values(grid, values)?;
    Kernel::from_intensity(image, kind, None)
}

// ---------------------------------------------------------------------------
// Acquisition record container
// ---------------------------------------------------------------------------

const RECORD_MAGIC: &[u8; 8] = b"SSCANREC";
const RECORD_VERSION: u8 = 1;

/// JSON header of the record container. Binary sections follow in the
/// order: partition assignment (u8 per pixel), kernels (P x N f64),
/// y (M f64), y_clean (M f64); all little-endian.
#[derive(Debug, Serialize, Deserialize)]
struct RecordHeader {
    width: usize,
    height: usize,
    window_side: usize,
    patterns: usize,
    kernel_kinds: Vec<KernelKind>,
    kernel_seeds: Vec<Option<u64>>,
    partition_seed: u64,
    sigma: f64,
    /// None encodes the noiseless (+infinity BSNR) sentinel, which JSON
    /// cannot carry as a number.
    bsnr_target_db: Option<f64>,
    noise_seed: u64,
}

pub fn write_record(path: &Path, record: &AcquisitionRecord) -> SimResult<()> {
    let model = &record.model;
    let grid = model.grid();
    let header = RecordHeader {
        width: grid.width(),
        height: grid.height(),
        window_side: model.window().side(),
        patterns: model.pattern_count(),
        kernel_kinds: model.kernels().iter().map(|k| k.kind()).collect(),
        kernel_seeds: model.kernels().iter().map(|k| k.seed()).collect(),
        partition_seed: model.partition().seed(),
        sigma: record.noise.sigma,
        bsnr_target_db: if record.noise.bsnr_target_db.is_finite() {
            Some(record.noise.bsnr_target_db)
        } else {
            None
        },
        noise_seed: record.noise.stream.seed(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| SimError::Format(format!("cannot encode record header: {e}")))?;

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(RECORD_MAGIC)?;
    out.write_all(&[RECORD_VERSION])?;
    out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    out.write_all(&header_bytes)?;
    out.write_all(&model.partition().assignment())?;
    for kernel in model.kernels() {
        for &v in kernel.image().values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    for &v in &record.y {
        out.write_all(&v.to_le_bytes())?;
    }
    for &v in &record.y_clean {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_record(path: &Path) -> SimResult<AcquisitionRecord> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != RECORD_MAGIC {
        return Err(SimError::Format("not an acquisition record file".into()));
    }
    let mut version = [0u8; 1];
    input.read_exact(&mut version)?;
    if version[0] != RECORD_VERSION {
        return Err(SimError::Format(format!(
            "unsupported record version {}",
            version[0]
        )));
    }
    let header_len = read_u64(&mut input)? as usize;
    let mut header_bytes = vec![0u8; header_len];
    input.read_exact(&mut header_bytes)?;
    let header: RecordHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| SimError::Format(format!("bad record header: {e}")))?;

    let grid = ImageGrid::new(header.width, header.height)?;
    if header.kernel_kinds.len() != header.patterns || header.kernel_seeds.len() != header.patterns
    {
        return Err(SimError::Format("kernel metadata length mismatch".into()));
    }

    let mut assignment = vec![0u8; grid.n()];
    input.read_exact(&mut assignment)?;
    let partition = IndexPartition::from_assignment(&assignment, header.patterns)?;

    let mut kernels = Vec::with_capacity(header.patterns);
    for i in 0..header.patterns {
        let values = read_f64_vec(&mut input, grid.n())?;
        let image = RasterImage::from_values(grid, values)?;
        kernels.push(Kernel::from_intensity(
            image,
            header.kernel_kinds[i],
            header.kernel_seeds[i],
        )?);
    }

    let window = CenteredWindow::with_side(grid, header.window_side)?;
    let m = window.m();
    let y = read_f64_vec(&mut input, m)?;
    let y_clean = read_f64_vec(&mut input, m)?;

    let model = AcquisitionModel::new(kernels, partition, window)?;
    Ok(AcquisitionRecord {
        y,
        y_clean,
        model,
        noise: NoiseModel {
            sigma: header.sigma,
            bsnr_target_db: header.bsnr_target_db.unwrap_or(f64::INFINITY),
            stream: RandomStream::new(header.noise_seed),
        },
    })
}

fn read_u32<R: Read>(r: &mut R) -> SimResult<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> SimResult<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64_vec<R: Read>(r: &mut R, count: usize) -> SimResult<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk size is 8")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::acquire;
    use crate::grid::{centered_window, make_partition};
    use crate::optics::{focused_psf, speckle_psf, PupilModel};
    use crate::stream::RandomStream;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("specklescan-io-test-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn kernel_raw_round_trip() {
        let grid = ImageGrid::square(16).unwrap();
        let pupil = PupilModel::new(grid, 0.2).unwrap();
        let kernel = focused_psf(&pupil);
        let path = temp_path("kernel.f64");
        write_kernel_raw(&path, &kernel).unwrap();
        let loaded = read_kernel_raw(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(loaded.kind(), kernel.kind());
        assert_eq!(loaded.grid(), kernel.grid());
        for (a, b) in loaded.image().values().iter().zip(kernel.image().values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn record_round_trip_preserves_everything() {
        let grid = ImageGrid::square(16).unwrap();
        let pupil = PupilModel::new(grid, 0.2).unwrap();
        let kernels = vec![
            speckle_psf(&pupil, RandomStream::new(1)).unwrap(),
            speckle_psf(&pupil, RandomStream::new(2)).unwrap(),
        ];
        let partition = make_partition(grid.n(), 2, RandomStream::new(3)).unwrap();
        let window = centered_window(grid, 0.5).unwrap();
        let model = AcquisitionModel::new(kernels, partition, window).unwrap();
        let x = crate::phantom::make_phantom(grid, RandomStream::new(4));
        let record = acquire(&x, model, 40.0, RandomStream::new(5)).unwrap();

        let path = temp_path("record.bin");
        write_record(&path, &record).unwrap();
        let loaded = read_record(&path).unwrap();
        std::fs::remove_file(&path).ok();

        assert_eq!(loaded.y, record.y);
        assert_eq!(loaded.y_clean, record.y_clean);
        assert_eq!(loaded.noise.sigma, record.noise.sigma);
        assert_eq!(loaded.noise.bsnr_target_db, record.noise.bsnr_target_db);
        assert_eq!(
            loaded.model.partition().subsets(),
            record.model.partition().subsets()
        );
        assert_eq!(loaded.model.window(), record.model.window());
        for (a, b) in loaded.model.kernels().iter().zip(record.model.kernels()) {
            assert_eq!(a.kind(), b.kind());
            assert_eq!(a.seed(), b.seed());
            for (x, y) in a.image().values().iter().zip(b.image().values()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn record_round_trip_noiseless_sentinel() {
        let grid = ImageGrid::square(8).unwrap();
        let pupil = PupilModel::new(grid, 0.2).unwrap();
        let kernels = vec![focused_psf(&pupil)];
        let partition = make_partition(grid.n(), 1, RandomStream::new(0)).unwrap();
        let window = centered_window(grid, 1.0).unwrap();
        let model = AcquisitionModel::new(kernels, partition, window).unwrap();
        let x = crate::phantom::make_phantom(grid, RandomStream::new(9));
        let record = acquire(&x, model, f64::INFINITY, RandomStream::new(10)).unwrap();

        let path = temp_path("record-clean.bin");
        write_record(&path, &record).unwrap();
        let loaded = read_record(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(loaded.noise.bsnr_target_db, f64::INFINITY);
        assert_eq!(loaded.y, loaded.y_clean);
    }

    #[test]
    fn pgm_has_correct_header_and_size() {
        let grid = ImageGrid::new(6, 4).unwrap();
        let img = crate::phantom::make_phantom(grid, RandomStream::new(2));
        let path = temp_path("img.pgm");
        write_pgm(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert!(bytes.starts_with(b"P5\n6 4\n65535\n"));
        let header_len = b"P5\n6 4\n65535\n".len();
        assert_eq!(bytes.len(), header_len + 6 * 4 * 2);
    }

    #[test]
    fn pgm_loads_back_via_image_crate() {
        let grid = ImageGrid::square(8).unwrap();
        let img = crate::phantom::make_phantom(grid, RandomStream::new(3));
        let path = temp_path("roundtrip.pgm");
        write_pgm(&path, &img).unwrap();
        let loaded = load_grayscale(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(loaded.grid(), grid);
        // The writer rescales [min, max] onto the full 16-bit range, so
        // compare against the same rescaling, up to quantization.
        let min = img.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let max = img.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (a, b) in loaded.values().iter().zip(img.values()) {
            let expected = (b - min) / (max - min);
            assert!((a - expected).abs() < 2e-4, "{a} vs {expected}");
        }
    }
}
