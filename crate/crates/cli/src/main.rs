use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use specklescan_core::experiment::{
    aggregate, read_results_table, run_sweep, write_aggregate_table, ExperimentConfig, Mode,
};
use specklescan_core::io;
use specklescan_core::solver::{
    admm_reconstruct, materialize_rho_grid, select_rho, RhoGrid, SolverConfig,
};
use specklescan_core::{
    acquire, centered_window, focused_psf, make_partition, make_phantom, realized_bsnr,
    speckle_psf, AcquisitionModel, ImageGrid, PupilModel, RandomStream, DEFAULT_PUPIL_RADIUS,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "specklescan",
    about = "Simulate raster-scan and compressive speckle acquisitions and reconstruct them"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic ground-truth phantom.
    Phantom(PhantomArgs),
    /// Simulate a single acquisition and store it as a record file.
    Acquire(AcquireArgs),
    /// Reconstruct an image from a stored acquisition record.
    Reconstruct(ReconstructArgs),
    /// Run the full compression-ratio sweep.
    Sweep(SweepArgs),
    /// Aggregate an existing results table into plot-ready columns.
    Report(ReportArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Grid side length in pixels.
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output graymap path.
    #[arg(long)]
    out: PathBuf,
    /// Also save the raw f64 values here (3 x u32 header + row-major f64).
    #[arg(long)]
    raw: Option<PathBuf>,
}

#[derive(Args)]
struct AcquireArgs {
    /// Ground-truth image file; synthetic phantom when omitted.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Grid side for the phantom (ignored when --image is given).
    #[arg(long, default_value_t = 128)]
    grid: usize,
    /// Acquisition mode: focused or speckle:P.
    #[arg(long, default_value = "speckle:1")]
    mode: String,
    /// Observed fraction M/N of the field of view.
    #[arg(long, default_value_t = 1.0)]
    ratio: f64,
    /// Target blurred SNR in dB; "inf" for a noiseless acquisition.
    #[arg(long, default_value_t = 40.0)]
    bsnr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_PUPIL_RADIUS)]
    pupil_radius: f64,
    /// Record file to write.
    #[arg(long)]
    out: PathBuf,
    /// Optionally save the observation window as a graymap.
    #[arg(long)]
    save_y: Option<PathBuf>,
    /// Optionally save the ground truth as a graymap.
    #[arg(long)]
    save_x: Option<PathBuf>,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Acquisition record produced by `acquire`.
    #[arg(long)]
    record: PathBuf,
    /// Reconstructed image graymap to write.
    #[arg(long)]
    out: PathBuf,
    /// Fix rho instead of selecting it by residual whiteness.
    #[arg(long)]
    rho: Option<f64>,
    /// Number of rho grid points for the whiteness search.
    #[arg(long, default_value_t = 12)]
    rho_points: usize,
    /// Append per-iteration solver diagnostics to this file.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Also write a combined observations-above-estimate graymap.
    #[arg(long)]
    save_pair: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML configuration file; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated list, e.g. 0.1,0.2,0.5.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    bsnr: Option<f64>,
    /// Comma-separated list, e.g. focused,speckle:1,speckle:4.
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<String>>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    grid: Option<usize>,
    /// Output directory for tables and images.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the per-cell example graymaps.
    #[arg(long)]
    no_images: bool,
    /// Write zero wall-clock times so tables are byte-identical across runs.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Results table produced by `sweep`.
    #[arg(long)]
    results: PathBuf,
    /// Aggregate table to write.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Phantom(args) => phantom(args),
        Command::Acquire(args) => acquire_cmd(args),
        Command::Reconstruct(args) => reconstruct_cmd(args),
        Command::Sweep(args) => sweep_cmd(args),
        Command::Report(args) => report_cmd(args),
    }
}

fn phantom(args: PhantomArgs) -> Result<()> {
    let grid = ImageGrid::square(args.size)?;
    let image = make_phantom(grid, RandomStream::new(args.seed).derive("phantom"));
    io::write_pgm(&args.out, &image)?;
    println!("wrote {}", args.out.display());
    if let Some(raw) = args.raw {
        // Reuse the kernel raw layout for the phantom grid.
        let as_kernel = specklescan_core::Kernel::from_intensity(
            image.clone(),
            specklescan_core::KernelKind::Focused,
            None,
        )?;
        io::write_kernel_raw(&raw, &as_kernel)?;
        println!("wrote {}", raw.display());
    }
    Ok(())
}

fn acquire_cmd(args: AcquireArgs) -> Result<()> {
    let mode: Mode = args.mode.parse()?;
    let truth = match &args.image {
        Some(path) => io::load_grayscale(path)
            .with_context(|| format!("loading {}", path.display()))?,
        None => make_phantom(
            ImageGrid::square(args.grid)?,
            RandomStream::new(args.seed).derive("phantom"),
        ),
    };
    let grid = truth.grid();
    if !grid.is_square() {
        bail!("ground-truth image must be square");
    }
    let stream = RandomStream::new(args.seed);
    let pupil = PupilModel::new(grid, args.pupil_radius)?;
    let patterns = mode.patterns();
    let kernels = match mode {
        Mode::Focused => vec![focused_psf(&pupil)],
        Mode::Speckle { patterns } => (0..patterns)
            .map(|i| speckle_psf(&pupil, stream.derive_index("kernel", i as u64)))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let partition = make_partition(grid.n(), patterns, stream.derive("partition"))?;
    let window = centered_window(grid, args.ratio)?;
    let model = AcquisitionModel::new(kernels, partition, window)?;
    let record = acquire(&truth, model, args.bsnr, stream.derive("noise"))?;

    io::write_record(&args.out, &record)?;
    println!(
        "wrote {} (M={}, achieved M/N={:.4}, realized BSNR={:.2} dB)",
        args.out.display(),
        record.model.window().m(),
        record.model.window().achieved_ratio(),
        realized_bsnr(&record)
    );
    if let Some(path) = args.save_y {
        io::write_pgm_values(&path, &record.y, window.side(), window.side())?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = args.save_x {
        io::write_pgm(&path, &truth)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn reconstruct_cmd(args: ReconstructArgs) -> Result<()> {
    let record = io::read_record(&args.record)
        .with_context(|| format!("loading {}", args.record.display()))?;
    let config = SolverConfig {
        rho_grid: RhoGrid::ScaledGeometric {
            points: args.rho_points,
            min_factor: 1e-4,
            max_factor: 1.0,
        },
        diagnostics_path: args.diagnostics,
        ..SolverConfig::default()
    };

    let (rho, reconstruction) = match args.rho {
        Some(rho) => {
            let (x, state) = admm_reconstruct(&record, rho, &config)?;
            println!(
                "fixed rho={rho:.6e}: {} iterations, converged={}",
                state.iterations(),
                state.converged
            );
            (rho, x)
        }
        None => {
            let grid_values = materialize_rho_grid(&record, &config)?;
            let selection = select_rho(&record, &config)?;
            println!(
                "whiteness-selected rho={:.6e} from {} candidates ({} ADMM iterations total)",
                selection.rho,
                grid_values.len(),
                selection.total_iterations
            );
            for (rho, score) in &selection.scores {
                println!("  rho={rho:.6e}  whiteness={score:.6}");
            }
            (selection.rho, selection.reconstruction)
        }
    };

    io::write_pgm(&args.out, &reconstruction)?;
    println!("wrote {} (rho={rho:.6e})", args.out.display());
    if let Some(path) = args.save_pair {
        io::write_observation_estimate_pair(
            &path,
            &record.y,
            record.model.window().side(),
            &reconstruction,
        )?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn sweep_cmd(args: SweepArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<ExperimentConfig>(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    if let Some(ratios) = args.ratios {
        config.ratios = ratios;
    }
    if let Some(bsnr) = args.bsnr {
        config.bsnr_db = bsnr;
    }
    if let Some(modes) = args.modes {
        config.modes = modes
            .iter()
            .map(|m| m.parse())
            .collect::<Result<Vec<Mode>, _>>()?;
    }
    if let Some(image) = args.image {
        config.image = Some(image);
    }
    if let Some(grid) = args.grid {
        config.grid_side = grid;
    }
    if let Some(out) = args.out {
        config.out_dir = Some(out);
    }
    if args.no_images {
        config.save_images = false;
    }
    if args.no_timing {
        config.record_timing = false;
    }
    if config.out_dir.is_none() {
        config.out_dir = Some(PathBuf::from("sweep-out"));
    }

    let total = config.ratios.len() * config.modes.len() * config.trials;
    eprintln!(
        "sweep: {} modes x {} ratios x {} trials = {total} cells on a {}x{} grid",
        config.modes.len(),
        config.ratios.len(),
        config.trials,
        config.grid_side,
        config.grid_side
    );
    let started = std::time::Instant::now();
    let output = run_sweep(&config)?;
    eprintln!(
        "sweep finished in {:.1} s: {} rows, {} failures",
        started.elapsed().as_secs_f64(),
        output.rows.len(),
        output.failures.len()
    );
    for failure in &output.failures {
        eprintln!("  failure: {failure}");
    }
    if let Some(dir) = &config.out_dir {
        println!("results in {}", dir.display());
    }
    Ok(())
}

fn report_cmd(args: ReportArgs) -> Result<()> {
    let rows = read_results_table(&args.results)
        .with_context(|| format!("reading {}", args.results.display()))?;
    let aggs = aggregate(&rows);
    write_aggregate_table(&args.out, &aggs)?;
    println!("wrote {} ({} cells)", args.out.display(), aggs.len());
    Ok(())
}
