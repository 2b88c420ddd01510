// Scratch probe for solver tuning; not part of the test suite.

use specklescan_core::experiment::{run_cell, Mode};
use specklescan_core::metrics::snr;
use specklescan_core::solver::{
    admm_reconstruct_warm, materialize_rho_grid, select_rho, RhoGrid, SolverConfig,
};
use specklescan_core::*;
use std::time::Instant;

fn build_record(
    side: usize,
    patterns: usize,
    ratio: f64,
    bsnr: f64,
    seed: u64,
    mode_focused: bool,
) -> (RasterImage, AcquisitionRecord) {
    let grid = ImageGrid::square(side).unwrap();
    let truth = make_phantom(grid, RandomStream::new(seed).derive("phantom"));
    let pupil = PupilModel::new(grid, DEFAULT_PUPIL_RADIUS).unwrap();
    let stream = RandomStream::new(seed);
    let kernels: Vec<Kernel> = if mode_focused {
        vec![focused_psf(&pupil)]
    } else {
        (0..patterns)
            .map(|i| speckle_psf(&pupil, stream.derive_index("kernel", i as u64)).unwrap())
            .collect()
    };
    let p = kernels.len();
    let partition = make_partition(grid.n(), p, stream.derive("partition")).unwrap();
    let window = centered_window(grid, ratio).unwrap();
    let model = AcquisitionModel::new(kernels, partition, window).unwrap();
    let record = acquire(&truth, model, bsnr, stream.derive("noise")).unwrap();
    (truth, record)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let what = args.get(1).map(|s| s.as_str()).unwrap_or("rho32");

    match what {
        // rho selection quality on 32x32: SNR of selected rho vs best grid point
        "rho32" => {
            for seed in [1u64, 2, 3] {
                let (truth, record) = build_record(32, 1, 0.5, 40.0, seed, false);
                let config = SolverConfig::default();
                let grid_values = materialize_rho_grid(&record, &config).unwrap();
                let mut prev: Option<RasterImage> = None;
                println!("seed {seed}:");
                let mut snrs = Vec::new();
                for &rho in &grid_values {
                    let (xt, state) =
                        admm_reconstruct_warm(&record, rho, &config, prev.as_ref()).unwrap();
                    let ax = record.model.forward(&xt).unwrap();
                    let residual: Vec<f64> =
                        ax.iter().zip(&record.y).map(|(a, y)| a - y).collect();
                    let score =
                        whiteness_score(&residual, record.model.window().side()).unwrap();
                    let s = snr(&xt, &truth).unwrap();
                    println!(
                        "  rho={rho:10.4e} snr={s:7.3} score={score:10.5} iters={} conv={}",
                        state.iterations(),
                        state.converged
                    );
                    snrs.push((rho, s, score));
                    prev = Some(xt);
                }
                let sel = select_rho(&record, &config).unwrap();
                let sel_snr = snrs.iter().find(|(r, _, _)| *r == sel.rho).unwrap().1;
                let best = snrs.iter().fold(f64::NEG_INFINITY, |m, (_, s, _)| m.max(*s));
                println!(
                    "  selected rho={:.4e} snr={sel_snr:.3} best={best:.3} gap={:.3}",
                    sel.rho,
                    best - sel_snr
                );
            }
        }
        // one full 128x128 cell through run_cell, timed
        "cell" => {
            let mode_s = args.get(2).map(|s| s.as_str()).unwrap_or("speckle:1");
            let ratio: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.5);
            let mode: Mode = mode_s.parse().unwrap();
            let grid = ImageGrid::square(128).unwrap();
            let truth = make_phantom(grid, RandomStream::new(99).derive("phantom"));
            let config = SolverConfig::default();
            let t0 = Instant::now();
            let cell = run_cell(
                &truth,
                mode,
                ratio,
                40.0,
                DEFAULT_PUPIL_RADIUS,
                RandomStream::new(1234),
                &config,
                true,
                0,
            )
            .unwrap();
            println!(
                "mode={mode_s} ratio={ratio}: snr_full={:.3} snr_win={:.3} bsnr={:.3} rho={:.3e} iters={} wall={:.1}s (total {:.1}s)",
                cell.row.snr_full_db,
                cell.row.snr_window_db,
                cell.row.bsnr_db,
                cell.row.rho,
                cell.row.admm_iters,
                cell.row.wall_time_s,
                t0.elapsed().as_secs_f64()
            );
        }
        // sweep both modes at a few ratios, small trials, to look at trends
        "trend" => {
            let trials: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3);
            let config = SolverConfig::default();
            let grid = ImageGrid::square(128).unwrap();
            let truth = make_phantom(grid, RandomStream::new(7).derive("phantom"));
            for mode in ["focused", "speckle:1", "speckle:4"] {
                let m: Mode = mode.parse().unwrap();
                for ratio in [0.1f64, 0.3, 0.5, 0.8, 1.0] {
                    let mut acc = 0.0;
                    let t0 = Instant::now();
                    for trial in 0..trials {
                        let stream = RandomStream::new(5000)
                            .derive(mode)
                            .derive_index("ratio", ratio.to_bits())
                            .derive_index("trial", trial as u64);
                        let cell = run_cell(
                            &truth,
                            m,
                            ratio,
                            40.0,
                            DEFAULT_PUPIL_RADIUS,
                            stream,
                            &config,
                            false,
                            trial,
                        )
                        .unwrap();
                        acc += cell.row.snr_full_db;
                    }
                    println!(
                        "{mode:10} ratio={ratio:4.2} mean_snr={:7.3} ({:.1}s/{trials} trials)",
                        acc / trials as f64,
                        t0.elapsed().as_secs_f64()
                    );
                }
            }
        }
        // scan the ADMM penalty at a fixed rho on a speckle instance
        "mu" => {
            let side: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(128);
            let iters: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(200);
            let (truth, record) = build_record(side, 1, 1.0, 40.0, 1, false);
            println!("tr(AtA)/N = {:.4e}", record.model.operator_scale());
            let scale = record.model.adjoint(&record.y).unwrap().max_abs();
            let rho = 1e-3 * scale;
            println!("rho = {rho:.4e} (scale {scale:.4e})");
            for mu in [1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5] {
                let config = SolverConfig {
                    admm_penalty: mu,
                    max_outer_iters: iters,
                    convergence_tol: 1e-9, // don't stop early
                    ..SolverConfig::default()
                };
                let t0 = Instant::now();
                let (xt, state) = admm_reconstruct_warm(&record, rho, &config, None).unwrap();
                let s = snr(&xt, &truth).unwrap();
                let obj = state.history.last().unwrap().objective;
                println!(
                    "mu={mu:8.1e}: snr={s:7.3} obj={obj:.6e} iters={} {:.1}s",
                    state.iterations(),
                    t0.elapsed().as_secs_f64()
                );
            }
        }
        // long run at one mu/rho to find the attainable SNR plateau
        "long" => {
            let side: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(128);
            let mu: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.01);
            let rho_factor: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
            let iters: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1000);
            let (truth, record) = build_record(side, 1, 1.0, 40.0, 1, false);
            let scale = record.model.adjoint(&record.y).unwrap().max_abs();
            let rho = rho_factor * scale;
            let config = SolverConfig {
                admm_penalty: mu,
                max_outer_iters: iters,
                convergence_tol: 1e-9,
                ..SolverConfig::default()
            };
            let t0 = Instant::now();
            let (xt, state) = admm_reconstruct_warm(&record, rho, &config, None).unwrap();
            let s = snr(&xt, &truth).unwrap();
            for (i, st) in state.history.iter().enumerate() {
                if i % (iters / 20).max(1) == 0 || i + 1 == state.history.len() {
                    println!(
                        "iter {i:5}: obj={:.6e} primal={:.3e} dual={:.3e}",
                        st.objective, st.primal_residual, st.dual_residual
                    );
                }
            }
            println!(
                "mu={mu:.1e} rho={rho:.4e}: final snr={s:.3} after {} iters ({:.1}s)",
                state.iterations(),
                t0.elapsed().as_secs_f64()
            );
        }
        other => eprintln!("unknown probe '{other}'"),
    }
}
