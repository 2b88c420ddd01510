//! TV-regularized reconstruction.
//!
//! Solves
//!
//!     min_x ||A x - y||_2^2 + rho * TV(x)
//!
//! with ADMM on the split z = grad(x). The quadratic x-update solves
//! (A^T A + mu D^T D) x = A^T y + mu D^T (z - d) by conjugate gradients,
//! because the masks and the restriction inside A destroy Fourier
//! diagonality. The regularization weight rho is picked from a geometric
//! grid by maximizing the whiteness of the data residual.

use crate::error::{SimError, SimResult};
use crate::forward::AcquisitionRecord;
use crate::grid::RasterImage;
use crate::stream::RandomStream;
use crate::tv::{divergence, gradient, group_soft_threshold, tv_norm, GradientField};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;

/// Candidate regularization weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RhoGrid {
    /// Strictly increasing explicit values.
    Explicit(Vec<f64>),
    /// Geometric grid scaled by the data: from min_factor * ||A^T y||_inf
    /// to max_factor * ||A^T y||_inf.
    ScaledGeometric {
        points: usize,
        min_factor: f64,
        max_factor: f64,
    },
}

impl Default for RhoGrid {
    fn default() -> Self {
        RhoGrid::ScaledGeometric {
            points: 12,
            min_factor: 1e-4,
            max_factor: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub rho_grid: RhoGrid,
    /// ADMM penalty mu on the splitting constraint, as a multiple of the
    /// operator norm ||A||^2. Speckle kernels make ||A||^2 orders of
    /// magnitude smaller than focused ones; an absolute penalty would
    /// drown their data term and stall the iteration. The minimizer does
    /// not depend on this value, only the convergence path does.
    pub admm_penalty: f64,
    pub max_outer_iters: usize,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// Outer stop: primal and dual residual norms below
    /// convergence_tol * sqrt(N).
    pub convergence_tol: f64,
    /// Warm-start each rho-grid run from the previous solution. Disable to
    /// make the grid points independent (e.g. for a parallel sweep).
    pub warm_start: bool,
    /// When set, per-iteration diagnostics are appended here as delimited
    /// text: iteration, objective, primal residual, dual residual.
    pub diagnostics_path: Option<PathBuf>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rho_grid: RhoGrid::default(),
            admm_penalty: 1.0,
            max_outer_iters: 300,
            cg_tol: 1e-6,
            cg_max_iters: 100,
            convergence_tol: 1e-4,
            warm_start: true,
            diagnostics_path: None,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> SimResult<()> {
        if self.admm_penalty <= 0.0
            || self.cg_tol <= 0.0
            || self.convergence_tol <= 0.0
        {
            return Err(SimError::InvalidArgument(
                "solver penalties and tolerances must be positive".into(),
            ));
        }
        match &self.rho_grid {
            RhoGrid::Explicit(values) => {
                if values.is_empty() {
                    return Err(SimError::InvalidArgument("rho grid is empty".into()));
                }
                if values.windows(2).any(|w| w[1] <= w[0]) || values[0] <= 0.0 {
                    return Err(SimError::InvalidArgument(
                        "explicit rho grid must be positive and strictly increasing".into(),
                    ));
                }
            }
            RhoGrid::ScaledGeometric {
                points,
                min_factor,
                max_factor,
            } => {
                if *points == 0 || *min_factor <= 0.0 || *max_factor < *min_factor {
                    return Err(SimError::InvalidArgument(
                        "scaled rho grid needs points >= 1 and 0 < min_factor <= max_factor"
                            .into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-iteration ADMM diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// Final primal/split/dual variables and the residual history.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x_bar: RasterImage,
    pub z: GradientField,
    pub dual: GradientField,
    pub history: Vec<IterationStats>,
    pub converged: bool,
}

impl SolverState {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: RasterImage,
    pub iterations: usize,
    pub converged: bool,
}

/// Conjugate gradients for a self-adjoint positive semidefinite operator.
/// Stops when ||op(x) - b|| <= tol * ||b|| or after max_iters, reporting
/// which through `converged`. `x0` warm-starts the iteration.
pub fn cg_solve<F>(
    apply_op: F,
    b: &RasterImage,
    tol: f64,
    max_iters: usize,
    x0: Option<&RasterImage>,
) -> CgOutcome
where
    F: Fn(&RasterImage) -> RasterImage,
{
    let b_norm = b.norm2();
    if b_norm == 0.0 {
        return CgOutcome {
            x: RasterImage::zeros(b.grid()),
            iterations: 0,
            converged: true,
        };
    }
    let threshold = tol * b_norm;

    let mut x = match x0 {
        Some(init) => init.clone(),
        None => RasterImage::zeros(b.grid()),
    };
    let mut r = b.clone();
    if x0.is_some() {
        r.axpy(-1.0, &apply_op(&x));
    }
    let mut p = r.clone();
    let mut rs = r.dot(&r);

    for k in 0..max_iters {
        if rs.sqrt() <= threshold {
            return CgOutcome {
                x,
                iterations: k,
                converged: true,
            };
        }
        let ap = apply_op(&p);
        let denom = p.dot(&ap);
        if denom <= 0.0 || !denom.is_finite() {
            // Not PD in this direction (or breakdown); return best so far.
            return CgOutcome {
                x,
                iterations: k,
                converged: false,
            };
        }
        let alpha = rs / denom;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rs_new = r.dot(&r);
        let beta = rs_new / rs;
        let mut p_next = r.clone();
        p_next.axpy(beta, &p);
        p = p_next;
        rs = rs_new;
    }
    let converged = rs.sqrt() <= threshold;
    CgOutcome {
        x,
        iterations: max_iters,
        converged,
    }
}

/// Randomized self-adjointness probe: checks <op(u), w> = <u, op(w)> on a
/// random pair. Useful before handing an operator to [`cg_solve`].
pub fn check_self_adjoint<F>(
    apply_op: F,
    grid: crate::grid::ImageGrid,
    stream: RandomStream,
    tol: f64,
) -> SimResult<()>
where
    F: Fn(&RasterImage) -> RasterImage,
{
    let mut rng = stream.rng();
    let u = RasterImage::from_values(
        grid,
        (0..grid.n()).map(|_| rng.random::<f64>() - 0.5).collect(),
    )
    .expect("length matches");
    let w = RasterImage::from_values(
        grid,
        (0..grid.n()).map(|_| rng.random::<f64>() - 0.5).collect(),
    )
    .expect("length matches");
    let lhs = apply_op(&u).dot(&w);
    let rhs = u.dot(&apply_op(&w));
    let scale = lhs.abs().max(rhs.abs()).max(1e-300);
    if ((lhs - rhs) / scale).abs() > tol {
        return Err(SimError::ContractViolation(format!(
            "operator is not self-adjoint: {lhs} vs {rhs}"
        )));
    }
    Ok(())
}

/// Objective ||A x - y||^2 + rho * TV(x).
pub fn objective(record: &AcquisitionRecord, x: &RasterImage, rho: f64) -> SimResult<f64> {
    let ax = record.model.forward(x)?;
    let data: f64 = ax
        .iter()
        .zip(&record.y)
        .map(|(a, y)| (a - y) * (a - y))
        .sum();
    Ok(data + rho * tv_norm(x))
}

/// ADMM reconstruction at a fixed rho, starting from zero.
pub fn admm_reconstruct(
    record: &AcquisitionRecord,
    rho: f64,
    config: &SolverConfig,
) -> SimResult<(RasterImage, SolverState)> {
    admm_reconstruct_warm(record, rho, config, None)
}

/// ADMM reconstruction at a fixed rho with an optional warm start.
pub fn admm_reconstruct_warm(
    record: &AcquisitionRecord,
    rho: f64,
    config: &SolverConfig,
    init: Option<&RasterImage>,
) -> SimResult<(RasterImage, SolverState)> {
    if rho <= 0.0 {
        return Err(SimError::InvalidArgument(format!(
            "rho must be positive, got {rho}"
        )));
    }
    config.validate()?;

    let model = &record.model;
    let grid = model.grid();
    let n_sqrt = (grid.n() as f64).sqrt();
    let mu = config.admm_penalty * model.operator_scale();
    let tau = rho / (2.0 * mu);

    let a_t_y = model.adjoint(&record.y)?;

    let apply_op = |v: &RasterImage| -> RasterImage {
        // (A^T A + mu D^T D) v, with D^T D v = -div(grad(v)).
        let mut out = model
            .normal_apply(v)
            .expect("operator inputs share the model grid");
        let mut reg = divergence(&gradient(v));
        reg.scale_in_place(-mu);
        out.axpy(1.0, &reg);
        out
    };

    let mut x_bar = match init {
        Some(x0) => {
            if x0.grid() != grid {
                return Err(SimError::InvalidArgument(
                    "warm-start image grid does not match model grid".into(),
                ));
            }
            x0.clone()
        }
        None => RasterImage::zeros(grid),
    };
    let mut z = match init {
        Some(_) => gradient(&x_bar),
        None => GradientField::zeros(grid),
    };
    let mut dual = GradientField::zeros(grid);
    let mut history = Vec::new();
    let mut converged = false;

    let mut diagnostics = match &config.diagnostics_path {
        Some(path) => {
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?;
            let mut w = std::io::BufWriter::new(file);
            writeln!(w, "# rho={rho:.9e}")?;
            Some(w)
        }
        None => None,
    };

    for iter in 0..config.max_outer_iters {
        // x-update: (A^T A + mu D^T D) x = A^T y + mu D^T (z - d).
        let mut zd = z.clone();
        zd.axpy(-1.0, &dual);
        let mut rhs = divergence(&zd);
        rhs.scale_in_place(-mu);
        rhs.axpy(1.0, &a_t_y);
        let cg = cg_solve(
            apply_op,
            &rhs,
            config.cg_tol,
            config.cg_max_iters,
            Some(&x_bar),
        );
        x_bar = cg.x;

        // z-update: grouped shrinkage of grad(x) + d.
        let gx = gradient(&x_bar);
        let mut gx_plus_d = gx.clone();
        gx_plus_d.axpy(1.0, &dual);
        let z_new = group_soft_threshold(&gx_plus_d, tau);

        // Residuals. The dual residual is reported without the mu factor
        // so its scale stays comparable across kernel kinds.
        let mut primal_field = gx.clone();
        primal_field.axpy(-1.0, &z_new);
        let primal = primal_field.norm2();
        let mut dz = z_new.clone();
        dz.axpy(-1.0, &z);
        let dual_res = divergence(&dz).norm2();

        // Dual ascent.
        dual.axpy(1.0, &primal_field);
        z = z_new;

        let obj = objective(record, &x_bar, rho)?;
        history.push(IterationStats {
            objective: obj,
            primal_residual: primal,
            dual_residual: dual_res,
        });
        if let Some(w) = diagnostics.as_mut() {
            writeln!(w, "{iter}\t{obj:.9e}\t{primal:.9e}\t{dual_res:.9e}")?;
        }

        if !obj.is_finite() || !primal.is_finite() || !dual_res.is_finite() || !x_bar.is_finite() {
            return Err(SimError::NumericalFailure {
                iteration: iter,
                detail: "non-finite objective or residual".into(),
            });
        }

        if primal <= config.convergence_tol * n_sqrt && dual_res <= config.convergence_tol * n_sqrt
        {
            converged = true;
            break;
        }
    }

    let mut x_tilde = x_bar.clone();
    x_tilde.clamp_non_negative();
    Ok((
        x_tilde,
        SolverState {
            x_bar,
            z,
            dual,
            history,
            converged,
        },
    ))
}

/// Whiteness of a residual laid out on its side x side observation window:
/// the negated sum of squared normalized autocovariances over all 2-D lags
/// (p, q) with |p|, |q| <= 3, excluding (0, 0). Higher is whiter; a
/// zero-variance residual maps to -infinity.
pub fn whiteness_score(residual: &[f64], window_side: usize) -> SimResult<f64> {
    let m = window_side * window_side;
    if residual.len() != m {
        return Err(SimError::InvalidArgument(format!(
            "residual length {} does not match window side {window_side}",
            residual.len()
        )));
    }
    let mean = residual.iter().sum::<f64>() / m as f64;
    let centered: Vec<f64> = residual.iter().map(|v| v - mean).collect();
    let c00: f64 = centered.iter().map(|v| v * v).sum();
    let scale = residual.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    // Rounding in the mean subtraction leaves ~1e-16-scale residues on a
    // constant input; treat anything that small as zero variance.
    if c00 <= (scale * 1e-13) * (scale * 1e-13) * m as f64 {
        return Ok(f64::NEG_INFINITY);
    }

    const MAX_LAG: isize = 3;
    let side = window_side as isize;
    let mut score = 0.0;
    for p in -MAX_LAG..=MAX_LAG {
        for q in -MAX_LAG..=MAX_LAG {
            if p == 0 && q == 0 {
                continue;
            }
            let r0 = p.max(0);
            let r1 = side + p.min(0);
            let c0 = q.max(0);
            let c1 = side + q.min(0);
            let mut acc = 0.0;
            for r in r0..r1 {
                let a_row = (r * side) as usize;
                let b_row = ((r - p) * side) as usize;
                for c in c0..c1 {
                    acc += centered[a_row + c as usize] * centered[b_row + (c - q) as usize];
                }
            }
            let ratio = acc / c00;
            score -= ratio * ratio;
        }
    }
    Ok(score)
}

/// Outcome of the rho search.
#[derive(Debug, Clone)]
pub struct RhoSelection {
    pub rho: f64,
    pub reconstruction: RasterImage,
    /// (rho, whiteness score) for every grid point that solved.
    pub scores: Vec<(f64, f64)>,
    /// ADMM outer iterations summed over the grid.
    pub total_iterations: usize,
}

/// Concrete rho values for the given record and configuration.
pub fn materialize_rho_grid(
    record: &AcquisitionRecord,
    config: &SolverConfig,
) -> SimResult<Vec<f64>> {
    config.validate()?;
    match &config.rho_grid {
        RhoGrid::Explicit(values) => Ok(values.clone()),
        RhoGrid::ScaledGeometric {
            points,
            min_factor,
            max_factor,
        } => {
            let scale = record.model.adjoint(&record.y)?.max_abs();
            if scale <= 0.0 {
                return Err(SimError::InvalidArgument(
                    "cannot scale rho grid: A^T y is zero".into(),
                ));
            }
            if *points == 1 {
                return Ok(vec![scale * (min_factor * max_factor).sqrt()]);
            }
            let log_min = (scale * min_factor).ln();
            let log_max = (scale * max_factor).ln();
            Ok((0..*points)
                .map(|i| {
                    let t = i as f64 / (*points as f64 - 1.0);
                    (log_min + t * (log_max - log_min)).exp()
                })
                .collect())
        }
    }
}

/// Sweep the rho grid in ascending order (warm-starting each run from the
/// previous solution when enabled), score each data residual for
/// whiteness, and return the whitest. Ties break toward smaller rho.
pub fn select_rho(record: &AcquisitionRecord, config: &SolverConfig) -> SimResult<RhoSelection> {
    let grid_values = materialize_rho_grid(record, config)?;
    let side = record.model.window().side();

    let mut previous: Option<RasterImage> = None;
    let mut best: Option<(f64, f64, RasterImage)> = None;
    let mut scores = Vec::with_capacity(grid_values.len());
    let mut total_iterations = 0;
    let mut last_error: Option<SimError> = None;

    for &rho in &grid_values {
        let init = if config.warm_start {
            previous.as_ref()
        } else {
            None
        };
        match admm_reconstruct_warm(record, rho, config, init) {
            Ok((x_tilde, state)) => {
                total_iterations += state.iterations();
                let ax = record.model.forward(&x_tilde)?;
                let residual: Vec<f64> =
                    ax.iter().zip(&record.y).map(|(a, y)| a - y).collect();
                let score = whiteness_score(&residual, side)?;
                scores.push((rho, score));
                let better = match &best {
                    None => true,
                    Some((best_score, _, _)) => score > *best_score,
                };
                if better {
                    best = Some((score, rho, x_tilde.clone()));
                }
                previous = Some(x_tilde);
            }
            Err(err) => {
                last_error = Some(err);
                previous = None;
            }
        }
    }

    match best {
        Some((_, rho, reconstruction)) => Ok(RhoSelection {
            rho,
            reconstruction,
            scores,
            total_iterations,
        }),
        None => Err(last_error.unwrap_or_else(|| SimError::NumericalFailure {
            iteration: 0,
            detail: "every rho grid point failed".into(),
        })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::gaussian_blur;
    use crate::forward::{acquire, AcquisitionModel};
    use crate::grid::{centered_window, make_partition, ImageGrid};
    use crate::optics::Kernel;
    use rand_distr::{Distribution, Normal};

    fn random_image(grid: ImageGrid, seed: u64) -> RasterImage {
        let mut rng = RandomStream::new(seed).rng();
        RasterImage::from_values(grid, (0..grid.n()).map(|_| rng.random::<f64>()).collect())
            .unwrap()
    }

    fn toy_record(grid: ImageGrid, patterns: usize, ratio: f64, seed: u64) -> AcquisitionRecord {
        let mut kernels = Vec::new();
        for i in 0..patterns {
            let img = random_image(grid, seed * 31 + i as u64);
            kernels.push(
                Kernel::from_intensity(img, crate::optics::KernelKind::Speckle, Some(seed))
                    .unwrap(),
            );
        }
        let partition = make_partition(grid.n(), patterns, RandomStream::new(seed ^ 0xA5)).unwrap();
        let window = centered_window(grid, ratio).unwrap();
        let model = AcquisitionModel::new(kernels, partition, window).unwrap();
        let x = random_image(grid, seed + 7);
        acquire(&x, model, 40.0, RandomStream::new(seed + 13)).unwrap()
    }

    #[test]
    fn cg_identity_returns_rhs() {
        let grid = ImageGrid::square(4).unwrap();
        let b = random_image(grid, 1);
        let out = cg_solve(|v| v.clone(), &b, 1e-12, 10, None);
        assert!(out.converged);
        for (a, e) in out.x.values().iter().zip(b.values()) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn cg_two_by_two_system() {
        // [[2,1],[1,2]] x = (3,3) has solution (1,1).
        let grid = ImageGrid::new(2, 1).unwrap();
        let b = RasterImage::from_values(grid, vec![3.0, 3.0]).unwrap();
        let apply = |v: &RasterImage| {
            let s = v.values();
            RasterImage::from_values(grid, vec![2.0 * s[0] + s[1], s[0] + 2.0 * s[1]]).unwrap()
        };
        let out = cg_solve(apply, &b, 1e-12, 10, None);
        assert!(out.converged);
        assert!((out.x.values()[0] - 1.0).abs() < 1e-10);
        assert!((out.x.values()[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cg_solves_regularized_normal_equations() {
        let grid = ImageGrid::square(8).unwrap();
        let record = toy_record(grid, 2, 0.5, 3);
        let model = record.model.clone();
        let mu = 1.0;
        let apply = move |v: &RasterImage| {
            let mut out = model.normal_apply(v).unwrap();
            let mut reg = divergence(&gradient(v));
            reg.scale_in_place(-mu);
            out.axpy(1.0, &reg);
            out
        };
        check_self_adjoint(&apply, grid, RandomStream::new(4), 1e-10).unwrap();
        let b = record.model.adjoint(&record.y).unwrap();
        let out = cg_solve(&apply, &b, 1e-8, 200, None);
        assert!(out.converged, "CG did not converge in 200 iterations");
        // Residual check against the tolerance contract.
        let mut r = b.clone();
        r.axpy(-1.0, &apply(&out.x));
        assert!(r.norm2() <= 1e-8 * b.norm2() * 1.01);
    }

    #[test]
    fn cg_zero_rhs_returns_zero() {
        let grid = ImageGrid::square(4).unwrap();
        let b = RasterImage::zeros(grid);
        let out = cg_solve(|v| v.clone(), &b, 1e-10, 10, None);
        assert!(out.converged);
        assert!(out.x.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn check_self_adjoint_catches_asymmetry() {
        let grid = ImageGrid::new(2, 1).unwrap();
        let skew = |v: &RasterImage| {
            let s = v.values();
            RasterImage::from_values(grid, vec![s[1], -s[0]]).unwrap()
        };
        assert!(check_self_adjoint(skew, grid, RandomStream::new(1), 1e-10).is_err());
    }

    #[test]
    fn admm_zero_observations_give_zero_image() {
        let grid = ImageGrid::square(8).unwrap();
        let mut record = toy_record(grid, 1, 1.0, 5);
        record.y = vec![0.0; record.y.len()];
        let config = SolverConfig::default();
        let (x, state) = admm_reconstruct(&record, 0.5, &config).unwrap();
        assert!(x.values().iter().all(|&v| v == 0.0));
        assert!(state.converged);
    }

    #[test]
    fn admm_rejects_bad_rho() {
        let grid = ImageGrid::square(8).unwrap();
        let record = toy_record(grid, 1, 1.0, 6);
        assert!(admm_reconstruct(&record, 0.0, &SolverConfig::default()).is_err());
        assert!(admm_reconstruct(&record, -1.0, &SolverConfig::default()).is_err());
    }

    #[test]
    fn admm_residuals_finite_and_objective_beats_cheap_comparators() {
        let grid = ImageGrid::square(16).unwrap();
        let record = toy_record(grid, 2, 0.5, 8);
        let config = SolverConfig {
            max_outer_iters: 120,
            ..SolverConfig::default()
        };
        let rho = 1e-2 * record.model.adjoint(&record.y).unwrap().max_abs();
        let (x, state) = admm_reconstruct(&record, rho, &config).unwrap();
        assert!(!state.history.is_empty());
        for stats in &state.history {
            assert!(stats.objective.is_finite());
            assert!(stats.primal_residual.is_finite());
            assert!(stats.dual_residual.is_finite());
        }
        let at_solution = objective(&record, &x, rho).unwrap();
        let at_zero = objective(&record, &RasterImage::zeros(grid), rho).unwrap();
        let at_backprojection =
            objective(&record, &record.model.adjoint(&record.y).unwrap(), rho).unwrap();
        assert!(at_solution <= at_zero, "{at_solution} vs zero {at_zero}");
        assert!(
            at_solution <= at_backprojection,
            "{at_solution} vs backprojection {at_backprojection}"
        );
    }

    #[test]
    fn admm_converged_run_meets_tolerance() {
        let grid = ImageGrid::square(12).unwrap();
        let record = toy_record(grid, 1, 1.0, 9);
        let config = SolverConfig {
            max_outer_iters: 400,
            ..SolverConfig::default()
        };
        let rho = 0.05 * record.model.adjoint(&record.y).unwrap().max_abs();
        let (_, state) = admm_reconstruct(&record, rho, &config).unwrap();
        assert!(state.converged, "no convergence in 400 iterations");
        let last = state.history.last().unwrap();
        let bound = config.convergence_tol * (grid.n() as f64).sqrt();
        assert!(last.primal_residual <= bound);
        assert!(last.dual_residual <= bound);
    }

    #[test]
    fn whiteness_of_iid_gaussian_is_near_zero() {
        let side = 128;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut total = 0.0;
        let draws = 10;
        for seed in 0..draws {
            let mut rng = RandomStream::new(seed).rng();
            let residual: Vec<f64> = (0..side * side).map(|_| normal.sample(&mut rng)).collect();
            let score = whiteness_score(&residual, side).unwrap();
            assert!(score <= 0.0);
            total += score;
        }
        let mean = total / draws as f64;
        assert!(mean > -0.02, "mean whiteness score {mean} too negative");
    }

    #[test]
    fn whiteness_constant_residual_hits_sentinel() {
        let side = 16;
        let residual = vec![3.7; side * side];
        let score = whiteness_score(&residual, side).unwrap();
        assert_eq!(score, f64::NEG_INFINITY);
    }

    #[test]
    fn whiteness_drops_after_smoothing() {
        let side = 64;
        let grid = ImageGrid::square(side).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = RandomStream::new(77).rng();
        let residual: Vec<f64> = (0..side * side).map(|_| normal.sample(&mut rng)).collect();
        let raw_score = whiteness_score(&residual, side).unwrap();
        let img = RasterImage::from_values(grid, residual).unwrap();
        let smoothed = gaussian_blur(&img, 1.5);
        let smooth_score = whiteness_score(smoothed.values(), side).unwrap();
        assert!(
            smooth_score < raw_score,
            "smoothing should lower the score: {smooth_score} vs {raw_score}"
        );
    }

    #[test]
    fn whiteness_rejects_wrong_length() {
        assert!(whiteness_score(&[0.0; 10], 4).is_err());
    }

    #[test]
    fn select_rho_single_point_grid() {
        let grid = ImageGrid::square(8).unwrap();
        let record = toy_record(grid, 1, 1.0, 10);
        let config = SolverConfig {
            rho_grid: RhoGrid::Explicit(vec![0.123]),
            max_outer_iters: 40,
            ..SolverConfig::default()
        };
        let sel = select_rho(&record, &config).unwrap();
        assert_eq!(sel.rho, 0.123);
        assert_eq!(sel.scores.len(), 1);
    }

    #[test]
    fn select_rho_returns_max_score() {
        let grid = ImageGrid::square(12).unwrap();
        let record = toy_record(grid, 2, 0.6, 11);
        let config = SolverConfig {
            rho_grid: RhoGrid::ScaledGeometric {
                points: 5,
                min_factor: 1e-3,
                max_factor: 1.0,
            },
            max_outer_iters: 60,
            ..SolverConfig::default()
        };
        let sel = select_rho(&record, &config).unwrap();
        let best = sel
            .scores
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, |m, (_, s)| m.max(s));
        let (rho_at_best, _) = sel.scores.iter().find(|(_, s)| *s == best).unwrap();
        assert_eq!(sel.rho, *rho_at_best);
        assert!(sel.scores.iter().all(|(_, s)| *s <= best));
        assert!(sel.total_iterations > 0);
    }

    #[test]
    fn rho_grid_is_geometric_and_increasing() {
        let grid = ImageGrid::square(8).unwrap();
        let record = toy_record(grid, 1, 1.0, 12);
        let config = SolverConfig::default();
        let values = materialize_rho_grid(&record, &config).unwrap();
        assert_eq!(values.len(), 12);
        assert!(values.windows(2).all(|w| w[1] > w[0]));
        let r0 = values[1] / values[0];
        for w in values.windows(2) {
            assert!(((w[1] / w[0]) / r0 - 1.0).abs() < 1e-9, "not geometric");
        }
        let scale = record.model.adjoint(&record.y).unwrap().max_abs();
        assert!((values[0] / scale - 1e-4).abs() < 1e-12);
        assert!((values[11] / scale - 1.0).abs() < 1e-9);
    }
}
