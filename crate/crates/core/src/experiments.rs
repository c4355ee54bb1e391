//! Monte Carlo harnesses: strong-error estimates, rate fits, stability
//! sweeps, tube probabilities and Girsanov weights.

use rayon::prelude::*;

use crate::coeffs::{lp_norm, CorrectionMatrix, DiffusionField, DriftApproxSequence, DriftField};
use crate::error::{invalid, Error, Result};
use crate::grid::{sup_distance, Path, TimeGrid};
use crate::linalg::solve;
use crate::rng::{sample_brownian, RngStream};
use crate::solvers::{coupled_run, solve_ito_corrected, CoupledSetup, OVERFLOW_BOUND};
use crate::stats::{clopper_pearson_lower, least_squares, mean_and_se, pairwise_sum, student_t_critical};

/// Default fraction of aborted paths above which a run fails.
pub const DEFAULT_ABORT_THRESHOLD: f64 = 0.01;

/// Mean and standard error of a per-path statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    /// Paths that completed.
    pub paths: usize,
    pub aborted: usize,
}

fn is_abort(e: &Error) -> bool {
    matches!(e, Error::Diverged { .. } | Error::SingularDiffusion(_))
}

/// Runs `f` on `paths` forked streams in parallel, in path order. Aborted
/// paths are dropped and counted; exceeding `threshold` fails the run.
pub fn run_paths<T, F>(paths: usize, stream: RngStream, threshold: f64, f: F) -> Result<(Vec<T>, usize)>
where
    T: Send,
    F: Fn(RngStream) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = (0..paths as u64).into_par_iter().map(|i| f(stream.fork(i))).collect();
    let mut kept = Vec::with_capacity(paths);
    let mut aborted = 0;
    for r in results {
        match r {
            Ok(v) => kept.push(v),
            Err(e) if is_abort(&e) => aborted += 1,
            Err(e) => return Err(e),
        }
    }
    if aborted as f64 > threshold * paths as f64 {
        return Err(Error::AbortThreshold {
            aborted,
            total: paths,
            threshold,
        });
    }
    Ok((kept, aborted))
}

fn estimate(xs: &[f64], aborted: usize) -> McEstimate {
    let (m, se) = mean_and_se(xs);
    McEstimate {
        estimate: m,
        standard_error: se,
        paths: xs.len(),
        aborted,
    }
}

/// `E sup_t |X_t - X^n_t|²` over `paths` coupled runs.
pub fn mc_mean_sup_error(
    setup: &CoupledSetup,
    b_n: &DriftField,
    n: usize,
    paths: usize,
    stream: RngStream,
    abort_threshold: f64,
) -> Result<McEstimate> {
    if paths < 30 {
        return Err(invalid(format!("at least 30 paths are required, got {paths}")));
    }
    setup.solver.check_level(n)?;
    let (errs, aborted) = run_paths(paths, stream, abort_threshold, |s| {
        coupled_run(setup, b_n, n, s).map(|r| r.sup_error * r.sup_error)
    })?;
    Ok(estimate(&errs, aborted))
}

/// Least-squares slope of `log mse` against `log n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval of the slope.
    pub half_width: f64,
}

pub fn fit_rate(points: &[(usize, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(invalid(format!("a rate fit needs at least 3 points, got {}", points.len())));
    }
    let mut ns: Vec<usize> = points.iter().map(|p| p.0).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() != points.len() || ns[0] == 0 {
        return Err(invalid("rate fit levels must be distinct and positive"));
    }
    if let Some(&(n, m)) = points.iter().find(|p| !(p.1 > 0.0 && p.1.is_finite())) {
        return Err(invalid(format!("mse at n = {n} is not positive: {m}")));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let fit = least_squares(&xs, &ys);
    Ok(RateFit {
        slope: fit.slope,
        intercept: fit.intercept,
        half_width: student_t_critical(0.95, points.len() - 2) * fit.slope_se,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub mse: f64,
    pub stderr: f64,
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    pub fit: RateFit,
}

/// `mc_mean_sup_error` at every `n` with common random numbers (the same
/// `stream` at every level). `b_n` comes from `seq` when given, else `b_n = b`.
pub fn rate_sweep(
    setup: &CoupledSetup,
    seq: Option<&DriftApproxSequence>,
    n_list: &[usize],
    paths: usize,
    stream: RngStream,
    abort_threshold: f64,
) -> Result<RateReport> {
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let b_n = match seq {
            Some(s) => s.approximant(n)?,
            None => setup.drift.clone(),
        };
        let e = mc_mean_sup_error(setup, &b_n, n, paths, stream, abort_threshold)?;
        rows.push(RateRow {
            n,
            mse: e.estimate,
            stderr: e.standard_error,
            paths: e.paths,
        });
    }
    let fit = fit_rate(&rows.iter().map(|r| (r.n, r.mse)).collect::<Vec<_>>())?;
    Ok(RateReport { rows, fit })
}

/// `E sup_t |X¹_t - X²_t|²` for two corrected SDEs driven by one `W`.
#[allow(clippy::too_many_arguments)]
pub fn stability_pair(
    b1: &DriftField,
    x1: &[f64],
    b2: &DriftField,
    x2: &[f64],
    sigma: &DiffusionField,
    c: &CorrectionMatrix,
    grid: &TimeGrid,
    paths: usize,
    stream: RngStream,
    abort_threshold: f64,
) -> Result<McEstimate> {
    if paths < 30 {
        return Err(invalid(format!("at least 30 paths are required, got {paths}")));
    }
    let d = sigma.dim();
    let (errs, aborted) = run_paths(paths, stream, abort_threshold, |s| {
        let w = sample_brownian(grid, d, s)?;
        let a = solve_ito_corrected(b1, sigma, c, x1, &w)?;
        let b = solve_ito_corrected(b2, sigma, c, x2, &w)?;
        let e = sup_distance(&a, &b)?;
        Ok(e * e)
    })?;
    Ok(estimate(&errs, aborted))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityRow {
    pub level: usize,
    pub lp_distance: f64,
    pub mse: f64,
    pub stderr: f64,
}

impl StabilityRow {
    /// `mse / ‖b - b_n‖²`, undefined at zero distance.
    pub fn ratio(&self) -> Option<f64> {
        (self.lp_distance > 0.0).then(|| self.mse / (self.lp_distance * self.lp_distance))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    /// Least-squares constant fitted to the ratios `mse / ‖b - b_n‖²`, i.e.
    /// their mean over levels with positive distance.
    pub fitted_constant: Option<f64>,
    pub max_ratio: Option<f64>,
}

/// Co-simulates the `b`- and `b_n`-driven corrected SDEs from the same `x0`
/// on shared noise at every level.
#[allow(clippy::too_many_arguments)]
pub fn stability_sweep(
    b: &DriftField,
    seq: &DriftApproxSequence,
    sigma: &DiffusionField,
    c: &CorrectionMatrix,
    x0: &[f64],
    grid: &TimeGrid,
    levels: &[usize],
    paths: usize,
    stream: RngStream,
    lp_cells: usize,
    abort_threshold: f64,
) -> Result<StabilityReport> {
    if levels.is_empty() {
        return Err(invalid("stability sweep needs at least one level"));
    }
    let mut rows = Vec::with_capacity(levels.len());
    for &level in levels {
        let b_n = seq.approximant(level)?;
        let dist = lp_norm(&DriftField::difference(b, &b_n)?, seq.p(), lp_cells)?;
        let e = stability_pair(b, x0, &b_n, x0, sigma, c, grid, paths, stream, abort_threshold)?;
        rows.push(StabilityRow {
            level,
            lp_distance: dist,
            mse: e.estimate,
            stderr: e.standard_error,
        });
    }
    let ratios: Vec<f64> = rows.iter().filter_map(StabilityRow::ratio).collect();
    let fitted_constant = (!ratios.is_empty()).then(|| pairwise_sum(&ratios) / ratios.len() as f64);
    let max_ratio = rows.iter().filter_map(StabilityRow::ratio).reduce(f64::max);
    Ok(StabilityReport {
        rows,
        fitted_constant,
        max_ratio,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TubeReport {
    pub target: String,
    pub epsilon: f64,
    pub paths: usize,
    pub hits: usize,
    /// One-sided 95% Clopper-Pearson lower bound on the hit probability.
    pub lcb: f64,
}

impl TubeReport {
    pub fn fraction(&self) -> f64 {
        if self.paths == 0 {
            0.0
        } else {
            self.hits as f64 / self.paths as f64
        }
    }
}

/// Hit counts of `sup_t |X_t - φ_t| < ε` for every target and radius, all
/// evaluated on one set of simulated paths. Targets share one grid.
#[allow(clippy::too_many_arguments)]
pub fn tube_probabilities(
    b: &DriftField,
    sigma: &DiffusionField,
    c: &CorrectionMatrix,
    x0: &[f64],
    targets: &[(String, Path)],
    epsilons: &[f64],
    paths: usize,
    stream: RngStream,
    abort_threshold: f64,
) -> Result<Vec<TubeReport>> {
    let Some((_, first)) = targets.first() else {
        return Err(invalid("at least one target path is required"));
    };
    if paths == 0 {
        return Err(invalid("at least one path is required"));
    }
    if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0)) {
        return Err(invalid(format!("tube radius must be positive, got {e}")));
    }
    let grid = *first.grid();
    for (name, phi) in targets {
        if phi.grid() != &grid || phi.dim() != x0.len() {
            return Err(Error::GridMismatch(format!("target `{name}` does not share the grid and dimension")));
        }
        if phi.row(0).iter().zip(x0).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(invalid(format!("target `{name}` does not start at x0")));
        }
    }
    let d = x0.len();
    let (dists, _) = run_paths(paths, stream, abort_threshold, |s| {
        let w = sample_brownian(&grid, d, s)?;
        let x = solve_ito_corrected(b, sigma, c, x0, &w)?;
        targets.iter().map(|(_, phi)| sup_distance(&x, phi)).collect::<Result<Vec<f64>>>()
    })?;
    let done = dists.len();
    let mut out = Vec::with_capacity(targets.len() * epsilons.len());
    for (ti, (name, _)) in targets.iter().enumerate() {
        for &eps in epsilons {
            let hits = dists.iter().filter(|row| row[ti] < eps).count();
            out.push(TubeReport {
                target: name.clone(),
                epsilon: eps,
                paths: done,
                hits,
                lcb: clopper_pearson_lower(hits, done, 0.95),
            });
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn tube_probability(
    b: &DriftField,
    sigma: &DiffusionField,
    c: &CorrectionMatrix,
    x0: &[f64],
    phi: &Path,
    epsilon: f64,
    paths: usize,
    stream: RngStream,
) -> Result<TubeReport> {
    let targets = [("target".to_string(), phi.clone())];
    let mut r = tube_probabilities(b, sigma, c, x0, &targets, &[epsilon], paths, stream, DEFAULT_ABORT_THRESHOLD)?;
    Ok(r.remove(0))
}

/// Simulates `dY = σ(Y) ∘ dW` (Itô form with `c = I/2`) and accumulates
/// `ρ_T = exp(Σ θ·ΔW - ½ Σ |θ|² Δt)` with `θ = σ(Y)⁻¹ b(Y)` at left points.
pub fn girsanov_weight(
    b: &DriftField,
    sigma: &DiffusionField,
    x0: &[f64],
    stream: RngStream,
    grid: &TimeGrid,
) -> Result<(f64, Path)> {
    let d = sigma.dim();
    if b.dim() != d || x0.len() != d {
        return Err(Error::Incompatible("girsanov dimensions disagree".into()));
    }
    let w = sample_brownian(grid, d, stream)?;
    let y = solve_ito_corrected(&DriftField::zero(d), sigma, &CorrectionMatrix::standard(d), x0, &w)?;
    let dt = grid.dt();
    let mut s = vec![0.0; d * d];
    let mut bx = vec![0.0; d];
    let mut log_rho = 0.0;
    for k in 0..grid.steps() {
        let yk = y.row(k);
        b.eval_into(yk, &mut bx);
        if bx.iter().all(|v| *v == 0.0) {
            continue;
        }
        sigma.sigma_into(yk, &mut s);
        let theta = solve(&s, d, &bx).ok_or_else(|| Error::SingularDiffusion(yk.to_vec()))?;
        let (w0, w1) = (w.row(k), w.row(k + 1));
        let mut dot = 0.0;
        let mut sq = 0.0;
        for j in 0..d {
            dot += theta[j] * (w1[j] - w0[j]);
            sq += theta[j] * theta[j];
        }
        log_rho += dot - 0.5 * sq * dt;
    }
    let rho = log_rho.exp();
    if !rho.is_finite() || rho > OVERFLOW_BOUND {
        return Err(Error::Diverged {
            time: grid.horizon(),
            norm: rho,
        });
    }
    Ok((rho, y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GirsanovReport {
    pub paths: usize,
    pub mean_rho: f64,
    pub standard_error: f64,
    pub max_weight: f64,
    pub min_weight: f64,
}

impl GirsanovReport {
    /// `|mean - 1| <= k · SE`.
    pub fn mean_one_within(&self, k: f64) -> bool {
        (self.mean_rho - 1.0).abs() <= k * self.standard_error
    }
}

pub fn girsanov_check(
    b: &DriftField,
    sigma: &DiffusionField,
    x0: &[f64],
    grid: &TimeGrid,
    paths: usize,
    stream: RngStream,
    abort_threshold: f64,
) -> Result<GirsanovReport> {
    if paths < 30 {
        return Err(invalid(format!("at least 30 paths are required, got {paths}")));
    }
    let (ws, _) = run_paths(paths, stream, abort_threshold, |s| girsanov_weight(b, sigma, x0, s, grid).map(|r| r.0))?;
    let (m, se) = mean_and_se(&ws);
    Ok(GirsanovReport {
        paths: ws.len(),
        mean_rho: m,
        standard_error: se,
        max_weight: ws.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_weight: ws.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{NoiseFamily, Resolution};
    use crate::solvers::SolverConfig;

    fn setup(drift: DriftField, sigma: DiffusionField, n_ref: usize) -> CoupledSetup {
        CoupledSetup {
            drift,
            sigma,
            correction: CorrectionMatrix::standard(1),
            family: NoiseFamily::piecewise_linear(),
            solver: SolverConfig::new(1.0, n_ref, 8, vec![0.5]).unwrap(),
            resolution: Resolution::default(),
        }
    }

    #[test]
    fn zero_noise_gives_zero_error() {
        let s = setup(DriftField::zero(1), DiffusionField::constant(1, 0.0), 256);
        let e = mc_mean_sup_error(&s, &DriftField::zero(1), 16, 40, RngStream::new(1, 0), 0.01).unwrap();
        assert_eq!(e.estimate, 0.0);
        assert!(mc_mean_sup_error(&s, &DriftField::zero(1), 16, 10, RngStream::new(1, 0), 0.01).is_err());
    }

    #[test]
    fn error_shrinks_with_n_and_is_repeatable() {
        let s = setup(DriftField::sin_bump(1), DiffusionField::sin_elliptic(1, 1.0, 0.5).unwrap(), 1024);
        let b = s.drift.clone();
        let st = RngStream::new(2, 0);
        let coarse = mc_mean_sup_error(&s, &b, 8, 200, st, 0.01).unwrap();
        let fine = mc_mean_sup_error(&s, &b, 32, 200, st, 0.01).unwrap();
        assert!(fine.estimate + 3.0 * fine.standard_error < coarse.estimate, "{fine:?} {coarse:?}");
        let again = mc_mean_sup_error(&s, &b, 8, 200, st, 0.01).unwrap();
        assert_eq!(coarse.estimate.to_bits(), again.estimate.to_bits());
    }

    #[test]
    fn identity_coupling_is_exact_for_additive_noise() {
        let s = setup(DriftField::zero(1), DiffusionField::constant(1, 1.3), 256);
        let e = mc_mean_sup_error(&s, &DriftField::zero(1), 256, 50, RngStream::new(3, 0), 0.01).unwrap();
        assert!(e.estimate < 1e-20, "{e:?}");
    }

    #[test]
    fn standard_error_scales_with_paths() {
        let s = setup(DriftField::zero(1), DiffusionField::identity(1), 256);
        let b = DriftField::zero(1);
        let st = RngStream::new(4, 0);
        let a = mc_mean_sup_error(&s, &b, 8, 2000, st, 0.01).unwrap();
        let c = mc_mean_sup_error(&s, &b, 8, 4000, st, 0.01).unwrap();
        let r = c.standard_error / a.standard_error;
        assert!((0.6..=0.85).contains(&r), "ratio {r}");
    }

    #[test]
    fn fit_rate_synthetic() {
        let pts: Vec<(usize, f64)> = [8, 16, 32, 64].iter().map(|&n| (n, 1.0 / n as f64)).collect();
        let f = fit_rate(&pts).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-10);
        assert!(f.half_width < 1e-9);
        let flat: Vec<(usize, f64)> = [8, 16, 32].iter().map(|&n| (n, 0.3)).collect();
        assert!(fit_rate(&flat).unwrap().slope.abs() < 1e-12);
        assert!(fit_rate(&pts[..2]).is_err());
        assert!(fit_rate(&[(8, 1.0), (8, 0.5), (16, 0.2)]).is_err());
        assert!(fit_rate(&[(8, 1.0), (16, 0.0), (32, 0.2)]).is_err());
    }

    #[test]
    fn stability_offset_and_identity() {
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let sigma = DiffusionField::constant(1, 0.9);
        let c = CorrectionMatrix::standard(1);
        let z = DriftField::zero(1);
        let e = stability_pair(&z, &[0.2], &z, &[0.9], &sigma, &c, &grid, 40, RngStream::new(5, 0), 0.01).unwrap();
        assert!((e.estimate - 0.49).abs() < 1e-12 && e.standard_error < 1e-12);

        let b = DriftField::sin_bump(1);
        let seq = DriftApproxSequence::identity(b.clone(), 2.0, 0.5, 1.0).unwrap();
        let r = stability_sweep(&b, &seq, &sigma, &c, &[0.0], &grid, &[4, 8], 40, RngStream::new(5, 1), 256, 0.01).unwrap();
        assert!(r.rows.iter().all(|row| row.mse == 0.0 && row.lp_distance == 0.0));
        assert_eq!(r.fitted_constant, None);
    }

    #[test]
    fn stability_with_ramp_sequence() {
        let grid = TimeGrid::new(1.0, 256).unwrap();
        let b = DriftField::indicator01();
        let seq = DriftApproxSequence::ramp(0.9, 2.0, 0.05).unwrap();
        let r = stability_sweep(
            &b,
            &seq,
            &DiffusionField::identity(1),
            &CorrectionMatrix::standard(1),
            &[0.5],
            &grid,
            &[1 << 4, 1 << 10, 1 << 16],
            400,
            RngStream::new(6, 0),
            1 << 14,
            0.01,
        )
        .unwrap();
        for w in r.rows.windows(2) {
            assert!(w[1].mse <= w[0].mse, "{:?}", r.rows);
        }
        assert!(r.rows[2].mse < r.rows[0].mse / 4.0, "{:?}", r.rows);
    }

    #[test]
    fn tube_basics() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let sigma = DiffusionField::sin_elliptic(1, 1.0, 0.5).unwrap();
        let c = CorrectionMatrix::standard(1);
        let b = DriftField::indicator01();
        let flat = Path::from_fn(grid, 1, |_, o| o[0] = 0.0).unwrap();
        let huge = tube_probability(&b, &sigma, &c, &[0.0], &flat, 1e6, 200, RngStream::new(7, 0)).unwrap();
        assert_eq!(huge.hits, 200);

        let w = sample_brownian(&grid, 1, RngStream::new(7, 99)).unwrap();
        let phi = solve_ito_corrected(&b, &sigma, &c, &[0.0], &w).unwrap();
        let r = tube_probability(&b, &sigma, &c, &[0.0], &phi, 0.5, 10_000, RngStream::new(7, 1)).unwrap();
        assert!(r.hits > 0 && r.lcb > 0.0);

        let shifted = Path::from_fn(grid, 1, |_, o| o[0] = 1.0).unwrap();
        assert!(tube_probability(&b, &sigma, &c, &[0.0], &shifted, 0.5, 10, RngStream::new(7, 2)).is_err());

        let targets = vec![("flat".to_string(), flat), ("bulk".to_string(), phi)];
        let ladder = tube_probabilities(&b, &sigma, &c, &[0.0], &targets, &[0.25, 0.5, 1.0], 2000, RngStream::new(7, 3), 0.01).unwrap();
        for t in ladder.chunks(3) {
            assert!(t[0].hits <= t[1].hits && t[1].hits <= t[2].hits);
        }
    }

    #[test]
    fn girsanov_closed_forms() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let (rho, _) = girsanov_weight(&DriftField::zero(1), &DiffusionField::sin_elliptic(1, 1.0, 0.5).unwrap(), &[0.3], RngStream::new(8, 0), &grid).unwrap();
        assert_eq!(rho, 1.0);

        let v = [0.4, -0.7];
        let stream = RngStream::new(8, 1);
        let (rho, _) = girsanov_weight(&DriftField::uniform(v.to_vec()), &DiffusionField::identity(2), &[0.0, 0.0], stream, &grid).unwrap();
        let w = sample_brownian(&grid, 2, stream).unwrap();
        let wt = w.terminal();
        let want = (v[0] * wt[0] + v[1] * wt[1] - 0.5 * (v[0] * v[0] + v[1] * v[1])).exp();
        assert!((rho - want).abs() < 1e-8 * want);
    }

    #[test]
    fn girsanov_mean_one_for_builtin_drifts() {
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let sigma = DiffusionField::sin_elliptic(1, 1.0, 0.5).unwrap();
        for (k, b) in [DriftField::indicator01(), DriftField::gaussian_bump(1), DriftField::sin_bump(1)].iter().enumerate() {
            let r = girsanov_check(b, &sigma, &[0.2], &grid, 4000, RngStream::new(9, k as u64), 0.01).unwrap();
            assert!(r.min_weight > 0.0);
            assert!(r.mean_one_within(3.0), "{}: {r:?}", b.name());
        }
    }

    #[test]
    fn abort_threshold_is_enforced() {
        use rand::RngCore;
        let r = run_paths(100, RngStream::new(0, 0), 0.01, |s| {
            if s.rng().next_u64() % 10 == 0 {
                Err(Error::Diverged { time: 0.0, norm: f64::INFINITY })
            } else {
                Ok(1.0)
            }
        });
        assert!(matches!(r, Err(Error::AbortThreshold { .. })));
        let ok = run_paths(100, RngStream::new(0, 0), 0.01, |_| Ok(1.0)).unwrap();
        assert_eq!((ok.0.len(), ok.1), (100, 0));
    }

}
