//! Euler-Maruyama for the corrected limit SDE and a fourth-order Runge-Kutta
//! integrator for the Wong-Zakai random ODE, coupled on one Brownian draw.

use crate::coeffs::{correction_drift_from, CorrectionMatrix, DiffusionField, DriftField};
use crate::error::{invalid, Error, Result};
use crate::grid::{sup_distance, Path, TimeGrid};
use crate::noise::{build_approximation, ApproxPath, NoiseFamily, Resolution};
use crate::rng::{sample_brownian, RngStream};

/// States with a coordinate beyond this magnitude abort the path.
pub const OVERFLOW_BOUND: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub horizon: f64,
    /// Reference grid steps `N_ref` over `[0, horizon]`.
    pub n_ref: usize,
    /// Random-ODE sub-steps per noise block.
    pub m_ode: usize,
    pub x0: Vec<f64>,
}

impl SolverConfig {
    pub fn new(horizon: f64, n_ref: usize, m_ode: usize, x0: Vec<f64>) -> Result<Self> {
        let cfg = Self {
            horizon,
            n_ref,
            m_ode,
            x0,
        };
        cfg.grid()?;
        if m_ode < 4 {
            return Err(invalid(format!("m_ode must be at least 4, got {m_ode}")));
        }
        if cfg.x0.is_empty() || cfg.x0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("x0 must be a finite, nonempty vector"));
        }
        Ok(cfg)
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.n_ref)
    }

    /// Checks that `n` blocks of length `1/n` tile the reference grid.
    pub fn check_level(&self, n: usize) -> Result<()> {
        let grid = self.grid()?;
        match grid.cells_per_block(n) {
            Some(r) if self.n_ref.is_multiple_of(r) => Ok(()),
            _ => Err(Error::Incompatible(format!(
                "N_ref = {} over T = {} is not a multiple of the block count for n = {n}",
                self.n_ref, self.horizon
            ))),
        }
    }
}

fn guard(t: f64, x: &[f64]) -> Result<()> {
    let norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !norm.is_finite() || norm > OVERFLOW_BOUND {
        return Err(Error::Diverged { time: t, norm });
    }
    Ok(())
}

fn check_dims(b: &DriftField, sigma: &DiffusionField, c: &CorrectionMatrix, x0: &[f64], d: usize) -> Result<()> {
    if b.dim() != d || sigma.dim() != d || c.dim() != d || x0.len() != d {
        return Err(Error::Incompatible(format!(
            "dimensions disagree: drift {}, diffusion {}, correction {}, x0 {}, noise {d}",
            b.dim(),
            sigma.dim(),
            c.dim(),
            x0.len()
        )));
    }
    Ok(())
}

/// Euler-Maruyama for `dX = [b(X) + Σ c_ij σ_il ∂_l σ_jk (X)] dt + σ(X) dW` on
/// the grid of `w`. Discontinuous `b` is evaluated pointwise.
pub fn solve_ito_corrected(
    b: &DriftField,
    sigma: &DiffusionField,
    c: &CorrectionMatrix,
    x0: &[f64],
    w: &Path,
) -> Result<Path> {
    let d = w.dim();
    check_dims(b, sigma, c, x0, d)?;
    let grid = *w.grid();
    let dt = grid.dt();
    let mut values = Vec::with_capacity(w.len() * d);
    values.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let (mut bx, mut corr) = (vec![0.0; d], vec![0.0; d]);
    let (mut s, mut g) = (vec![0.0; d * d], vec![0.0; d * d * d]);
    for k in 0..grid.steps() {
        b.eval_into(&x, &mut bx);
        sigma.sigma_into(&x, &mut s);
        sigma.grad_into(&x, &mut g);
        correction_drift_from(&s, &g, c.matrix(), &mut corr);
        let (w0, w1) = (w.row(k), w.row(k + 1));
        for i in 0..d {
            let mut noise = 0.0;
            for j in 0..d {
                noise += s[i * d + j] * (w1[j] - w0[j]);
            }
            x[i] += (bx[i] + corr[i]) * dt + noise;
        }
        guard(grid.node(k + 1), &x)?;
        values.extend_from_slice(&x);
    }
    Path::from_values(grid, d, values)
}

struct OdeScratch {
    bx: Vec<f64>,
    s: Vec<f64>,
    dw: Vec<f64>,
    k: [Vec<f64>; 4],
}

impl OdeScratch {
    fn new(d: usize) -> Self {
        Self {
            bx: vec![0.0; d],
            s: vec![0.0; d * d],
            dw: vec![0.0; d],
            k: std::array::from_fn(|_| vec![0.0; d]),
        }
    }
}

/// `ẋ = b_n(x) + σ(x) d/dt W^n_t` with the noise derivative taken from block `block`.
#[allow(clippy::too_many_arguments)]
fn rhs(
    b_n: &DriftField,
    sigma: &DiffusionField,
    wn: &ApproxPath<'_>,
    block: usize,
    t: f64,
    x: &[f64],
    out_stage: usize,
    sc: &mut OdeScratch,
) {
    let d = x.len();
    b_n.eval_into(x, &mut sc.bx);
    sigma.sigma_into(x, &mut sc.s);
    wn.derivative_in_block(block, t, &mut sc.dw);
    let out = &mut sc.k[out_stage];
    for i in 0..d {
        let mut v = sc.bx[i];
        for j in 0..d {
            v += sc.s[i * d + j] * sc.dw[j];
        }
        out[i] = v;
    }
}

/// Advances `x` from reference node `from` to node `to` with classical RK4.
/// Every reference cell is split into `ceil(m_ode / cells_per_block)` equal
/// steps, so block boundaries are always step boundaries.
pub fn advance_random_ode(
    b_n: &DriftField,
    sigma: &DiffusionField,
    wn: &ApproxPath<'_>,
    x: &mut [f64],
    from: usize,
    to: usize,
    m_ode: usize,
) -> Result<()> {
    let grid = *wn.brownian().grid();
    if from > to || to > grid.steps() {
        return Err(invalid(format!("node range {from}..{to} is outside the grid")));
    }
    let d = x.len();
    let r = wn.cells_per_block();
    let sub = m_ode.div_ceil(r).max(1);
    let mut sc = OdeScratch::new(d);
    let mut y = vec![0.0; d];
    for cell in from..to {
        let block = cell / r;
        let t0 = grid.node(cell);
        let t1 = grid.node(cell + 1);
        let h = (t1 - t0) / sub as f64;
        for q in 0..sub {
            let t = t0 + q as f64 * h;
            rhs(b_n, sigma, wn, block, t, x, 0, &mut sc);
            for i in 0..d {
                y[i] = x[i] + 0.5 * h * sc.k[0][i];
            }
            rhs(b_n, sigma, wn, block, t + 0.5 * h, &y, 1, &mut sc);
            for i in 0..d {
                y[i] = x[i] + 0.5 * h * sc.k[1][i];
            }
            rhs(b_n, sigma, wn, block, t + 0.5 * h, &y, 2, &mut sc);
            for i in 0..d {
                y[i] = x[i] + h * sc.k[2][i];
            }
            let t_end = if q + 1 == sub { t1 } else { t + h };
            rhs(b_n, sigma, wn, block, t_end, &y, 3, &mut sc);
            for i in 0..d {
                x[i] += h / 6.0 * (sc.k[0][i] + 2.0 * sc.k[1][i] + 2.0 * sc.k[2][i] + sc.k[3][i]);
            }
        }
        guard(t1, x)?;
    }
    Ok(())
}

/// Solves the Wong-Zakai random ODE driven by `wn`, recorded at the nodes
/// of the underlying Brownian grid.
pub fn solve_random_ode(
    b_n: &DriftField,
    sigma: &DiffusionField,
    wn: &ApproxPath<'_>,
    x0: &[f64],
    m_ode: usize,
) -> Result<Path> {
    let d = wn.dim();
    if b_n.smoothness().is_none() {
        return Err(invalid(format!(
            "drift `{}` is not C¹_b; the random ODE needs a smooth approximant",
            b_n.name()
        )));
    }
    if b_n.dim() != d || sigma.dim() != d || x0.len() != d {
        return Err(Error::Incompatible("random ODE dimensions disagree".into()));
    }
    if m_ode == 0 {
        return Err(invalid("m_ode must be positive"));
    }
    let grid = *wn.brownian().grid();
    let mut values = Vec::with_capacity(grid.steps() * d + d);
    values.extend_from_slice(x0);
    let mut x = x0.to_vec();
    for cell in 0..grid.steps() {
        advance_random_ode(b_n, sigma, wn, &mut x, cell, cell + 1, m_ode)?;
        values.extend_from_slice(&x);
    }
    Path::from_values(grid, d, values)
}

/// The pieces of a coupled limit-SDE / random-ODE experiment.
#[derive(Debug, Clone)]
pub struct CoupledSetup {
    pub drift: DriftField,
    pub sigma: DiffusionField,
    pub correction: CorrectionMatrix,
    pub family: NoiseFamily,
    pub solver: SolverConfig,
    pub resolution: Resolution,
}

#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub x: Path,
    pub xn: Path,
    pub sup_error: f64,
}

/// Samples `W` once from `stream`, builds `W^n` from it, solves the limit SDE
/// with `setup.drift` and the random ODE with `b_n`, and compares them.
pub fn coupled_run(setup: &CoupledSetup, b_n: &DriftField, n: usize, stream: RngStream) -> Result<CoupledRun> {
    let cfg = &setup.solver;
    cfg.check_level(n)?;
    let w = sample_brownian(&cfg.grid()?, cfg.dim(), stream)?;
    let wn = build_approximation(&setup.family, &w, n, &setup.resolution)?;
    let x = solve_ito_corrected(&setup.drift, &setup.sigma, &setup.correction, &cfg.x0, &w)?;
    let xn = solve_random_ode(b_n, &setup.sigma, &wn, &cfg.x0, cfg.m_ode)?;
    let sup_error = sup_distance(&x, &xn)?;
    Ok(CoupledRun { x, xn, sup_error })
}
