//! Approximations `W^n` of a Brownian path and estimators for their
//! area coefficients `s_ij^n`, `c_ij^n`.
//!
//! Three families are supported:
//!
//! * [`NoiseFamily::PiecewiseShape`]: on each block `[k/n, (k+1)/n)` the path
//!   moves from `W_{k/n}` to `W_{(k+1)/n}` along a shape `f` with
//!   `f(0) = 0`, `f(1) = 1`. `f(t) = t` is the piecewise-linear interpolant.
//! * [`NoiseFamily::Mollified`]: `W^n_s = ∫ W_r ρ_n(s - r) dr` with
//!   `ρ_n(v) = n ρ(n v)`, where `W_r = 0` for `r < 0`.
//! * [`NoiseFamily::McShane`]: two-dimensional; each component uses `f1` or
//!   `f2` depending on the sign of `ΔW¹ ΔW²` on the block.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::{Path, TimeGrid};
use crate::linalg::Matrix;
use crate::quadrature::GaussLegendre;
use crate::rng::{sample_brownian, RngStream};
use crate::stats::{least_squares, mean_and_se, LineFit};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A `C¹` function on `[0, 1]` with `f(0) = 0` and `f(1) = 1`.
#[derive(Clone)]
pub struct ShapeFunction {
    name: String,
    value: ScalarFn,
    derivative: ScalarFn,
}

impl fmt::Debug for ShapeFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("ShapeFunction").field(&self.name).finish()
    }
}

impl ShapeFunction {
    /// Validates the endpoint conditions and checks the derivative against
    /// central differences at interior points.
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let name = name.into();
        let f0 = value(0.0);
        let f1 = value(1.0);
        if f0.abs() > 1e-12 || (f1 - 1.0).abs() > 1e-12 {
            return Err(invalid(format!(
                "shape `{name}` must satisfy f(0)=0, f(1)=1 (got {f0}, {f1})"
            )));
        }
        let h = 1e-5;
        for k in 1..32 {
            let u = k as f64 / 32.0;
            let fd = (value(u + h) - value(u - h)) / (2.0 * h);
            let d = derivative(u);
            if !d.is_finite() || (fd - d).abs() > 1e-6 * d.abs().max(1.0) {
                return Err(invalid(format!(
                    "shape `{name}`: derivative {d} disagrees with finite difference {fd} at {u}"
                )));
            }
        }
        Ok(Self {
            name,
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        })
    }

    /// `f(t) = t`.
    pub fn linear() -> Self {
        Self::new("linear", |u| u, |_| 1.0).expect("linear shape is valid")
    }

    /// `f(t) = t^p`, `p >= 1`.
    pub fn power(p: f64) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(invalid(format!("power shape needs p >= 1, got {p}")));
        }
        Self::new(
            format!("power({p})"),
            move |u| u.powf(p),
            move |u| if u == 0.0 && p > 1.0 { 0.0 } else { p * u.powf(p - 1.0) },
        )
    }

    /// `f(t) = 3t² - 2t³`.
    pub fn smoothstep() -> Self {
        Self::new("smoothstep", |u| u * u * (3.0 - 2.0 * u), |u| 6.0 * u * (1.0 - u))
            .expect("smoothstep shape is valid")
    }

    /// `f(t) = sin(πt/2)`.
    pub fn sine() -> Self {
        use std::f64::consts::FRAC_PI_2;
        Self::new("sine", |u| (FRAC_PI_2 * u).sin(), |u| FRAC_PI_2 * (FRAC_PI_2 * u).cos())
            .expect("sine shape is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        (self.value)(u)
    }

    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        (self.derivative)(u)
    }
}

/// Nonnegative smooth kernel supported in `[0, 1]` with unit mass, together
/// with the composite Gauss-Legendre rule it is integrated with.
#[derive(Clone)]
pub struct MollifierKernel {
    name: String,
    value: ScalarFn,
    derivative: ScalarFn,
    order: usize,
    panels: usize,
}

impl fmt::Debug for MollifierKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MollifierKernel")
            .field("name", &self.name)
            .field("order", &self.order)
            .field("panels", &self.panels)
            .finish()
    }
}

impl MollifierKernel {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        order: usize,
        panels: usize,
    ) -> Result<Self> {
        if order == 0 || panels == 0 {
            return Err(invalid("kernel quadrature needs positive order and panel count"));
        }
        let kernel = Self {
            name: name.into(),
            value: Arc::new(value),
            derivative: Arc::new(derivative),
            order,
            panels,
        };
        let gl = GaussLegendre::new(order);
        let mut mass = 0.0;
        let h = 1.0 / panels as f64;
        for p in 0..panels {
            for (u, w) in gl.on(p as f64 * h, (p + 1) as f64 * h) {
                let r = kernel.value(u);
                if !(r >= 0.0) {
                    return Err(invalid(format!("kernel `{}` is negative at {u}", kernel.name)));
                }
                mass += w * r;
            }
        }
        if (mass - 1.0).abs() > 1e-8 {
            return Err(invalid(format!(
                "kernel `{}` integrates to {mass} under its quadrature",
                kernel.name
            )));
        }
        Ok(kernel)
    }

    /// The standard bump `exp(-1/(1 - x²))`, `x = 2u - 1`, normalised to unit mass.
    pub fn bump() -> Self {
        let raw = |u: f64| {
            let x = 2.0 * u - 1.0;
            if x.abs() >= 1.0 {
                0.0
            } else {
                (-1.0 / (1.0 - x * x)).exp()
            }
        };
        // normalized under the rule it is integrated with
        let z = GaussLegendre::new(4).integrate(0.0, 1.0, 32, raw);
        let value = move |u: f64| raw(u) / z;
        let derivative = move |u: f64| {
            let x = 2.0 * u - 1.0;
            if x.abs() >= 1.0 {
                0.0
            } else {
                let q = 1.0 - x * x;
                raw(u) / z * (-4.0 * x / (q * q))
            }
        };
        Self::new("bump", value, derivative, 4, 32).expect("bump kernel is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        (self.value)(u)
    }

    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        (self.derivative)(u)
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

#[derive(Debug, Clone)]
pub enum NoiseFamily {
    PiecewiseShape { shape: ShapeFunction },
    Mollified { kernel: MollifierKernel },
    McShane { f1: ShapeFunction, f2: ShapeFunction },
}

impl NoiseFamily {
    pub fn piecewise_linear() -> Self {
        NoiseFamily::PiecewiseShape {
            shape: ShapeFunction::linear(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            NoiseFamily::PiecewiseShape { shape } => format!("piecewise[{}]", shape.name()),
            NoiseFamily::Mollified { kernel } => format!("mollified[{}]", kernel.name()),
            NoiseFamily::McShane { f1, f2 } => format!("mcshane[{},{}]", f1.name(), f2.name()),
        }
    }

    /// Dimension the family is restricted to, if any.
    pub fn required_dim(&self) -> Option<usize> {
        match self {
            NoiseFamily::McShane { .. } => Some(2),
            _ => None,
        }
    }

    /// Whether `W^n_{k/n} = W_{k/n}` at block boundaries.
    pub fn interpolates_nodes(&self) -> bool {
        !matches!(self, NoiseFamily::Mollified { .. })
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        match self.required_dim() {
            Some(req) if req != d => Err(Error::Incompatible(format!(
                "{} requires dimension {req}, got {d}",
                self.name()
            ))),
            _ => Ok(()),
        }
    }
}

/// Discretisation knobs for block integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolution {
    /// Quadrature panels per noise block (at least 8).
    pub m_sub: usize,
    /// Gauss-Legendre points per panel.
    pub gauss_order: usize,
    /// Brownian grid cells per block when the estimators sample their own paths.
    pub cells_per_block: usize,
    /// Blocks averaged per sample in the `s` estimator.
    pub blocks_per_sample: usize,
}

impl Default for Resolution {
    fn default() -> Self {
        Self {
            m_sub: 8,
            gauss_order: 4,
            cells_per_block: 16,
            blocks_per_sample: 8,
        }
    }
}

impl Resolution {
    pub fn validate(&self) -> Result<()> {
        if self.m_sub < 8 {
            return Err(invalid(format!("m_sub must be at least 8, got {}", self.m_sub)));
        }
        if self.gauss_order == 0 || self.cells_per_block == 0 || self.blocks_per_sample == 0 {
            return Err(invalid("resolution entries must be positive"));
        }
        Ok(())
    }
}

/// A realised approximation `W^n` of one Brownian path.
#[derive(Debug, Clone)]
pub struct ApproxPath<'w> {
    family: NoiseFamily,
    w: &'w Path,
    n: usize,
    cells_per_block: usize,
    blocks: usize,
    swapped: Vec<bool>,
    m_sub: usize,
    gl: GaussLegendre,
    window_gl: GaussLegendre,
}

/// Builds `W^n` from `w`. The grid spacing of `w` must divide `1/n` and the
/// horizon must be a whole number of blocks.
pub fn build_approximation<'w>(
    family: &NoiseFamily,
    w: &'w Path,
    n: usize,
    res: &Resolution,
) -> Result<ApproxPath<'w>> {
    res.validate()?;
    family.check_dim(w.dim())?;
    let grid = w.grid();
    let cells_per_block = grid.cells_per_block(n).ok_or_else(|| {
        Error::Incompatible(format!(
            "grid spacing {} does not divide the block length 1/{n}",
            grid.dt()
        ))
    })?;
    if !grid.steps().is_multiple_of(cells_per_block) {
        return Err(Error::Incompatible(format!(
            "horizon {} is not a whole number of blocks of length 1/{n}",
            grid.horizon()
        )));
    }
    let blocks = grid.steps() / cells_per_block;
    let swapped = match family {
        NoiseFamily::McShane { .. } => (0..blocks)
            .map(|k| {
                let a = w.row(k * cells_per_block);
                let b = w.row((k + 1) * cells_per_block);
                (b[0] - a[0]) * (b[1] - a[1]) < 0.0
            })
            .collect(),
        _ => Vec::new(),
    };
    let window_order = match family {
        NoiseFamily::Mollified { kernel } => kernel.order(),
        _ => 1,
    };
    Ok(ApproxPath {
        family: family.clone(),
        w,
        n,
        cells_per_block,
        blocks,
        swapped,
        m_sub: res.m_sub,
        gl: GaussLegendre::new(res.gauss_order),
        window_gl: GaussLegendre::new(window_order),
    })
}

impl<'w> ApproxPath<'w> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.w.dim()
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn block_len(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn cells_per_block(&self) -> usize {
        self.cells_per_block
    }

    pub fn brownian(&self) -> &Path {
        self.w
    }

    pub fn family(&self) -> &NoiseFamily {
        &self.family
    }

    /// Kink times `k/n`, `k = 0..=blocks`.
    pub fn kinks(&self) -> Vec<f64> {
        (0..=self.blocks)
            .map(|k| self.w.grid().node(k * self.cells_per_block))
            .collect()
    }

    pub fn block_start(&self, k: usize) -> f64 {
        self.w.grid().node(k * self.cells_per_block)
    }

    pub fn block_end(&self, k: usize) -> f64 {
        self.w.grid().node((k + 1) * self.cells_per_block)
    }

    /// Index of the block `[k/n, (k+1)/n)` containing `t` (the last block is closed).
    pub fn block_of(&self, t: f64) -> usize {
        let k = (t * self.n as f64).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.blocks - 1)
        }
    }

    /// `W^n_t`.
    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        let k = self.block_of(t);
        self.value_in_block(k, t, out);
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.value_into(t, &mut out);
        out
    }

    /// `W^n_t` using the formula of block `k`; `t` may be either endpoint.
    pub fn value_in_block(&self, k: usize, t: f64, out: &mut [f64]) {
        match &self.family {
            NoiseFamily::PiecewiseShape { shape } => {
                let u = self.local(k, t);
                let fu = shape.value(u);
                let (a, b) = self.block_ends(k);
                for i in 0..out.len() {
                    out[i] = (1.0 - fu) * a[i] + fu * b[i];
                }
            }
            NoiseFamily::McShane { f1, f2 } => {
                let u = self.local(k, t);
                let (a, b) = self.block_ends(k);
                let (g1, g2) = if self.swapped[k] { (f2, f1) } else { (f1, f2) };
                let (v1, v2) = (g1.value(u), g2.value(u));
                out[0] = (1.0 - v1) * a[0] + v1 * b[0];
                out[1] = (1.0 - v2) * a[1] + v2 * b[1];
            }
            NoiseFamily::Mollified { kernel } => self.mollify(kernel, t, false, out),
        }
    }

    /// `d/dt W^n_t` on the open block `k`, extended continuously to its endpoints.
    pub fn derivative_in_block(&self, k: usize, t: f64, out: &mut [f64]) {
        let n = self.n as f64;
        match &self.family {
            NoiseFamily::PiecewiseShape { shape } => {
                let du = n * shape.derivative(self.local(k, t));
                let (a, b) = self.block_ends(k);
                for i in 0..out.len() {
                    out[i] = du * (b[i] - a[i]);
                }
            }
            NoiseFamily::McShane { f1, f2 } => {
                let u = self.local(k, t);
                let (a, b) = self.block_ends(k);
                let (g1, g2) = if self.swapped[k] { (f2, f1) } else { (f1, f2) };
                out[0] = n * g1.derivative(u) * (b[0] - a[0]);
                out[1] = n * g2.derivative(u) * (b[1] - a[1]);
            }
            NoiseFamily::Mollified { kernel } => self.mollify(kernel, t, true, out),
        }
    }

    pub fn derivative_into(&self, t: f64, out: &mut [f64]) {
        self.derivative_in_block(self.block_of(t), t, out);
    }

    /// `W^n` sampled at the nodes of the underlying Brownian grid.
    pub fn on_grid(&self) -> Path {
        let d = self.dim();
        let grid = *self.w.grid();
        let mut values = vec![0.0; (grid.steps() + 1) * d];
        for (j, row) in values.chunks_exact_mut(d).enumerate() {
            let k = (j / self.cells_per_block).min(self.blocks - 1);
            self.value_in_block(k, grid.node(j), row);
        }
        Path::from_values(grid, d, values).expect("shape matches grid")
    }

    fn local(&self, k: usize, t: f64) -> f64 {
        ((t - self.block_start(k)) * self.n as f64).clamp(0.0, 1.0)
    }

    fn block_ends(&self, k: usize) -> (&[f64], &[f64]) {
        (
            self.w.row(k * self.cells_per_block),
            self.w.row((k + 1) * self.cells_per_block),
        )
    }

    /// `∫ W_r ρ_n(s - r) dr` (or with `ρ_n'`) over `r ∈ [max(0, s - 1/n), s]`,
    /// split at the Brownian grid nodes so the integrand is smooth per panel.
    fn mollify(&self, kernel: &MollifierKernel, s: f64, derivative: bool, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let n = self.n as f64;
        let lo = (s - 1.0 / n).max(0.0);
        let hi = s;
        if hi <= lo {
            return;
        }
        let dt = self.w.grid().dt();
        let mut cuts = vec![lo];
        let first = (lo / dt).floor() as usize + 1;
        let mut j = first;
        loop {
            let tj = self.w.grid().node(j.min(self.w.grid().steps()));
            if tj >= hi || j > self.w.grid().steps() {
                break;
            }
            if tj > lo {
                cuts.push(tj);
            }
            j += 1;
        }
        cuts.push(hi);
        let panels = cuts.len() - 1;
        let split = self.m_sub.max(kernel.panels).div_ceil(panels).max(1);
        let scale = if derivative { n * n } else { n };
        for win in cuts.windows(2) {
            let h = (win[1] - win[0]) / split as f64;
            for q in 0..split {
                let a = win[0] + q as f64 * h;
                let b = if q + 1 == split { win[1] } else { a + h };
                for (r, wgt) in self.window_gl.on(a, b) {
                    let u = (n * (s - r)).clamp(0.0, 1.0);
                    let rho = if derivative { kernel.derivative(u) } else { kernel.value(u) };
                    let c = wgt * scale * rho;
                    if c == 0.0 {
                        continue;
                    }
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += c * self.w.interpolate(i, r);
                    }
                }
            }
        }
    }

    /// Quadrature nodes `(t, weight)` over block `k`.
    fn block_nodes(&self, k: usize) -> Vec<(f64, f64)> {
        let a = self.block_start(k);
        let b = self.block_end(k);
        let h = (b - a) / self.m_sub as f64;
        (0..self.m_sub)
            .flat_map(|p| {
                let lo = a + p as f64 * h;
                let hi = if p + 1 == self.m_sub { b } else { lo + h };
                self.gl.on(lo, hi).collect::<Vec<_>>()
            })
            .collect()
    }

    /// `∫_{block k} |d/ds W^n_s| ds`.
    pub fn derivative_variation(&self, k: usize) -> f64 {
        let mut dw = vec![0.0; self.dim()];
        self.block_nodes(k)
            .into_iter()
            .map(|(t, wgt)| {
                self.derivative_in_block(k, t, &mut dw);
                wgt * dw.iter().map(|x| x * x).sum::<f64>().sqrt()
            })
            .sum()
    }

    /// Antisymmetric area matrix
    /// `∫_{block k} (W^{n,i} - o_i) dW^{n,j} - (W^{n,j} - o_j) dW^{n,i}`.
    /// Only `i < j` is integrated; the lower triangle is the exact negation.
    pub fn block_area(&self, k: usize, origin: &[f64]) -> Matrix {
        let d = self.dim();
        let mut upper = Matrix::zeros(d);
        let mut x = vec![0.0; d];
        let mut dx = vec![0.0; d];
        for (t, wgt) in self.block_nodes(k) {
            self.value_in_block(k, t, &mut x);
            self.derivative_in_block(k, t, &mut dx);
            for i in 0..d {
                for j in i + 1..d {
                    upper[(i, j)] += wgt * ((x[i] - origin[i]) * dx[j] - (x[j] - origin[j]) * dx[i]);
                }
            }
        }
        antisymmetrize(upper)
    }

    /// `∫_0^t d/ds W^{n,i}_s (W^{n,j}_t - W^{n,j}_s) ds` over the first `z` blocks, `t = z/n`.
    pub fn forward_product_integral(&self, z: usize) -> Matrix {
        let d = self.dim();
        let mut end = vec![0.0; d];
        self.value_in_block(z - 1, self.block_end(z - 1), &mut end);
        let mut acc = Matrix::zeros(d);
        let mut x = vec![0.0; d];
        let mut dx = vec![0.0; d];
        for k in 0..z {
            for (t, wgt) in self.block_nodes(k) {
                self.value_in_block(k, t, &mut x);
                self.derivative_in_block(k, t, &mut dx);
                for i in 0..d {
                    for j in 0..d {
                        acc[(i, j)] += wgt * dx[i] * (end[j] - x[j]);
                    }
                }
            }
        }
        acc
    }
}

fn antisymmetrize(upper: Matrix) -> Matrix {
    let d = upper.dim();
    let mut m = Matrix::zeros(d);
    for i in 0..d {
        for j in i + 1..d {
            m[(i, j)] = upper[(i, j)];
            m[(j, i)] = -upper[(i, j)];
        }
    }
    m
}

/// `S_ij(t) = (∫_0^t W^i ∘ dW^j - W^j ∘ dW^i) / (2t)` by midpoint sums;
/// `S(0) = 0`.
pub fn levy_area(w: &Path, t: f64) -> Result<Matrix> {
    let d = w.dim();
    let kt = w.grid().index_of(t).ok_or(Error::NotOnGrid(t))?;
    if kt == 0 {
        return Ok(Matrix::zeros(d));
    }
    let mut upper = Matrix::zeros(d);
    for k in 0..kt {
        let a = w.row(k);
        let b = w.row(k + 1);
        for i in 0..d {
            for j in i + 1..d {
                let mi = 0.5 * (a[i] + b[i]);
                let mj = 0.5 * (a[j] + b[j]);
                upper[(i, j)] += mi * (b[j] - a[j]) - mj * (b[i] - a[i]);
            }
        }
    }
    let t = w.grid().node(kt);
    Ok(antisymmetrize(upper).scale(1.0 / (2.0 * t)))
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub sample_count: usize,
}

impl CoefficientEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let (value, standard_error) = mean_and_se(xs);
        Self {
            value,
            standard_error,
            sample_count: xs.len(),
        }
    }

    /// `|value - target| <= k * standard_error`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.standard_error
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateMatrix {
    dim: usize,
    entries: Vec<CoefficientEstimate>,
}

impl EstimateMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> &CoefficientEstimate {
        &self.entries[i * self.dim + j]
    }

    pub fn values(&self) -> Matrix {
        Matrix::from_fn(self.dim, |i, j| self.get(i, j).value)
    }

    fn from_sample_matrices(dim: usize, samples: &[Matrix], skew: bool) -> Self {
        let mut entries = vec![
            CoefficientEstimate {
                value: 0.0,
                standard_error: 0.0,
                sample_count: samples.len(),
            };
            dim * dim
        ];
        for i in 0..dim {
            for j in 0..dim {
                if skew && j <= i {
                    continue;
                }
                let xs: Vec<f64> = samples.iter().map(|m| m[(i, j)]).collect();
                let e = CoefficientEstimate::from_samples(&xs);
                entries[i * dim + j] = e;
                if skew {
                    entries[j * dim + i] = CoefficientEstimate { value: -e.value, ..e };
                }
            }
        }
        Self { dim, entries }
    }
}

fn require_samples(samples: usize) -> Result<()> {
    if samples < 100 {
        return Err(invalid(format!("at least 100 samples are required, got {samples}")));
    }
    Ok(())
}

/// Monte Carlo estimate of `s_ij^n(1/n)`.
///
/// Each sample path covers several blocks; by the shift property every block
/// (re-centred at the Brownian value at its left end) has the law of the
/// first one. The mollified family's first block sees the zero extension
/// for `r < 0`, so its averaging starts at the second block.
pub fn estimate_s(
    family: &NoiseFamily,
    d: usize,
    n: usize,
    samples: usize,
    stream: RngStream,
    res: &Resolution,
) -> Result<EstimateMatrix> {
    require_samples(samples)?;
    family.check_dim(d)?;
    res.validate()?;
    let skip = usize::from(!family.interpolates_nodes());
    let blocks = res.blocks_per_sample + skip;
    let grid = TimeGrid::new(blocks as f64 / n as f64, blocks * res.cells_per_block)?;
    let scale = n as f64 / 2.0 / res.blocks_per_sample as f64;
    let per_sample: Vec<Matrix> = (0..samples as u64)
        .into_par_iter()
        .map(|p| -> Result<Matrix> {
            let w = sample_brownian(&grid, d, stream.fork(p))?;
            let approx = build_approximation(family, &w, n, res)?;
            let mut total = Matrix::zeros(d);
            for k in skip..blocks {
                let origin = w.row(k * res.cells_per_block);
                let a = approx.block_area(k, origin);
                for i in 0..d {
                    for j in 0..d {
                        total[(i, j)] += a[(i, j)];
                    }
                }
            }
            Ok(total.scale(scale))
        })
        .collect::<Result<_>>()?;
    Ok(EstimateMatrix::from_sample_matrices(d, &per_sample, true))
}

/// Monte Carlo estimate of `c_ij^n(t)`; `t` must be a positive multiple of `1/n`.
pub fn estimate_c(
    family: &NoiseFamily,
    d: usize,
    n: usize,
    t: f64,
    samples: usize,
    stream: RngStream,
    res: &Resolution,
) -> Result<EstimateMatrix> {
    require_samples(samples)?;
    family.check_dim(d)?;
    res.validate()?;
    let z = blocks_in(t, n)?;
    let grid = TimeGrid::new(t, z * res.cells_per_block)?;
    let per_sample: Vec<Matrix> = (0..samples as u64)
        .into_par_iter()
        .map(|p| -> Result<Matrix> {
            let w = sample_brownian(&grid, d, stream.fork(p))?;
            let approx = build_approximation(family, &w, n, res)?;
            Ok(approx.forward_product_integral(z).scale(1.0 / t))
        })
        .collect::<Result<_>>()?;
    Ok(EstimateMatrix::from_sample_matrices(d, &per_sample, false))
}

/// Number of blocks of length `1/n` in `t`.
pub fn blocks_in(t: f64, n: usize) -> Result<usize> {
    let z = t * n as f64;
    let zr = z.round();
    if !(t > 0.0) || zr < 1.0 || (z - zr).abs() > 1e-9 * z.max(1.0) {
        return Err(invalid(format!("t = {t} is not a positive multiple of 1/{n}")));
    }
    Ok(zr as usize)
}

/// `(|W^n_{1/n}|^6, (∫_0^{1/n} |d/ds W^n_s| ds)^6)` for one realisation.
pub fn block_moments(approx: &ApproxPath<'_>) -> (f64, f64) {
    let mut x = vec![0.0; approx.dim()];
    approx.value_in_block(0, approx.block_end(0), &mut x);
    let v = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    (v.powi(6), approx.derivative_variation(0).powi(6))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub n: usize,
    pub value_moment: CoefficientEstimate,
    pub variation_moment: CoefficientEstimate,
}

/// Sixth-moment bounds of an approximation family with fitted decay exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    /// Log-log slope of `E|W^n_{1/n}|^6` against `n`.
    pub value_exponent: Option<LineFit>,
    /// Log-log slope of `E(∫|dW^n|)^6` against `n`.
    pub variation_exponent: Option<LineFit>,
}

pub fn check_definition31(
    family: &NoiseFamily,
    d: usize,
    n_list: &[usize],
    samples: usize,
    stream: RngStream,
    res: &Resolution,
) -> Result<MomentReport> {
    require_samples(samples)?;
    family.check_dim(d)?;
    res.validate()?;
    if n_list.is_empty() {
        return Err(invalid("n_list must not be empty"));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for (level, &n) in n_list.iter().enumerate() {
        if n == 0 {
            return Err(invalid("n must be positive"));
        }
        let grid = TimeGrid::new(1.0 / n as f64, res.cells_per_block)?;
        let level_stream = stream.fork(level as u64);
        let pairs: Vec<(f64, f64)> = (0..samples as u64)
            .into_par_iter()
            .map(|p| -> Result<(f64, f64)> {
                let w = sample_brownian(&grid, d, level_stream.fork(p))?;
                let approx = build_approximation(family, &w, n, res)?;
                Ok(block_moments(&approx))
            })
            .collect::<Result<_>>()?;
        let (v, q): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        rows.push(MomentRow {
            n,
            value_moment: CoefficientEstimate::from_samples(&v),
            variation_moment: CoefficientEstimate::from_samples(&q),
        });
    }
    let fit = |sel: fn(&MomentRow) -> f64| -> Option<LineFit> {
        if rows.len() < 2 || rows.iter().any(|r| !(sel(r) > 0.0)) {
            return None;
        }
        let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| sel(r).ln()).collect();
        Some(least_squares(&xs, &ys))
    };
    let value_exponent = fit(|r| r.value_moment.value);
    let variation_exponent = fit(|r| r.variation_moment.value);
    Ok(MomentReport {
        rows,
        value_exponent,
        variation_exponent,
    })
}
