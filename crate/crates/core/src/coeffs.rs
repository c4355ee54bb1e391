//! Drift and diffusion coefficient fields, the smooth drift approximation
//! sequences used for singular drifts, and the Stratonovich correction drift.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::quadrature::GaussLegendre;
use crate::rng::RngStream;
use crate::stats::pairwise_sum;

pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Where a drift field may be nonzero.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    /// Zero outside the axis-aligned box `[lo, hi]`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Integrable with everything outside `[-half_width, half_width]^d`
    /// contributing at most `tail_bound` to the `L^p` norm.
    Truncated { half_width: f64, tail_bound: f64 },
    Unbounded,
}

impl Support {
    fn half_width(&self) -> Option<f64> {
        match self {
            Support::Box { lo, hi } => Some(
                lo.iter()
                    .chain(hi)
                    .fold(0.0f64, |m, v| m.max(v.abs())),
            ),
            Support::Truncated { half_width, .. } => Some(*half_width),
            Support::Unbounded => None,
        }
    }

    fn sample_box(&self, d: usize) -> (Vec<f64>, Vec<f64>) {
        match self {
            Support::Box { lo, hi } => (lo.clone(), hi.clone()),
            Support::Truncated { half_width, .. } => (vec![-half_width; d], vec![*half_width; d]),
            Support::Unbounded => (vec![-10.0; d], vec![10.0; d]),
        }
    }
}

/// Bounds for a `C¹_b` field: `sup |b|` and `sup ‖∇b‖` (Frobenius).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothness {
    pub sup_value: f64,
    pub sup_gradient: f64,
}

impl Smoothness {
    pub fn c1_norm(&self) -> f64 {
        self.sup_value + self.sup_gradient
    }
}

/// A drift `b: R^d -> R^d`.
#[derive(Clone)]
pub struct DriftField {
    name: String,
    dim: usize,
    eval: VectorFn,
    support: Support,
    sup_abs: Option<f64>,
    smoothness: Option<Smoothness>,
}

impl fmt::Debug for DriftField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("support", &self.support)
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

impl DriftField {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        support: Support,
        sup_abs: Option<f64>,
        smoothness: Option<Smoothness>,
        eval: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("drift dimension must be positive"));
        }
        if let Support::Box { lo, hi } = &support {
            if lo.len() != dim || hi.len() != dim || lo.iter().zip(hi).any(|(a, b)| a > b) {
                return Err(invalid("support box does not match the drift dimension"));
            }
        }
        Ok(Self {
            name: name.into(),
            dim,
            eval: Arc::new(eval),
            support,
            sup_abs: sup_abs.or(smoothness.map(|s| s.sup_value)),
            smoothness,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(
            "zero",
            dim,
            Support::Box {
                lo: vec![0.0; dim],
                hi: vec![0.0; dim],
            },
            Some(0.0),
            Some(Smoothness {
                sup_value: 0.0,
                sup_gradient: 0.0,
            }),
            |_, out| out.iter_mut().for_each(|v| *v = 0.0),
        )
        .expect("zero drift is valid")
    }

    /// `b(x) = v` inside `[lo, hi]`, zero outside.
    pub fn constant_on_box(value: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let dim = value.len();
        let sup = value.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (l, h) = (lo.clone(), hi.clone());
        Self::new(
            "constant_on_box",
            dim,
            Support::Box { lo, hi },
            Some(sup),
            None,
            move |x, out| {
                let inside = x.iter().zip(&l).zip(&h).all(|((x, a), b)| *a <= *x && *x <= *b);
                for (o, v) in out.iter_mut().zip(&value) {
                    *o = if inside { *v } else { 0.0 };
                }
            },
        )
    }

    /// `b(x) = v` everywhere (smooth, not integrable).
    pub fn uniform(value: Vec<f64>) -> Self {
        let dim = value.len();
        let sup = value.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self::new(
            "uniform",
            dim,
            Support::Unbounded,
            Some(sup),
            Some(Smoothness {
                sup_value: sup,
                sup_gradient: 0.0,
            }),
            move |_, out| out.copy_from_slice(&value),
        )
        .expect("uniform drift is valid")
    }

    /// `b = 1_{[0,1]}` in one dimension.
    pub fn indicator01() -> Self {
        Self::new(
            "indicator01",
            1,
            Support::Box {
                lo: vec![0.0],
                hi: vec![1.0],
            },
            Some(1.0),
            None,
            |x, out| out[0] = if (0.0..=1.0).contains(&x[0]) { 1.0 } else { 0.0 },
        )
        .expect("indicator drift is valid")
    }

    /// `b_k(x) = exp(-|x|²/2)` for every component.
    pub fn gaussian_bump(dim: usize) -> Self {
        let d = dim as f64;
        Self::new(
            "gaussian_bump",
            dim,
            Support::Truncated {
                half_width: 16.0,
                tail_bound: 1e-50,
            },
            Some(d.sqrt()),
            Some(Smoothness {
                sup_value: d.sqrt(),
                sup_gradient: d.sqrt() * (-0.5f64).exp(),
            }),
            |x, out| {
                let e = (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp();
                out.iter_mut().for_each(|o| *o = e);
            },
        )
        .expect("gaussian bump is valid")
    }

    /// `b_k(x) = sin(x_k) exp(-|x|²/2)`.
    pub fn sin_bump(dim: usize) -> Self {
        let d = dim as f64;
        Self::new(
            "sin_bump",
            dim,
            Support::Truncated {
                half_width: 16.0,
                tail_bound: 1e-50,
            },
            Some(d.sqrt()),
            Some(Smoothness {
                sup_value: d.sqrt(),
                sup_gradient: d.sqrt() * (1.0 + (-0.5f64).exp()),
            }),
            |x, out| {
                let e = (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp();
                for (o, xk) in out.iter_mut().zip(x) {
                    *o = xk.sin() * e;
                }
            },
        )
        .expect("sin bump is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &Support {
        &self.support
    }

    pub fn smoothness(&self) -> Option<Smoothness> {
        self.smoothness
    }

    pub fn sup_abs(&self) -> Option<f64> {
        self.sup_abs
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }

    /// `a - b`, supported on the union of both supports.
    pub fn difference(a: &DriftField, b: &DriftField) -> Result<DriftField> {
        if a.dim != b.dim {
            return Err(invalid("drift dimensions differ"));
        }
        let support = match (&a.support, &b.support) {
            (Support::Box { lo: l1, hi: h1 }, Support::Box { lo: l2, hi: h2 }) => Support::Box {
                lo: l1.iter().zip(l2).map(|(x, y)| x.min(*y)).collect(),
                hi: h1.iter().zip(h2).map(|(x, y)| x.max(*y)).collect(),
            },
            (Support::Unbounded, _) | (_, Support::Unbounded) => Support::Unbounded,
            (s, t) => Support::Truncated {
                half_width: s.half_width().unwrap().max(t.half_width().unwrap()),
                tail_bound: [s, t]
                    .iter()
                    .map(|s| match s {
                        Support::Truncated { tail_bound, .. } => *tail_bound,
                        _ => 0.0,
                    })
                    .sum(),
            },
        };
        let sup_abs = match (a.sup_abs, b.sup_abs) {
            (Some(x), Some(y)) => Some(x + y),
            _ => None,
        };
        let (ea, eb) = (a.eval.clone(), b.eval.clone());
        let d = a.dim;
        DriftField::new(
            format!("({})-({})", a.name, b.name),
            d,
            support,
            sup_abs,
            None,
            move |x, out| {
                let mut tmp = vec![0.0; d];
                ea(x, out);
                eb(x, &mut tmp);
                out.iter_mut().zip(tmp).for_each(|(o, t)| *o -= t);
            },
        )
    }

    /// Checks the declared gradient bound against central differences at
    /// `samples` random points. Returns the largest observed gradient norm.
    pub fn check_smoothness(&self, samples: usize, stream: RngStream) -> Result<f64> {
        let Some(sm) = self.smoothness else {
            return Err(invalid(format!("drift `{}` declares no C¹ bounds", self.name)));
        };
        let (lo, hi) = self.support.sample_box(self.dim);
        let mut rng = stream.rng();
        let d = self.dim;
        let h = 1e-6;
        let mut worst = 0.0f64;
        let (mut xp, mut fp, mut fm) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        for _ in 0..samples {
            let x: Vec<f64> = lo
                .iter()
                .zip(&hi)
                .map(|(a, b)| if a < b { rng.random_range(*a..*b) } else { *a })
                .collect();
            let mut frob = 0.0;
            for l in 0..d {
                xp.copy_from_slice(&x);
                xp[l] += h;
                self.eval_into(&xp, &mut fp);
                xp[l] -= 2.0 * h;
                self.eval_into(&xp, &mut fm);
                frob += fp.iter().zip(&fm).map(|(a, b)| ((a - b) / (2.0 * h)).powi(2)).sum::<f64>();
            }
            worst = worst.max(frob.sqrt());
        }
        if worst > sm.sup_gradient * (1.0 + 1e-3) + 1e-9 {
            return Err(invalid(format!(
                "drift `{}`: observed gradient norm {worst} exceeds declared {}",
                self.name, sm.sup_gradient
            )));
        }
        Ok(worst)
    }
}

/// `(∫ |b|^p dx)^{1/p}` by the composite midpoint rule with `cells_per_axis`
/// cells per axis. The mesh spans the smallest dyadic cube `[-2^m, 2^m]^d`
/// enclosing the support, so jumps at dyadic points fall on cell faces.
pub fn lp_norm(field: &DriftField, p: f64, cells_per_axis: usize) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(invalid(format!("p must be at least 1, got {p}")));
    }
    if cells_per_axis == 0 {
        return Err(invalid("quadrature needs at least one cell"));
    }
    let half = field.support.half_width().ok_or_else(|| {
        Error::InvalidParameter(format!(
            "drift `{}` has unbounded support and no tail bound",
            field.name
        ))
    })?;
    if half == 0.0 {
        return Ok(0.0);
    }
    let r = 2f64.powi(half.log2().ceil() as i32);
    let h = 2.0 * r / cells_per_axis as f64;
    let d = field.dim;
    let inner = u32::try_from(d - 1)
        .ok()
        .and_then(|e| cells_per_axis.checked_pow(e))
        .filter(|n| n.checked_mul(cells_per_axis).is_some())
        .ok_or_else(|| invalid(format!("{cells_per_axis}^{d} quadrature cells overflow")))?;
    let slices: Vec<f64> = (0..cells_per_axis)
        .into_par_iter()
        .map(|i0| {
            let mut x = vec![0.0; d];
            let mut out = vec![0.0; d];
            let mut acc = Vec::with_capacity(inner);
            x[0] = -r + (i0 as f64 + 0.5) * h;
            for mut rest in 0..inner {
                for xl in x.iter_mut().skip(1) {
                    let il = rest % cells_per_axis;
                    rest /= cells_per_axis;
                    *xl = -r + (il as f64 + 0.5) * h;
                }
                field.eval_into(&x, &mut out);
                let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
                acc.push(norm.powf(p));
            }
            pairwise_sum(&acc)
        })
        .collect();
    Ok((pairwise_sum(&slices) * h.powi(d as i32)).powf(1.0 / p))
}

/// `χ(n) = max(2 sqrt(|log n^α|) - 2, 0)`.
pub fn schedule_chi(n: usize, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let l = (alpha * (n as f64).ln()).abs();
    Ok((2.0 * l.sqrt() - 2.0).max(0.0))
}

/// `κ_n = max(sqrt(|log n^α|) / C - 1, 0)`.
pub fn schedule_kappa(n: usize, alpha: f64, c: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    if !(c > 0.0) {
        return Err(invalid(format!("kernel constant must be positive, got {c}")));
    }
    let l = (alpha * (n as f64).ln()).abs();
    Ok((l.sqrt() / c - 1.0).max(0.0))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(())
}

/// Piecewise-linear approximation of `1_{[0,1]}`: ramps of slope `χ/2` on
/// `[-2/χ, 0)` and `(1, 1 + 2/χ]`, one on `[0, 1]`, zero elsewhere.
pub fn ramp_approximation(chi: f64) -> Result<DriftField> {
    if !(chi > 0.0 && chi.is_finite()) {
        return Err(invalid(format!("ramp needs chi > 0, got {chi}")));
    }
    let w = 2.0 / chi;
    DriftField::new(
        format!("ramp[chi={chi}]"),
        1,
        Support::Box {
            lo: vec![-w],
            hi: vec![1.0 + w],
        },
        Some(1.0),
        Some(Smoothness {
            sup_value: 1.0,
            sup_gradient: chi / 2.0,
        }),
        move |x, out| {
            let x = x[0];
            out[0] = if x < -w || x > 1.0 + w {
                0.0
            } else if x < 0.0 {
                chi * x / 2.0 + 1.0
            } else if x > 1.0 {
                -chi * x / 2.0 + (chi + 2.0) / 2.0
            } else {
                1.0
            };
        },
    )
}

/// `∫ |g_κ'|` for the one-dimensional Gaussian density of precision `κ`.
fn gaussian_slope_mass(kappa: f64) -> f64 {
    (2.0 * kappa / PI).sqrt()
}

/// Gaussian convolution `b * g_κ` with the product kernel
/// `g_κ(y) = Π sqrt(κ/2π) exp(-κ y_l² / 2)`, by Gauss-Legendre quadrature
/// split at the edges of the support box.
pub fn mollify_drift(b: &DriftField, kappa: f64) -> Result<DriftField> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(invalid(format!("kappa must be positive, got {kappa}")));
    }
    let Support::Box { lo, hi } = b.support.clone() else {
        return Err(invalid(format!(
            "drift `{}` must have bounded support to be mollified",
            b.name
        )));
    };
    let sup = b
        .sup_abs
        .ok_or_else(|| invalid(format!("drift `{}` declares no sup bound", b.name)))?;
    let d = b.dim;
    let reach = 12.0 / kappa.sqrt();
    let norm = (kappa / (2.0 * PI)).sqrt();
    let gl = GaussLegendre::new(8);
    let inner = b.eval.clone();
    let smooth = Smoothness {
        sup_value: sup,
        sup_gradient: sup * d as f64 * gaussian_slope_mass(kappa),
    };
    let support = Support::Box {
        lo: lo.iter().map(|v| v - reach).collect(),
        hi: hi.iter().map(|v| v + reach).collect(),
    };
    let (blo, bhi) = (lo, hi);
    DriftField::new(
        format!("{}*g[kappa={kappa}]", b.name),
        d,
        support,
        Some(sup),
        Some(smooth),
        move |x, out| {
            // per-axis nodes y_l and weights g(y_l) w_l
            let mut axes: Vec<Vec<(f64, f64)>> = Vec::with_capacity(d);
            for l in 0..d {
                let a = (x[l] - bhi[l]).max(-reach);
                let c = (x[l] - blo[l]).min(reach);
                if a >= c {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    return;
                }
                let panels = ((4.0 * (c - a) * kappa.sqrt()).ceil() as usize).clamp(16, 4096);
                let h = (c - a) / panels as f64;
                let mut nodes = Vec::with_capacity(panels * gl.order());
                for p in 0..panels {
                    let pa = a + p as f64 * h;
                    let pb = if p + 1 == panels { c } else { pa + h };
                    for (y, w) in gl.on(pa, pb) {
                        nodes.push((y, w * norm * (-0.5 * kappa * y * y).exp()));
                    }
                }
                axes.push(nodes);
            }
            out.iter_mut().for_each(|o| *o = 0.0);
            let mut idx = vec![0usize; d];
            let mut z = vec![0.0; d];
            let mut val = vec![0.0; d];
            loop {
                let mut wgt = 1.0;
                for l in 0..d {
                    let (y, w) = axes[l][idx[l]];
                    z[l] = x[l] - y;
                    wgt *= w;
                }
                inner(&z, &mut val);
                for (o, v) in out.iter_mut().zip(&val) {
                    *o += wgt * v;
                }
                let mut l = 0;
                loop {
                    if l == d {
                        return;
                    }
                    idx[l] += 1;
                    if idx[l] < axes[l].len() {
                        break;
                    }
                    idx[l] = 0;
                    l += 1;
                }
            }
        },
    )
}

/// The constant `C` with `sup|b * g_κ| + sup‖∇(b * g_κ)‖ <= C (κ + 1)` for all
/// `κ`, measured from the declared bounds over a log-spaced ladder of `κ`.
pub fn mollifier_constant(b: &DriftField) -> Result<f64> {
    let sup = b
        .sup_abs
        .ok_or_else(|| invalid(format!("drift `{}` declares no sup bound", b.name)))?;
    let d = b.dim as f64;
    let c = (0..=400)
        .map(|k| 10f64.powf(-4.0 + k as f64 * 0.02))
        .chain(std::iter::once(0.0))
        .map(|kappa| sup * (1.0 + d * gaussian_slope_mass(kappa)) / (kappa + 1.0))
        .fold(0.0, f64::max);
    Ok(c.max(f64::MIN_POSITIVE))
}

type IndexFn = Arc<dyn Fn(usize) -> f64 + Send + Sync>;
type DriftGenerator = Arc<dyn Fn(usize) -> Result<DriftField> + Send + Sync>;

/// A sequence `n ↦ b_n` of `C¹_b` drifts approximating `b` in `L^p`, with the
/// bound function `h`, the noise rate `f_n` and the rate parameter `δ`.
#[derive(Clone)]
pub struct DriftApproxSequence {
    name: String,
    base: DriftField,
    p: f64,
    delta: f64,
    base_norm: f64,
    generator: DriftGenerator,
    h: IndexFn,
    noise_rate: IndexFn,
}

impl fmt::Debug for DriftApproxSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftApproxSequence")
            .field("name", &self.name)
            .field("base", &self.base.name)
            .field("p", &self.p)
            .field("delta", &self.delta)
            .finish()
    }
}

impl DriftApproxSequence {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        base: DriftField,
        p: f64,
        delta: f64,
        base_norm: f64,
        generator: impl Fn(usize) -> Result<DriftField> + Send + Sync + 'static,
        h: impl Fn(usize) -> f64 + Send + Sync + 'static,
        noise_rate: impl Fn(usize) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0,1), got {delta}")));
        }
        if !(p >= 1.0) {
            return Err(invalid(format!("p must be at least 1, got {p}")));
        }
        Ok(Self {
            name: name.into(),
            base,
            p,
            delta,
            base_norm,
            generator: Arc::new(generator),
            h: Arc::new(h),
            noise_rate: Arc::new(noise_rate),
        })
    }

    /// `b_n = b` for a drift that is already `C¹_b`, with constant
    /// `h = ‖b‖_{C¹} / ‖b‖_{L^p}` (or 1 for the zero field).
    pub fn identity(base: DriftField, p: f64, delta: f64, base_norm: f64) -> Result<Self> {
        let sm = base.smoothness.ok_or_else(|| {
            invalid(format!("drift `{}` is not C¹_b; choose a smoothing sequence", base.name))
        })?;
        let h = if base_norm > 0.0 { sm.c1_norm() / base_norm } else { 1.0 };
        let b = base.clone();
        Self::new("identity", base, p, delta, base_norm, move |_| Ok(b.clone()), move |_| h, |_| 0.0)
    }

    /// Ramp approximations of `1_{[0,1]}` with `χ(n)` at exponent `α`,
    /// `h(n) = (χ(n) + 2)/2`.
    pub fn ramp(alpha: f64, p: f64, delta: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Self::new(
            format!("ramp({alpha})"),
            DriftField::indicator01(),
            p,
            delta,
            1.0,
            move |n| ramp_approximation(schedule_chi(n, alpha)?),
            move |n| (schedule_chi(n, alpha).unwrap_or(0.0) + 2.0) / 2.0,
            |_| 0.0,
        )
    }

    /// Gaussian mollifications of `1_{[0,1]}` with `κ_n` at exponent `α`,
    /// `h(n) = C (κ_n + 1)`. `κ_n = 0` yields the zero field (the `κ → 0` limit).
    pub fn mollified(alpha: f64, p: f64, delta: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let base = DriftField::indicator01();
        let c = mollifier_constant(&base)?;
        let b = base.clone();
        Self::new(
            format!("mollified({alpha})"),
            base,
            p,
            delta,
            1.0,
            move |n| {
                let kappa = schedule_kappa(n, alpha, c)?;
                if kappa == 0.0 {
                    Ok(DriftField::zero(1))
                } else {
                    mollify_drift(&b, kappa)
                }
            },
            move |n| c * (schedule_kappa(n, alpha, c).unwrap_or(0.0) + 1.0),
            |_| 0.0,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base(&self) -> &DriftField {
        &self.base
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn base_norm(&self) -> f64 {
        self.base_norm
    }

    pub fn approximant(&self, n: usize) -> Result<DriftField> {
        (self.generator)(n)
    }

    pub fn h(&self, n: usize) -> f64 {
        (self.h)(n)
    }

    pub fn noise_rate(&self, n: usize) -> f64 {
        (self.noise_rate)(n)
    }

    /// `‖b_n‖_{C¹} <= h(n) ‖b‖_{L^p}` from the declared metadata of `b_n`.
    pub fn class_bound_holds(&self, n: usize) -> Result<bool> {
        let bn = self.approximant(n)?;
        let sm = bn
            .smoothness
            .ok_or_else(|| invalid(format!("approximant `{}` declares no C¹ bounds", bn.name)))?;
        Ok(sm.c1_norm() <= self.h(n) * self.base_norm * (1.0 + 1e-12))
    }
}

/// Values of the joint noise/drift speed condition along `n_list`.
#[derive(Debug, Clone, PartialEq)]
pub struct HfnReport {
    pub values: Vec<(usize, f64)>,
    /// Last value below the first and below the threshold.
    pub converging: bool,
    /// The last three values strictly decrease.
    pub tail_decreasing: bool,
}

/// `e^{h(n)²‖b‖²} (f_n² + (1 + h(n)²‖b‖²) n^{δ-1})` along `n_list`.
pub fn hfn_values(
    h: impl Fn(usize) -> f64,
    f: impl Fn(usize) -> f64,
    delta: f64,
    norm: f64,
    n_list: &[usize],
    threshold: f64,
) -> Result<HfnReport> {
    if n_list.is_empty() {
        return Err(invalid("n_list must not be empty"));
    }
    let values: Vec<(usize, f64)> = n_list
        .iter()
        .map(|&n| {
            let hb2 = (h(n) * norm).powi(2);
            let fnv = f(n);
            let v = hb2.exp() * (fnv * fnv + (1.0 + hb2) * (n as f64).powf(delta - 1.0));
            (n, v)
        })
        .collect();
    let first = values[0].1;
    let last = values[values.len() - 1].1;
    let converging = last < first && last < threshold;
    let tail = &values[values.len().saturating_sub(3)..];
    let tail_decreasing = tail.len() >= 2 && tail.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(HfnReport {
        values,
        converging,
        tail_decreasing,
    })
}

pub fn check_hfn(seq: &DriftApproxSequence, norm: f64, n_list: &[usize], threshold: f64) -> Result<HfnReport> {
    hfn_values(|n| seq.h(n), |n| seq.noise_rate(n), seq.delta, norm, n_list, threshold)
}

/// A diffusion `σ: R^d -> R^{d×d}` with its gradient and ellipticity constant.
#[derive(Clone)]
pub struct DiffusionField {
    name: String,
    dim: usize,
    sigma: VectorFn,
    grad: VectorFn,
    ellipticity: f64,
}

impl fmt::Debug for DiffusionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("ellipticity", &self.ellipticity)
            .finish()
    }
}

impl DiffusionField {
    /// `sigma` writes `σ_ij` at `i*d + j`; `grad` writes `∂_l σ_ij` at `(i*d + j)*d + l`.
    /// `ellipticity` is the declared `K` (`f64::INFINITY` for degenerate fields).
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        ellipticity: f64,
        sigma: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("diffusion dimension must be positive"));
        }
        if !(ellipticity >= 1.0) {
            return Err(invalid(format!("ellipticity constant must be >= 1, got {ellipticity}")));
        }
        Ok(Self {
            name: name.into(),
            dim,
            sigma: Arc::new(sigma),
            grad: Arc::new(grad),
            ellipticity,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::constant(dim, 1.0)
    }

    /// `σ = s0 I`; `s0 = 0` is allowed and flagged degenerate.
    pub fn constant(dim: usize, s0: f64) -> Self {
        let k = if s0 == 0.0 {
            f64::INFINITY
        } else {
            (s0 * s0).max(1.0 / (s0 * s0))
        };
        Self::new(
            if s0 == 1.0 { "identity".to_string() } else { format!("const({s0})") },
            dim,
            k,
            move |_, out| {
                out.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..dim {
                    out[i * dim + i] = s0;
                }
            },
            |_, out| out.iter_mut().for_each(|v| *v = 0.0),
        )
        .expect("constant diffusion is valid")
    }

    /// `σ(x) = diag(a + b sin x_i)`, elliptic when `a > |b|`.
    pub fn sin_elliptic(dim: usize, a: f64, b: f64) -> Result<Self> {
        if !(a > b.abs()) {
            return Err(invalid(format!("sin_elliptic needs a > |b|, got a={a}, b={b}")));
        }
        let k = (a + b.abs()).powi(2).max(1.0 / (a - b.abs()).powi(2)).max(1.0);
        Self::new(
            format!("sin_elliptic({a},{b})"),
            dim,
            k,
            move |x, out| {
                out.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..dim {
                    out[i * dim + i] = a + b * x[i].sin();
                }
            },
            move |x, out| {
                out.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..dim {
                    out[(i * dim + i) * dim + i] = b * x[i].cos();
                }
            },
        )
    }

    /// `σ(x) = diag(x)`; degenerate, used only as a closed-form oracle.
    pub fn linear(dim: usize) -> Self {
        Self::new(
            "linear",
            dim,
            f64::INFINITY,
            move |x, out| {
                out.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..dim {
                    out[i * dim + i] = x[i];
                }
            },
            move |_, out| {
                out.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..dim {
                    out[(i * dim + i) * dim + i] = 1.0;
                }
            },
        )
        .expect("linear diffusion is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ellipticity(&self) -> f64 {
        self.ellipticity
    }

    pub fn is_elliptic(&self) -> bool {
        self.ellipticity.is_finite()
    }

    #[inline]
    pub fn sigma_into(&self, x: &[f64], out: &mut [f64]) {
        (self.sigma)(x, out)
    }

    #[inline]
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        (self.grad)(x, out)
    }

    pub fn sigma(&self, x: &[f64]) -> Matrix {
        let mut out = vec![0.0; self.dim * self.dim];
        self.sigma_into(x, &mut out);
        Matrix::from_fn(self.dim, |i, j| out[i * self.dim + j])
    }

    /// Largest deviation between `∇σ` and central differences of `σ` over
    /// random points in `[-box, box]^d`; fails above `1e-5`.
    pub fn check_gradient(&self, half_width: f64, samples: usize, stream: RngStream) -> Result<f64> {
        let d = self.dim;
        let mut rng = stream.rng();
        let h = 1e-6;
        let (mut sp, mut sm, mut g) = (vec![0.0; d * d], vec![0.0; d * d], vec![0.0; d * d * d]);
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-half_width..half_width)).collect();
            self.grad_into(&x, &mut g);
            for l in 0..d {
                let mut xp = x.clone();
                xp[l] += h;
                self.sigma_into(&xp, &mut sp);
                xp[l] -= 2.0 * h;
                self.sigma_into(&xp, &mut sm);
                for ij in 0..d * d {
                    let fd = (sp[ij] - sm[ij]) / (2.0 * h);
                    worst = worst.max((fd - g[ij * d + l]).abs());
                }
            }
        }
        if worst > 1e-5 {
            return Err(invalid(format!(
                "diffusion `{}`: gradient disagrees with finite differences by {worst}",
                self.name
            )));
        }
        Ok(worst)
    }
}

/// `(c_ij)` with `c + cᵀ = I`, i.e. `c - I/2` skew-symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionMatrix(Matrix);

impl CorrectionMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        let d = m.dim();
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { 1.0 } else { 0.0 };
                if (m[(i, j)] + m[(j, i)] - target).abs() > 1e-12 {
                    return Err(invalid(format!(
                        "correction matrix violates c_ij + c_ji = δ_ij at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// `c = I/2`, the Stratonovich correction.
    pub fn standard(d: usize) -> Self {
        Self(Matrix::identity(d).scale(0.5))
    }

    /// `c = s + I/2` for a skew-symmetric `s`.
    pub fn from_skew(s: &Matrix) -> Result<Self> {
        let d = s.dim();
        Self::new(Matrix::from_fn(d, |i, j| s[(i, j)] + if i == j { 0.5 } else { 0.0 }))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

/// `out_k = Σ_{i,j,l} c_ij σ_il ∂_l σ_jk` from precomputed `σ` and `∇σ`.
#[inline]
pub fn correction_drift_from(sigma: &[f64], grad: &[f64], c: &Matrix, out: &mut [f64]) {
    let d = c.dim();
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..d {
        for j in 0..d {
            let cij = c[(i, j)];
            if cij == 0.0 {
                continue;
            }
            for l in 0..d {
                let s = cij * sigma[i * d + l];
                if s == 0.0 {
                    continue;
                }
                for (k, o) in out.iter_mut().enumerate() {
                    *o += s * grad[(j * d + k) * d + l];
                }
            }
        }
    }
}

pub fn correction_drift(sigma: &DiffusionField, c: &Matrix, x: &[f64]) -> Vec<f64> {
    let d = sigma.dim();
    let mut s = vec![0.0; d * d];
    let mut g = vec![0.0; d * d * d];
    sigma.sigma_into(x, &mut s);
    sigma.grad_into(x, &mut g);
    let mut out = vec![0.0; d];
    correction_drift_from(&s, &g, c, &mut out);
    out
}

/// Sampled Rayleigh quotients of `σσ*`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticityReport {
    pub min_rayleigh: f64,
    pub max_rayleigh: f64,
    pub estimated_k: f64,
    pub declared_k: f64,
    pub ok: bool,
}

/// Samples `x` uniformly in `[lo, hi]` and unit `ξ` uniformly on the sphere and
/// records `ξᵀσσ*ξ`. Fails when a quotient leaves `[1/K, K]` or `K` is infinite.
pub fn validate_assumptions(
    sigma: &DiffusionField,
    lo: &[f64],
    hi: &[f64],
    samples: usize,
    stream: RngStream,
) -> Result<EllipticityReport> {
    if samples < 100 {
        return Err(invalid(format!("at least 100 samples are required, got {samples}")));
    }
    let d = sigma.dim();
    if lo.len() != d || hi.len() != d {
        return Err(invalid("sample box does not match the diffusion dimension"));
    }
    let mut rng = stream.rng();
    let mut s = vec![0.0; d * d];
    let (mut min_q, mut max_q) = (f64::INFINITY, 0.0f64);
    for _ in 0..samples {
        let x: Vec<f64> = lo
            .iter()
            .zip(hi)
            .map(|(a, b)| if a < b { rng.random_range(*a..*b) } else { *a })
            .collect();
        let mut xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
        xi.iter_mut().for_each(|v| *v /= norm);
        sigma.sigma_into(&x, &mut s);
        // ξᵀσσ*ξ = |σ*ξ|²
        let q: f64 = (0..d)
            .map(|j| (0..d).map(|i| s[i * d + j] * xi[i]).sum::<f64>().powi(2))
            .sum();
        min_q = min_q.min(q);
        max_q = max_q.max(q);
    }
    let declared_k = sigma.ellipticity();
    let estimated_k = if min_q > 0.0 { max_q.max(1.0 / min_q).max(1.0) } else { f64::INFINITY };
    let ok = declared_k.is_finite()
        && min_q >= (1.0 / declared_k) * (1.0 - 1e-9)
        && max_q <= declared_k * (1.0 + 1e-9);
    Ok(EllipticityReport {
        min_rayleigh: min_q,
        max_rayleigh: max_q,
        estimated_k,
        declared_k,
        ok,
    })
}
