//! Run configuration: TOML text parsed into `RunConfig` and resolved against
//! the registry into a validated `Model`.

use serde::Deserialize;

use crate::coeffs::{CorrectionMatrix, DiffusionField, DriftApproxSequence, DriftField};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::noise::{NoiseFamily, Resolution};
use crate::registry;
use crate::solvers::{CoupledSetup, SolverConfig};

pub const COMMANDS: &[&str] = &["coeffs", "rate-sweep", "stability", "tube", "girsanov-check", "def31-check"];

/// Largest state dimension accepted from a config file.
pub const MAX_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<String>,
    /// Accept `p < 2` or `p <= d` with a warning.
    #[serde(default)]
    pub allow_p_override: bool,
    #[serde(default = "default_abort")]
    pub abort_threshold: f64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub coeffs: CoeffsConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub tube: TubeConfig,
    #[serde(default)]
    pub def31: Def31Config,
}

fn default_abort() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub drift: String,
    pub diffusion: String,
    pub sequence: Option<String>,
    pub x0: Option<Vec<f64>>,
    pub p: f64,
    pub delta: f64,
    /// Skew part `s` of the correction matrix `c = s + I/2`.
    pub skew: Option<Vec<Vec<f64>>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            drift: "zero".into(),
            diffusion: "identity".into(),
            sequence: None,
            x0: None,
            p: 2.0,
            delta: 0.5,
            skew: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub family: String,
    pub m_sub: usize,
    pub gauss_order: usize,
    pub cells_per_block: usize,
    pub blocks_per_sample: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let r = Resolution::default();
        Self {
            family: "linear".into(),
            m_sub: r.m_sub,
            gauss_order: r.gauss_order,
            cells_per_block: r.cells_per_block,
            blocks_per_sample: r.blocks_per_sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub horizon: f64,
    pub n_ref: usize,
    pub m_ode: usize,
    pub n_list: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            n_ref: 1 << 13,
            m_ode: 16,
            n_list: (4..=9).map(|k| 1 << k).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub paths: usize,
    pub samples: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            paths: 500,
            samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoeffsConfig {
    pub n: usize,
    pub t: f64,
}

impl Default for CoeffsConfig {
    fn default() -> Self {
        Self { n: 32, t: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub levels: Vec<usize>,
    pub lp_cells: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            levels: vec![1 << 4, 1 << 10, 1 << 16],
            lp_cells: 1 << 14,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TubeConfig {
    pub epsilons: Vec<f64>,
    pub targets: Vec<String>,
}

impl Default for TubeConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.25, 0.5, 1.0],
            targets: vec!["constant".into(), "line(1)".into(), "sine(0.3,1)".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Def31Config {
    pub n_list: Vec<usize>,
}

impl Default for Def31Config {
    fn default() -> Self {
        Self { n_list: vec![4, 8, 16, 32] }
    }
}

/// Coefficients and numerics resolved from a validated configuration.
#[derive(Debug, Clone)]
pub struct Model {
    pub drift: DriftField,
    pub sequence: DriftApproxSequence,
    pub sigma: DiffusionField,
    pub correction: CorrectionMatrix,
    pub family: NoiseFamily,
    pub resolution: Resolution,
    pub solver: SolverConfig,
    /// Non-fatal notes (for instance an accepted `p` override).
    pub warnings: Vec<String>,
}

impl Model {
    pub fn coupled_setup(&self) -> CoupledSetup {
        CoupledSetup {
            drift: self.drift.clone(),
            sigma: self.sigma.clone(),
            correction: self.correction.clone(),
            family: self.family.clone(),
            solver: self.solver.clone(),
            resolution: self.resolution,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn resolution(&self) -> Resolution {
        Resolution {
            m_sub: self.noise.m_sub,
            gauss_order: self.noise.gauss_order,
            cells_per_block: self.noise.cells_per_block,
            blocks_per_sample: self.noise.blocks_per_sample,
        }
    }

    /// Checks every invariant and resolves registry names.
    pub fn validate(&self) -> Result<Model> {
        if !COMMANDS.contains(&self.command.as_str()) {
            return Err(cfg_err(format!(
                "unknown command `{}`; expected one of: {}",
                self.command,
                COMMANDS.join(", ")
            )));
        }
        let m = &self.model;
        let d = m.dim;
        if d == 0 || d > MAX_DIM {
            return Err(cfg_err(format!("model.dim must lie in 1..={MAX_DIM}, got {d}")));
        }
        if !(m.delta > 0.0 && m.delta < 1.0) {
            return Err(cfg_err(format!("model.delta must lie in (0,1), got {}", m.delta)));
        }
        let mut warnings = Vec::new();
        if !(m.p >= 1.0 && m.p.is_finite()) {
            return Err(cfg_err(format!("model.p must be a finite number >= 1, got {}", m.p)));
        }
        if m.p < 2.0 || m.p <= d as f64 {
            let msg = format!("model.p = {} violates p >= 2 and p > d = {d}", m.p);
            if !self.allow_p_override {
                return Err(cfg_err(format!("{msg}; set allow_p_override = true to proceed")));
            }
            warnings.push(format!("{msg} (overridden)"));
        }
        if !(0.0..=1.0).contains(&self.abort_threshold) {
            return Err(cfg_err(format!("abort_threshold must lie in [0,1], got {}", self.abort_threshold)));
        }

        let choice = registry::drift(&m.drift, d)?;
        let sigma = registry::diffusion(&m.diffusion, d)?;
        if !sigma.is_elliptic() {
            return Err(cfg_err(format!(
                "diffusion `{}` is not uniformly elliptic and is reserved for oracle tests",
                m.diffusion
            )));
        }
        let seq_src = match (&m.sequence, &choice.implied_sequence) {
            (Some(s), _) => s.clone(),
            (None, Some(e)) => e.to_string(),
            (None, None) => "identity".into(),
        };
        let sequence = registry::sequence(&seq_src, &choice.field, m.p, m.delta)?;
        let family = registry::family(&self.noise.family)?;
        family.check_dim(d)?;
        let resolution = self.resolution();
        resolution.validate()?;

        let correction = match &m.skew {
            None => CorrectionMatrix::standard(d),
            Some(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(cfg_err(format!("model.skew must be a {d}x{d} matrix")));
                }
                CorrectionMatrix::from_skew(&Matrix::from_rows(rows).ok_or_else(|| cfg_err("model.skew is not square"))?)?
            }
        };
        let x0 = m.x0.clone().unwrap_or_else(|| vec![0.0; d]);
        if x0.len() != d {
            return Err(cfg_err(format!("model.x0 has {} entries, expected {d}", x0.len())));
        }
        let g = &self.grid;
        let solver = SolverConfig::new(g.horizon, g.n_ref, g.m_ode, x0)?;

        match self.command.as_str() {
            "rate-sweep" => {
                if g.n_list.len() < 3 {
                    return Err(cfg_err("grid.n_list needs at least 3 levels"));
                }
                for &n in &g.n_list {
                    solver.check_level(n)?;
                }
                self.need_paths()?;
            }
            "stability" => {
                if self.stability.levels.is_empty() || self.stability.lp_cells == 0 {
                    return Err(cfg_err("stability.levels and stability.lp_cells must be nonempty"));
                }
                self.need_paths()?;
            }
            "tube" => {
                if self.tube.targets.is_empty() || self.tube.epsilons.is_empty() {
                    return Err(cfg_err("tube.targets and tube.epsilons must be nonempty"));
                }
                if self.tube.epsilons.iter().any(|e| !(*e > 0.0)) {
                    return Err(cfg_err("tube.epsilons must be positive"));
                }
                if self.mc.paths == 0 {
                    return Err(cfg_err("mc.paths must be positive"));
                }
            }
            "girsanov-check" => self.need_paths()?,
            "coeffs" => {
                crate::noise::blocks_in(self.coeffs.t, self.coeffs.n)?;
                self.need_samples()?;
            }
            "def31-check" => {
                if self.def31.n_list.is_empty() || self.def31.n_list.contains(&0) {
                    return Err(cfg_err("def31.n_list must hold positive levels"));
                }
                self.need_samples()?;
            }
            _ => unreachable!(),
        }

        Ok(Model {
            drift: choice.field,
            sequence,
            sigma,
            correction,
            family,
            resolution,
            solver,
            warnings,
        })
    }

    fn need_paths(&self) -> Result<()> {
        if self.mc.paths < 30 {
            return Err(cfg_err(format!("mc.paths must be at least 30, got {}", self.mc.paths)));
        }
        Ok(())
    }

    fn need_samples(&self) -> Result<()> {
        if self.mc.samples < 100 {
            return Err(cfg_err(format!("mc.samples must be at least 100, got {}", self.mc.samples)));
        }
        Ok(())
    }
}
