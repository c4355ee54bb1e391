//! The `wz` batch front-end: load a configuration, run one command, write
//! CSV tables and a summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path as FsPath, PathBuf};

use clap::Parser;
use sha2::{Digest, Sha256};

use crate::coeffs::{check_hfn, HfnReport};
use crate::config::{Model, RunConfig};
use crate::error::{Error, Result};
use crate::experiments::{girsanov_check, rate_sweep, stability_sweep, tube_probabilities};
use crate::noise::{check_definition31, estimate_c, estimate_s, EstimateMatrix, NoiseFamily};
use crate::registry;
use crate::rng::RngStream;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Parser)]
#[command(name = "wz", version, about = "Wong-Zakai approximation experiments for SDEs with singular drift")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

/// Process exit status for a run result.
pub fn exit_code(r: &Result<()>) -> i32 {
    match r {
        Ok(()) => 0,
        Err(Error::AbortThreshold { .. }) => 3,
        Err(
            Error::Config(_)
            | Error::InvalidParameter(_)
            | Error::Incompatible(_)
            | Error::GridMismatch(_)
            | Error::NotOnGrid(_),
        ) => 2,
        Err(_) => 1,
    }
}

/// Seed, configuration digest and tool version stamped into every table.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

impl Provenance {
    pub fn new(seed: u64, config_text: &str) -> Self {
        let digest = Sha256::digest(config_text.as_bytes());
        let config_hash = digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Self {
            seed,
            config_hash,
            version: VERSION.to_string(),
        }
    }

    fn line(&self) -> String {
        format!(
            "# seed={}, config_hash={}, version={}\n",
            self.seed, self.config_hash, self.version
        )
    }
}

/// One output table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(file: &str, header: &[&'static str]) -> Self {
        Self {
            file: file.to_string(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self, prov: &Provenance) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let body = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        let mut out = prov.line();
        out.push_str(&String::from_utf8(body).expect("csv output is UTF-8"));
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub tables: Vec<Table>,
    pub summary: String,
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn matrix_rows(table: &mut Table, m: &EstimateMatrix, t: f64, n: usize) {
    for i in 0..m.dim() {
        for j in 0..m.dim() {
            let e = m.get(i, j);
            table.push(vec![
                i.to_string(),
                j.to_string(),
                num(t),
                n.to_string(),
                num(e.value),
                num(e.standard_error),
                e.sample_count.to_string(),
            ]);
        }
    }
}

fn hfn_summary(out: &mut String, r: &HfnReport) {
    let _ = writeln!(out, "noise/drift speed condition along n:");
    for (n, v) in &r.values {
        let _ = writeln!(out, "  n={n}: {v:.6e}");
    }
    let _ = writeln!(
        out,
        "  verdict: {} (tail decreasing: {})",
        if r.converging { "converging" } else { "not converging" },
        r.tail_decreasing
    );
}

/// Runs the configured command and returns its tables and summary without
/// touching the file system.
pub fn execute(cfg: &RunConfig, model: &Model, seed: u64) -> Result<RunOutput> {
    let d = model.solver.dim();
    let stream = RngStream::new(seed, 0);
    let mut summary = String::new();
    let _ = writeln!(summary, "command: {}", cfg.command);
    let _ = writeln!(
        summary,
        "drift: {} | sequence: {} | diffusion: {} | family: {} | d = {d}",
        model.drift.name(),
        model.sequence.name(),
        model.sigma.name(),
        model.family.name()
    );
    for w in &model.warnings {
        let _ = writeln!(summary, "warning: {w}");
    }
    let mut tables = Vec::new();
    match cfg.command.as_str() {
        "coeffs" => {
            let (n, t) = (cfg.coeffs.n, cfg.coeffs.t);
            let c = estimate_c(&model.family, d, n, t, cfg.mc.samples, stream.fork(0), &model.resolution)?;
            let s = estimate_s(&model.family, d, n, cfg.mc.samples, stream.fork(1), &model.resolution)?;
            let header = ["i", "j", "t", "n", "estimate", "stderr", "samples"];
            let mut tc = Table::new("coeffs.csv", &header);
            matrix_rows(&mut tc, &c, t, n);
            let mut ts = Table::new("coeffs_s.csv", &header);
            matrix_rows(&mut ts, &s, 1.0 / n as f64, n);
            let _ = writeln!(summary, "c estimate at n = {n}, t = {t}:");
            for i in 0..d {
                for j in 0..d {
                    let e = c.get(i, j);
                    let _ = writeln!(summary, "  c[{i}][{j}] = {:.5} ± {:.5}", e.value, e.standard_error);
                }
            }
            let _ = writeln!(summary, "s estimate at n = {n}:");
            for i in 0..d {
                for j in (i + 1)..d {
                    let e = s.get(i, j);
                    let _ = writeln!(summary, "  s[{i}][{j}] = {:.5} ± {:.5}", e.value, e.standard_error);
                }
            }
            if let NoiseFamily::McShane { .. } = model.family {
                let _ = writeln!(
                    summary,
                    "  reference: 1/(3 pi) = {:.5} for the (t, t^2) pair; 1/pi = {:.5}",
                    std::f64::consts::FRAC_1_PI / 3.0,
                    std::f64::consts::FRAC_1_PI
                );
            }
            tables.push(tc);
            tables.push(ts);
        }
        "rate-sweep" => {
            let setup = model.coupled_setup();
            let r = rate_sweep(&setup, Some(&model.sequence), &cfg.grid.n_list, cfg.mc.paths, stream, cfg.abort_threshold)?;
            let mut t = Table::new("rate_sweep.csv", &["n", "mse", "stderr", "paths"]);
            for row in &r.rows {
                t.push(vec![row.n.to_string(), num(row.mse), num(row.stderr), row.paths.to_string()]);
            }
            let _ = writeln!(summary, "mse slope vs n: {:.4} ± {:.4} (95%)", r.fit.slope, r.fit.half_width);
            let hfn = check_hfn(&model.sequence, model.sequence.base_norm(), &cfg.grid.n_list, 1.0)?;
            hfn_summary(&mut summary, &hfn);
            tables.push(t);
        }
        "stability" => {
            let grid = model.solver.grid()?;
            let r = stability_sweep(
                &model.drift,
                &model.sequence,
                &model.sigma,
                &model.correction,
                &model.solver.x0,
                &grid,
                &cfg.stability.levels,
                cfg.mc.paths,
                stream,
                cfg.stability.lp_cells,
                cfg.abort_threshold,
            )?;
            let mut t = Table::new("stability.csv", &["level", "lp_distance", "mse", "stderr"]);
            for row in &r.rows {
                t.push(vec![row.level.to_string(), num(row.lp_distance), num(row.mse), num(row.stderr)]);
            }
            match (r.fitted_constant, r.max_ratio) {
                (Some(c), Some(m)) => {
                    let _ = writeln!(summary, "fitted constant C = {c:.5}, max mse/dist^2 = {m:.5}");
                }
                _ => {
                    let _ = writeln!(summary, "all levels have zero L^p distance");
                }
            }
            tables.push(t);
        }
        "tube" => {
            let grid = model.solver.grid()?;
            let targets = cfg
                .tube
                .targets
                .iter()
                .map(|name| Ok((name.clone(), registry::target(name, &model.solver.x0, grid)?)))
                .collect::<Result<Vec<_>>>()?;
            let reports = tube_probabilities(
                &model.drift,
                &model.sigma,
                &model.correction,
                &model.solver.x0,
                &targets,
                &cfg.tube.epsilons,
                cfg.mc.paths,
                stream,
                cfg.abort_threshold,
            )?;
            let mut t = Table::new("tube.csv", &["target", "epsilon", "paths", "hits", "lcb"]);
            for r in &reports {
                t.push(vec![r.target.clone(), num(r.epsilon), r.paths.to_string(), r.hits.to_string(), num(r.lcb)]);
                let _ = writeln!(summary, "{} eps={}: {}/{} hits, lower bound {:.3e}", r.target, r.epsilon, r.hits, r.paths, r.lcb);
            }
            tables.push(t);
        }
        "girsanov-check" => {
            let grid = model.solver.grid()?;
            let r = girsanov_check(&model.drift, &model.sigma, &model.solver.x0, &grid, cfg.mc.paths, stream, cfg.abort_threshold)?;
            let mut t = Table::new("girsanov.csv", &["paths", "mean_rho", "stderr", "max_weight"]);
            t.push(vec![r.paths.to_string(), num(r.mean_rho), num(r.standard_error), num(r.max_weight)]);
            let _ = writeln!(
                summary,
                "mean rho = {:.5} ± {:.5} over {} paths (within 3 SE of 1: {})",
                r.mean_rho,
                r.standard_error,
                r.paths,
                r.mean_one_within(3.0)
            );
            tables.push(t);
        }
        "def31-check" => {
            let r = check_definition31(&model.family, d, &cfg.def31.n_list, cfg.mc.samples, stream, &model.resolution)?;
            let mut t = Table::new("def31.csv", &["n", "moment", "estimate", "stderr", "samples"]);
            for row in &r.rows {
                for (name, e) in [("value6", row.value_moment), ("variation6", row.variation_moment)] {
                    t.push(vec![row.n.to_string(), name.into(), num(e.value), num(e.standard_error), e.sample_count.to_string()]);
                }
            }
            if let Some(f) = r.value_exponent {
                let _ = writeln!(summary, "E|W^n_(1/n)|^6 exponent in n: {:.4}", f.slope);
            }
            if let Some(f) = r.variation_exponent {
                let _ = writeln!(summary, "E(variation over a block)^6 exponent in n: {:.4}", f.slope);
            }
            tables.push(t);
        }
        other => {
            return Err(Error::Config(format!("unknown command `{other}`")));
        }
    }
    Ok(RunOutput { tables, summary })
}

/// Parses, validates, runs and writes artifacts under the output directory.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let text = fs::read_to_string(&cli.config)?;
    let cfg = RunConfig::parse(&text)?;
    let model = cfg.validate()?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let prov = Provenance::new(seed, &text);
    let output = if cli.threads == 0 {
        execute(&cfg, &model, seed)?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(|| execute(&cfg, &model, seed))?
    };
    write_output(&out_dir, &output, &prov)?;
    print!("{}", output.summary);
    Ok(out_dir)
}

pub fn write_output(dir: &FsPath, output: &RunOutput, prov: &Provenance) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in &output.tables {
        fs::write(dir.join(&t.file), t.to_csv(prov)?)?;
    }
    let mut summary = prov.line();
    summary.push_str(&output.summary);
    fs::write(dir.join("summary.txt"), summary)?;
    Ok(())
}

/// Entry point used by the binary; returns the process exit status.
pub fn main_with(cli: &Cli) -> i32 {
    let r = run(cli).map(|_| ());
    if let Err(e) = &r {
        eprintln!("error: {e}");
    }
    exit_code(&r)
}
