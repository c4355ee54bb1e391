//! Named coefficient fields, noise families and tube targets, addressed by
//! field expressions of the form `name` or `name(arg, arg, ...)`.

use std::f64::consts::PI;
use std::fmt;

use crate::coeffs::{lp_norm, DiffusionField, DriftApproxSequence, DriftField};
use crate::error::{Error, Result};
use crate::grid::{Path, TimeGrid};
use crate::noise::{MollifierKernel, NoiseFamily, ShapeFunction};

pub const DRIFTS: &[&str] = &["zero", "indicator01", "gaussian_bump", "sin_bump", "ramp(α)", "mollified(α)"];
pub const DIFFUSIONS: &[&str] = &["identity", "const(s0)", "sin_elliptic(a,b)", "linear"];
pub const SEQUENCES: &[&str] = &["identity", "ramp(α)", "mollified(α)"];
pub const FAMILIES: &[&str] = &["linear", "power(p)", "smoothstep", "sine", "mollified", "mcshane", "mcshane(p1,p2)"];
pub const TARGETS: &[&str] = &["constant", "line(slope)", "sine(amplitude,frequency)"];

/// Default smoothing exponent when a singular drift names no sequence.
pub const DEFAULT_ALPHA: f64 = 0.4;

/// A parsed `name(args)` expression.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldExpr {
    pub name: String,
    pub args: Vec<f64>,
}

impl fmt::Display for FieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if !self.args.is_empty() {
            let args: Vec<String> = self.args.iter().map(|a| a.to_string()).collect();
            write!(f, "({})", args.join(","))?;
        }
        Ok(())
    }
}

fn expr_err(src: &str, msg: impl fmt::Display) -> Error {
    Error::Config(format!("bad field expression `{src}`: {msg}"))
}

/// Parses `ident` or `ident(number, ...)`. Identifiers are `[a-z_][a-z0-9_]*`;
/// arguments are finite decimal numbers. Whitespace is allowed around tokens.
pub fn parse_field_expr(src: &str) -> Result<FieldExpr> {
    let s = src.trim();
    let name_end = s
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_lowercase() || c.is_ascii_digit() || *c == '_'))
        .map_or(s.len(), |(i, _)| i);
    let name = &s[..name_end];
    match name.chars().next() {
        Some(c) if c.is_ascii_lowercase() || c == '_' => {}
        _ => return Err(expr_err(src, "expected a lowercase identifier")),
    }
    let rest = s[name_end..].trim_start();
    if rest.is_empty() {
        return Ok(FieldExpr {
            name: name.to_string(),
            args: Vec::new(),
        });
    }
    let inner = rest
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| expr_err(src, "expected `(args)` after the name"))?;
    if inner.contains(['(', ')']) {
        return Err(expr_err(src, "nested parentheses"));
    }
    let args = inner
        .split(',')
        .map(|tok| {
            let tok = tok.trim();
            if tok.is_empty() || !tok.chars().all(|c| c.is_ascii_digit() || "+-.eE".contains(c)) {
                return Err(expr_err(src, format!("`{tok}` is not a number")));
            }
            match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(expr_err(src, format!("`{tok}` is not a finite number"))),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(FieldExpr {
        name: name.to_string(),
        args,
    })
}

fn arity(e: &FieldExpr, n: usize) -> Result<()> {
    if e.args.len() != n {
        return Err(Error::Config(format!("`{}` takes {n} argument(s), got {}", e.name, e.args.len())));
    }
    Ok(())
}

fn unknown(kind: &str, e: &FieldExpr, known: &[&str]) -> Error {
    Error::Config(format!("unknown {kind} `{}`; known: {}", e.name, known.join(", ")))
}

fn need_dim(e: &FieldExpr, dim: usize, want: usize) -> Result<()> {
    if dim != want {
        return Err(Error::Config(format!("`{}` is only defined in dimension {want}, got {dim}", e.name)));
    }
    Ok(())
}

/// A drift selection: the field itself and, for singular drifts, the
/// smoothing sequence it implies.
#[derive(Debug, Clone)]
pub struct DriftChoice {
    pub field: DriftField,
    pub implied_sequence: Option<FieldExpr>,
}

pub fn drift(src: &str, dim: usize) -> Result<DriftChoice> {
    let e = parse_field_expr(src)?;
    let smooth = |field| DriftChoice {
        field,
        implied_sequence: None,
    };
    match e.name.as_str() {
        "zero" => {
            arity(&e, 0)?;
            Ok(smooth(DriftField::zero(dim)))
        }
        "gaussian_bump" => {
            arity(&e, 0)?;
            Ok(smooth(DriftField::gaussian_bump(dim)))
        }
        "sin_bump" => {
            arity(&e, 0)?;
            Ok(smooth(DriftField::sin_bump(dim)))
        }
        "indicator01" => {
            arity(&e, 0)?;
            need_dim(&e, dim, 1)?;
            Ok(DriftChoice {
                field: DriftField::indicator01(),
                implied_sequence: Some(FieldExpr {
                    name: "ramp".into(),
                    args: vec![DEFAULT_ALPHA],
                }),
            })
        }
        "ramp" | "mollified" => {
            arity(&e, 1)?;
            need_dim(&e, dim, 1)?;
            Ok(DriftChoice {
                field: DriftField::indicator01(),
                implied_sequence: Some(e),
            })
        }
        _ => Err(unknown("drift", &e, DRIFTS)),
    }
}

/// Quadrature cells per axis for norms computed during resolution, about
/// `2^20` cells in total.
pub fn norm_cells(dim: usize) -> usize {
    1usize << (20 / dim.max(1)).clamp(2, 14)
}

pub fn sequence(src: &str, base: &DriftField, p: f64, delta: f64) -> Result<DriftApproxSequence> {
    let e = parse_field_expr(src)?;
    match e.name.as_str() {
        "identity" => {
            arity(&e, 0)?;
            let norm = lp_norm(base, p, norm_cells(base.dim()))?;
            DriftApproxSequence::identity(base.clone(), p, delta, norm)
        }
        "ramp" | "mollified" => {
            arity(&e, 1)?;
            if base.name() != "indicator01" {
                return Err(Error::Config(format!("`{}` sequences approximate indicator01 only", e.name)));
            }
            if e.name == "ramp" {
                DriftApproxSequence::ramp(e.args[0], p, delta)
            } else {
                DriftApproxSequence::mollified(e.args[0], p, delta)
            }
        }
        _ => Err(unknown("sequence", &e, SEQUENCES)),
    }
}

pub fn diffusion(src: &str, dim: usize) -> Result<DiffusionField> {
    let e = parse_field_expr(src)?;
    match e.name.as_str() {
        "identity" => {
            arity(&e, 0)?;
            Ok(DiffusionField::identity(dim))
        }
        "const" => {
            arity(&e, 1)?;
            Ok(DiffusionField::constant(dim, e.args[0]))
        }
        "sin_elliptic" => {
            arity(&e, 2)?;
            DiffusionField::sin_elliptic(dim, e.args[0], e.args[1])
        }
        "linear" => {
            arity(&e, 0)?;
            Ok(DiffusionField::linear(dim))
        }
        _ => Err(unknown("diffusion", &e, DIFFUSIONS)),
    }
}

pub fn family(src: &str) -> Result<NoiseFamily> {
    let e = parse_field_expr(src)?;
    let shape = |shape| NoiseFamily::PiecewiseShape { shape };
    match e.name.as_str() {
        "linear" => {
            arity(&e, 0)?;
            Ok(shape(ShapeFunction::linear()))
        }
        "power" => {
            arity(&e, 1)?;
            Ok(shape(ShapeFunction::power(e.args[0])?))
        }
        "smoothstep" => {
            arity(&e, 0)?;
            Ok(shape(ShapeFunction::smoothstep()))
        }
        "sine" => {
            arity(&e, 0)?;
            Ok(shape(ShapeFunction::sine()))
        }
        "mollified" => {
            arity(&e, 0)?;
            Ok(NoiseFamily::Mollified {
                kernel: MollifierKernel::bump(),
            })
        }
        "mcshane" => match e.args.len() {
            0 => Ok(NoiseFamily::McShane {
                f1: ShapeFunction::linear(),
                f2: ShapeFunction::power(2.0)?,
            }),
            2 => Ok(NoiseFamily::McShane {
                f1: ShapeFunction::power(e.args[0])?,
                f2: ShapeFunction::power(e.args[1])?,
            }),
            k => Err(Error::Config(format!("`mcshane` takes 0 or 2 arguments, got {k}"))),
        },
        _ => Err(unknown("noise family", &e, FAMILIES)),
    }
}

/// A tube target path started at `x0`, applied to every coordinate.
pub fn target(src: &str, x0: &[f64], grid: TimeGrid) -> Result<Path> {
    let e = parse_field_expr(src)?;
    let offset: Box<dyn Fn(f64) -> f64> = match e.name.as_str() {
        "constant" => {
            arity(&e, 0)?;
            Box::new(|_| 0.0)
        }
        "line" => {
            arity(&e, 1)?;
            let a = e.args[0];
            Box::new(move |t| a * t)
        }
        "sine" => {
            arity(&e, 2)?;
            let (a, f) = (e.args[0], e.args[1]);
            Box::new(move |t| a * (2.0 * PI * f * t).sin())
        }
        _ => return Err(unknown("target", &e, TARGETS)),
    };
    Path::from_fn(grid, x0.len(), |t, out| {
        let o = offset(t);
        for (v, x) in out.iter_mut().zip(x0) {
            *v = x + o;
        }
    })
}
