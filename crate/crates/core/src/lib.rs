#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
//! Wong-Zakai approximations for SDEs with singular drift.

pub mod cli;
pub mod coeffs;
pub mod config;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod linalg;
pub mod noise;
pub mod quadrature;
pub mod registry;
pub mod rng;
pub mod solvers;
pub mod stats;

pub use error::{Error, Result};
