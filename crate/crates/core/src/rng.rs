//! Reproducible random streams and Brownian path sampling.
//!
//! Every stream is a ChaCha8 generator keyed by `(master_seed, stream_id)`.
//! Monte Carlo loops assign one stream per path, so the output never depends
//! on how paths are scheduled across worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::grid::{Path, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Child stream `k`. Children of distinct parents get distinct keys, so
    /// nested experiments (levels, then paths) never share randomness.
    pub fn fork(&self, k: u64) -> RngStream {
        let key = splitmix64(self.master_seed ^ splitmix64(self.stream_id.wrapping_add(0xA076_1D64_78BD_642F)));
        RngStream::new(key, k)
    }
}

/// Standard `d`-dimensional Brownian motion on `grid`, started at 0.
pub fn sample_brownian(grid: &TimeGrid, d: usize, stream: RngStream) -> Result<Path> {
    if d == 0 {
        return Err(invalid("Brownian dimension must be positive"));
    }
    let mut rng = stream.rng();
    let sd = grid.dt().sqrt();
    let steps = grid.steps();
    let mut values = vec![0.0; (steps + 1) * d];
    for k in 1..=steps {
        for i in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            values[k * d + i] = values[(k - 1) * d + i] + sd * z;
        }
    }
    Path::from_values(*grid, d, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_and_se;

    #[test]
    fn repeatable() {
        let g = TimeGrid::new(1.0, 1).unwrap();
        let s = RngStream::new(7, 3);
        let a = sample_brownian(&g, 2, s).unwrap();
        let b = sample_brownian(&g, 2, s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.row(0), &[0.0, 0.0]);
        let c = sample_brownian(&g, 2, RngStream::new(7, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forks_are_distinct() {
        let s = RngStream::new(1, 0);
        assert_ne!(s.fork(0), s.fork(1));
        assert_ne!(s.fork(0).fork(0), s.fork(1).fork(0));
        assert_eq!(s.fork(5), s.fork(5));
    }

    #[test]
    fn terminal_moments() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let base = RngStream::new(2024, 0);
        let wt: Vec<f64> = (0..10_000)
            .map(|p| sample_brownian(&g, 1, base.fork(p)).unwrap().terminal()[0])
            .collect();
        let (m, se) = mean_and_se(&wt);
        assert!(m.abs() < 3.0 * se, "mean {m} se {se}");
        let sq: Vec<f64> = wt.iter().map(|w| w * w).collect();
        let (v, se) = mean_and_se(&sq);
        assert!((v - 1.0).abs() < 3.0 * se, "var {v} se {se}");
    }

    #[test]
    fn increment_covariance_is_dt_identity() {
        let g = TimeGrid::new(0.5, 4).unwrap();
        let dt = g.dt();
        let base = RngStream::new(99, 1);
        let paths: Vec<Path> = (0..10_000).map(|p| sample_brownian(&g, 2, base.fork(p)).unwrap()).collect();
        for k in 0..4 {
            for (i, j) in [(0, 0), (1, 1), (0, 1)] {
                let prods: Vec<f64> = paths
                    .iter()
                    .map(|w| (w.row(k + 1)[i] - w.row(k)[i]) * (w.row(k + 1)[j] - w.row(k)[j]))
                    .collect();
                let (m, se) = mean_and_se(&prods);
                let target = if i == j { dt } else { 0.0 };
                assert!((m - target).abs() < 3.0 * se, "k={k} ({i},{j}) {m} vs {target} se {se}");
            }
        }
    }
}
