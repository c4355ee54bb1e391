//! Uniform time grids, sampled paths and the sup-norm distance between them.

use crate::error::{invalid, Error, Result};

/// Uniform grid `t_k = k * T / N`, `k = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("grid horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(invalid("grid needs at least one step"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Time of node `k`; the last node is the horizon exactly.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// Index of the node at time `t`, if `t` is a node up to rounding.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = t / self.dt();
        let k = x.round();
        if k < 0.0 || k > self.steps as f64 {
            return None;
        }
        if (x - k).abs() <= 1e-9 * x.abs().max(1.0) {
            Some(k as usize)
        } else {
            None
        }
    }

    /// Number of grid cells spanned by a block of length `1/n`, if integral.
    pub fn cells_per_block(&self, n: usize) -> Option<usize> {
        if n == 0 {
            return None;
        }
        let r = 1.0 / (n as f64 * self.dt());
        let k = r.round();
        if k >= 1.0 && (r - k).abs() <= 1e-9 * r {
            Some(k as usize)
        } else {
            None
        }
    }

    fn same_as(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps && self.horizon == other.horizon
    }
}

/// A `d`-dimensional trajectory sampled at every node of a [`TimeGrid`].
///
/// Values are stored row-major: row `k` holds the state at `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl Path {
    pub fn from_values(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("path dimension must be positive"));
        }
        if values.len() != (grid.steps() + 1) * dim {
            return Err(invalid(format!(
                "path needs {} rows of dimension {dim}, got {} values",
                grid.steps() + 1,
                values.len()
            )));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Result<Self> {
        Self::from_values(grid, dim, vec![0.0; (grid.steps() + 1) * dim])
    }

    /// Path with `value(t_k)` in row `k`.
    pub fn from_fn(grid: TimeGrid, dim: usize, mut value: impl FnMut(f64, &mut [f64])) -> Result<Self> {
        let mut values = vec![0.0; (grid.steps() + 1) * dim];
        for (k, row) in values.chunks_exact_mut(dim.max(1)).enumerate() {
            value(grid.node(k), row);
        }
        Self::from_values(grid, dim, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.steps() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Values of component `i` along the grid.
    pub fn component(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| r[i])
    }

    pub fn terminal(&self) -> &[f64] {
        self.row(self.grid.steps())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Piecewise-linear interpolation of component `i` at time `t`.
    /// Times before 0 evaluate to 0; times past the horizon clamp to the last node.
    pub fn interpolate(&self, i: usize, t: f64) -> f64 {
        if t <= 0.0 {
            return if t < 0.0 { 0.0 } else { self.row(0)[i] };
        }
        let x = t / self.grid.dt();
        let steps = self.grid.steps();
        if x >= steps as f64 {
            return self.row(steps)[i];
        }
        let k = x.floor() as usize;
        let w = x - k as f64;
        let a = self.values[k * self.dim + i];
        let b = self.values[(k + 1) * self.dim + i];
        a + w * (b - a)
    }

    pub fn scaled(&self, alpha: f64) -> Path {
        Path {
            grid: self.grid,
            dim: self.dim,
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }
}

/// `max_k |a(t_k) - b(t_k)|` in the Euclidean norm.
pub fn sup_distance(a: &Path, b: &Path) -> Result<f64> {
    if !a.grid.same_as(&b.grid) {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", a.grid, b.grid)));
    }
    if a.dim != b.dim {
        return Err(Error::GridMismatch(format!("dimension {} vs {}", a.dim, b.dim)));
    }
    Ok(a.rows()
        .zip(b.rows())
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = TimeGrid::new(1.0, 1).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 1.0]);
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(-1.0, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn last_node_is_horizon() {
        let g = TimeGrid::new(0.7, 3).unwrap();
        assert_eq!(g.node(3), 0.7);
        let nodes = g.nodes();
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn index_lookup() {
        let g = TimeGrid::new(1.0, 64).unwrap();
        assert_eq!(g.index_of(0.5), Some(32));
        assert_eq!(g.index_of(0.51), None);
        assert_eq!(g.cells_per_block(16), Some(4));
        assert_eq!(g.cells_per_block(128), None);
    }

    #[test]
    fn sup_distance_examples() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let a = Path::from_values(g, 1, vec![0.0, 1.0, 0.0]).unwrap();
        let b = Path::from_values(g, 1, vec![0.0, 0.0, 2.0]).unwrap();
        assert_eq!(sup_distance(&a, &b).unwrap(), 2.0);
        assert_eq!(sup_distance(&a, &a).unwrap(), 0.0);

        let p = Path::from_fn(g, 2, |t, x| {
            x[0] = t.sin();
            x[1] = t * t;
        })
        .unwrap();
        let shifted = Path::from_fn(g, 2, |t, x| {
            x[0] = t.sin() + 3.0;
            x[1] = t * t - 4.0;
        })
        .unwrap();
        assert!((sup_distance(&p, &shifted).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sup_distance_rejects_mismatch() {
        let a = Path::zeros(TimeGrid::new(1.0, 2).unwrap(), 1).unwrap();
        let b = Path::zeros(TimeGrid::new(1.0, 3).unwrap(), 1).unwrap();
        assert!(matches!(sup_distance(&a, &b), Err(Error::GridMismatch(_))));
        let c = Path::zeros(TimeGrid::new(1.0, 2).unwrap(), 2).unwrap();
        assert!(sup_distance(&a, &c).is_err());
    }

    fn path_strategy() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, 10)
    }

    proptest! {
        #[test]
        fn sup_distance_is_a_metric(a in path_strategy(), b in path_strategy(), c in path_strategy()) {
            let g = TimeGrid::new(1.0, 4).unwrap();
            let pa = Path::from_values(g, 2, a).unwrap();
            let pb = Path::from_values(g, 2, b).unwrap();
            let pc = Path::from_values(g, 2, c).unwrap();
            let ab = sup_distance(&pa, &pb).unwrap();
            let ba = sup_distance(&pb, &pa).unwrap();
            let bc = sup_distance(&pb, &pc).unwrap();
            let ac = sup_distance(&pa, &pc).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(sup_distance(&pa, &pa).unwrap(), 0.0);
            if pa != pb {
                prop_assert!(ab > 0.0);
            }
        }
    }
}
