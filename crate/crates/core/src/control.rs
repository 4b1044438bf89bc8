//! Markov controls: maps from diffusion-scaled state to the simplex
//! `U = { u >= 0 : sum_i u_i = 1 }`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Tolerance for simplex membership.
pub const SIMPLEX_TOL: f64 = 1e-9;

pub type ControlFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum MarkovControl {
    Constant(Vec<f64>),
    /// Multilinear interpolation of per-lattice-point simplex values, renormalized onto `U`.
    Grid(Arc<GridControl>),
    Closure { dim: usize, f: ControlFn },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridControl {
    pub grid: Grid,
    pub values: Vec<Vec<f64>>,
}

impl MarkovControl {
    pub fn constant(u: Vec<f64>) -> Result<Self> {
        check_simplex(&u)?;
        Ok(Self::Constant(u))
    }

    /// The constant control `e_d`.
    pub fn last_class(d: usize) -> Self {
        Self::Constant(unit(d, d - 1))
    }

    pub fn from_grid(grid: Grid, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} control values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        for u in &values {
            if u.len() != grid.dim() {
                return Err(Error::Dimension("control value has wrong dimension".into()));
            }
            check_simplex(u)?;
        }
        Ok(Self::Grid(Arc::new(GridControl { grid, values })))
    }

    pub fn closure(dim: usize, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self::Closure { dim, f: Arc::new(f) }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Constant(u) => u.len(),
            Self::Grid(g) => g.grid.dim(),
            Self::Closure { dim, .. } => *dim,
        }
    }

    /// Evaluates without checking simplex membership.
    pub fn eval_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Constant(u) => u.clone(),
            Self::Grid(g) => {
                let mut u = vec![0.0; g.grid.dim()];
                for (idx, w) in g.grid.interpolation_weights(x) {
                    for (ui, vi) in u.iter_mut().zip(&g.values[idx]) {
                        *ui += w * vi;
                    }
                }
                renormalize(&mut u);
                u
            }
            Self::Closure { f, .. } => f(x),
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let u = self.eval_unchecked(x);
        if u.len() != self.dim() {
            return Err(Error::Policy(format!(
                "control returned {} components, expected {}",
                u.len(),
                self.dim()
            )));
        }
        check_simplex(&u)?;
        Ok(u)
    }
}

impl fmt::Debug for MarkovControl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(u) => f.debug_tuple("Constant").field(u).finish(),
            Self::Grid(g) => f
                .debug_struct("Grid")
                .field("counts", &g.grid.counts())
                .finish_non_exhaustive(),
            Self::Closure { dim, .. } => f.debug_struct("Closure").field("dim", dim).finish_non_exhaustive(),
        }
    }
}

pub fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut u = vec![0.0; d];
    u[i] = 1.0;
    u
}

pub fn check_simplex(u: &[f64]) -> Result<()> {
    let sum: f64 = u.iter().sum();
    if u.is_empty() || u.iter().any(|&v| !(v >= -SIMPLEX_TOL)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Policy(format!("control value {u:?} is not on the simplex")));
    }
    Ok(())
}

/// Clips negatives and rescales to unit mass; falls back to `e_d` for zero mass.
pub fn renormalize(u: &mut [f64]) {
    u.iter_mut().for_each(|v| *v = v.max(0.0));
    let s: f64 = u.iter().sum();
    if s > 0.0 {
        u.iter_mut().for_each(|v| *v /= s);
    } else {
        let d = u.len();
        u.iter_mut().for_each(|v| *v = 0.0);
        u[d - 1] = 1.0;
    }
}

/// Euclidean projection onto the simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - 1.0) / (j + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_control_validation() {
        assert!(MarkovControl::constant(vec![0.5, 0.5]).is_ok());
        assert!(MarkovControl::constant(vec![0.6, 0.5]).is_err());
        assert!(MarkovControl::constant(vec![1.1, -0.1]).is_err());
    }

    #[test]
    fn closure_off_simplex_is_policy_error() {
        let c = MarkovControl::closure(2, |_| vec![0.7, 0.7]);
        assert!(matches!(c.evaluate(&[0.0, 0.0]), Err(Error::Policy(_))));
    }

    #[test]
    fn projection_lands_on_simplex() {
        for v in [vec![0.2, 0.3], vec![3.0, -1.0, 0.5], vec![-1.0, -2.0]] {
            let p = project_simplex(&v);
            check_simplex(&p).unwrap();
        }
        assert_eq!(project_simplex(&[0.25, 0.75]), vec![0.25, 0.75]);
    }

    #[test]
    fn grid_control_interpolates_on_simplex() {
        let g = Grid::symmetric(&[1.0], &[1.0]).unwrap();
        assert!(MarkovControl::from_grid(g, vec![vec![1.0, 0.0]; 3]).is_err());
        let g2 = Grid::symmetric(&[1.0, 1.0], &[1.0, 1.0]).unwrap();
        let vals: Vec<Vec<f64>> = (0..g2.len())
            .map(|i| if g2.point(i)[0] > 0.0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
            .collect();
        let c = MarkovControl::from_grid(g2, vals).unwrap();
        let u = c.evaluate(&[0.5, 0.2]).unwrap();
        assert!((u[0] - 0.5).abs() < 1e-12);
    }
}
