//! Kushner–Dupuis transition rates on a rectangular grid.
//!
//! First derivatives are upwinded, second derivatives centered, and each
//! cross term `a_ij` moves along the diagonal matching its sign. Transitions
//! that would leave the box are dropped (reflection).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    pub d: usize,
    pub inv_h: Vec<f64>,
    /// CSR layout of the control-independent diffusion transitions.
    pub offsets: Vec<usize>,
    pub targets: Vec<usize>,
    pub rates: Vec<f64>,
    /// `plus[idx * d + i]` is the neighbor `idx + e_i`, if any.
    pub plus: Vec<Option<usize>>,
    pub minus: Vec<Option<usize>>,
    pub bandwidth: usize,
}

impl Stencil {
    pub fn build(grid: &Grid, a: &DMatrix<f64>) -> Result<Self> {
        let d = grid.dim();
        if a.nrows() != d || a.ncols() != d {
            return Err(Error::Dimension(format!("diffusion matrix is {}x{}, grid has {d} axes", a.nrows(), a.ncols())));
        }
        let h = grid.h();
        let mut axis_rate = vec![0.0; d];
        for i in 0..d {
            let mut r = a[(i, i)] / (h[i] * h[i]);
            for j in 0..d {
                if j != i {
                    r -= a[(i, j)].abs() / (h[i] * h[j]);
                }
            }
            if r < -1e-12 * (a[(i, i)] / (h[i] * h[i])).abs().max(1.0) {
                return Err(Error::NonMonotoneStencil {
                    axis: i,
                    detail: format!(
                        "a_ii/h_i^2 - sum_j |a_ij|/(h_i h_j) = {r:e}; refine the mesh ratio or reduce correlation"
                    ),
                });
            }
            axis_rate[i] = r.max(0.0);
        }
        let mut cross = Vec::new();
        for i in 0..d {
            for j in i + 1..d {
                let v = a[(i, j)];
                if v != 0.0 {
                    cross.push((i, j, v.signum() as i64, v.abs() / (h[i] * h[j])));
                }
            }
        }
        let n = grid.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut rates = Vec::new();
        let mut plus = Vec::with_capacity(n * d);
        let mut minus = Vec::with_capacity(n * d);
        offsets.push(0);
        for idx in 0..n {
            for i in 0..d {
                let up = grid.neighbor(idx, i, 1);
                let dn = grid.neighbor(idx, i, -1);
                plus.push(up);
                minus.push(dn);
                for nb in [up, dn].into_iter().flatten() {
                    if axis_rate[i] > 0.0 {
                        targets.push(nb);
                        rates.push(axis_rate[i]);
                    }
                }
            }
            for &(i, j, sign, r) in &cross {
                for dir in [1i64, -1] {
                    let first = grid.neighbor(idx, i, dir);
                    if let Some(f) = first {
                        if let Some(t) = grid.neighbor(f, j, dir * sign) {
                            targets.push(t);
                            rates.push(r);
                        }
                    }
                }
            }
            offsets.push(targets.len());
        }
        Ok(Self {
            d,
            inv_h: h.iter().map(|v| 1.0 / v).collect(),
            offsets,
            targets,
            rates,
            plus,
            minus,
            bandwidth: grid.bandwidth(!cross.is_empty()),
        })
    }

    pub fn diffusion(&self, idx: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[idx]..self.offsets[idx + 1];
        self.targets[r.clone()].iter().copied().zip(self.rates[r].iter().copied())
    }

    pub fn diffusion_apply(&self, values: &[f64], idx: usize) -> f64 {
        let v0 = values[idx];
        self.diffusion(idx).map(|(t, r)| r * (values[t] - v0)).sum()
    }

    /// One-sided difference quotients `(p_plus, p_minus)` on each axis; zero where a neighbor is missing.
    pub fn gradients(&self, values: &[f64], idx: usize, p_plus: &mut [f64], p_minus: &mut [f64]) {
        let v0 = values[idx];
        for i in 0..self.d {
            p_plus[i] = self.plus[idx * self.d + i].map_or(0.0, |t| (values[t] - v0) * self.inv_h[i]);
            p_minus[i] = self.minus[idx * self.d + i].map_or(0.0, |t| (v0 - values[t]) * self.inv_h[i]);
        }
    }

    /// Upwind drift transitions `(target, rate)` for drift `b` at `idx`.
    pub fn drift_moves(&self, idx: usize, b: &[f64], mut f: impl FnMut(usize, f64)) {
        for i in 0..self.d {
            if b[i] > 0.0 {
                if let Some(t) = self.plus[idx * self.d + i] {
                    f(t, b[i] * self.inv_h[i]);
                }
            } else if b[i] < 0.0 {
                if let Some(t) = self.minus[idx * self.d + i] {
                    f(t, -b[i] * self.inv_h[i]);
                }
            }
        }
    }
}
