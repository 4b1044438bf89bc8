//! Discounted and ergodic HJB equations of the limiting diffusion, solved by
//! policy iteration on a Markov-chain approximation with reflecting box boundary.

mod banded;
mod simplex;
mod stencil;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::control::{check_simplex, unit, MarkovControl};
use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::grid::Grid;

use banded::BandedMatrix;
use simplex::Hamiltonian;
use stencil::Stencil;

/// Running cost `c |q|^m` on the queue vector `q = <e,x>^+ u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub c: f64,
    pub m: f64,
}

impl CostSpec {
    pub fn new(c: f64, m: f64) -> Result<Self> {
        if !(c > 0.0) || !(m >= 1.0) || !c.is_finite() || !m.is_finite() {
            return Err(Error::InvalidArgument(format!("cost needs c > 0 and m >= 1, got c = {c}, m = {m}")));
        }
        Ok(Self { c, m })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostModel {
    Power { c: f64, m: f64 },
    /// Test hook: the running cost is `r` everywhere.
    Constant { r: f64 },
    Zero,
}

impl From<CostSpec> for CostModel {
    fn from(s: CostSpec) -> Self {
        Self::Power { c: s.c, m: s.m }
    }
}

impl CostModel {
    pub fn scaled(&self, k: f64) -> Self {
        match *self {
            Self::Power { c, m } => Self::Power { c: k * c, m },
            Self::Constant { r } => Self::Constant { r: k * r },
            Self::Zero => Self::Zero,
        }
    }

    /// Cost at queue-mass `s = <e,x>^+` and proportions `u`.
    pub fn at(&self, s: f64, u: &[f64]) -> f64 {
        match *self {
            Self::Power { c, m } => {
                if s <= 0.0 {
                    return 0.0;
                }
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                c * (s * norm).powf(m)
            }
            Self::Constant { r } => r,
            Self::Zero => 0.0,
        }
    }

    fn grad_u(&self, s: f64, u: &[f64]) -> Vec<f64> {
        match *self {
            Self::Power { c, m } if s > 0.0 => {
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return vec![0.0; u.len()];
                }
                let k = c * m * s.powf(m) * norm.powf(m - 2.0);
                u.iter().map(|v| k * v).collect()
            }
            _ => vec![0.0; u.len()],
        }
    }

    /// `R(x, u) = R~(<e,x>^+ u)`.
    pub fn running(&self, x: &[f64], u: &[f64]) -> f64 {
        self.at(x.iter().sum::<f64>().max(0.0), u)
    }
}

pub fn running_cost(cost: &CostSpec, x: &[f64], u: &[f64]) -> f64 {
    CostModel::from(*cost).running(x, u)
}

/// `H(x, p) = min_u [<b(x,u), p> + R(x,u)]` and a minimizer.
pub fn hamiltonian_minimizer(spec: &DiffusionSpec, cost: &CostModel, x: &[f64], p: &[f64]) -> (Vec<f64>, f64) {
    let d = spec.dim();
    let s = x.iter().sum::<f64>().max(0.0);
    let a: Vec<f64> = (0..d).map(|i| spec.ell()[i] - spec.m()[i] * x[i]).collect();
    let k: Vec<f64> = (0..d).map(|i| (spec.m()[i] - spec.gamma()[i]) * s).collect();
    let ham = Hamiltonian {
        a: &a,
        k: &k,
        p_plus: p,
        p_minus: p,
        cost: |u: &[f64]| cost.at(s, u),
    };
    ham.minimize(s, None, &|u: &[f64]| cost.grad_u(s, u))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Criterion {
    Discounted { theta: f64 },
    Ergodic { rho: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop when the scaled HJB residual falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 500 }
    }
}

/// Value function and argmin control on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridValueFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
    pub criterion: Criterion,
    pub iterations: usize,
    /// Scaled residual `max_x |min_u[L_u V + R] - (theta V or rho)| / scale`.
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub boundary: String,
}

/// JSON-facing summary of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub criterion: Criterion,
    pub value_at_origin: f64,
    pub iterations: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub grid_lo: Vec<f64>,
    pub grid_hi: Vec<f64>,
    pub grid_h: Vec<f64>,
    pub points: usize,
    pub boundary: String,
}

impl GridValueFunction {
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    pub fn value_at_origin(&self) -> f64 {
        self.values[self.grid.origin_index()]
    }

    /// Optimal average cost, for ergodic solves.
    pub fn rho(&self) -> Option<f64> {
        match self.criterion {
            Criterion::Ergodic { rho } => Some(rho),
            Criterion::Discounted { .. } => None,
        }
    }

    pub fn control(&self) -> Result<MarkovControl> {
        MarkovControl::from_grid(self.grid.clone(), self.controls.clone())
    }

    pub fn report(&self) -> SolveReport {
        SolveReport {
            criterion: self.criterion,
            value_at_origin: self.value_at_origin(),
            iterations: self.iterations,
            residual: self.residual,
            residual_history: self.residual_history.clone(),
            grid_lo: self.grid.lo().to_vec(),
            grid_hi: self.grid.hi(),
            grid_h: self.grid.h().to_vec(),
            points: self.grid.len(),
            boundary: self.boundary.clone(),
        }
    }

    /// One row per lattice point: `x_1..x_d, V, u_1..u_d`.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        let d = self.grid.dim();
        let mut header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
        header.push("V".into());
        header.extend((1..=d).map(|i| format!("u_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for idx in 0..self.grid.len() {
            let p = self.grid.point(idx);
            let cells: Vec<String> = p
                .iter()
                .chain(std::iter::once(&self.values[idx]))
                .chain(&self.controls[idx])
                .map(|v| v.to_string())
                .collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Discrete generator `L_u^h` of the approximating chain.
#[derive(Debug, Clone)]
pub struct DiscreteGenerator {
    grid: Grid,
    spec: DiffusionSpec,
    stencil: Stencil,
}

impl DiscreteGenerator {
    pub fn new(spec: &DiffusionSpec, grid: &Grid) -> Result<Self> {
        if grid.dim() != spec.dim() {
            return Err(Error::Dimension(format!("grid has {} axes, diffusion {}", grid.dim(), spec.dim())));
        }
        Ok(Self {
            grid: grid.clone(),
            spec: spec.clone(),
            stencil: Stencil::build(grid, &spec.a())?,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn apply(&self, values: &[f64], idx: usize, u: &[f64]) -> f64 {
        let x = self.grid.point(idx);
        let b = self.spec.drift(&x, u);
        let v0 = values[idx];
        let mut out = self.stencil.diffusion_apply(values, idx);
        self.stencil.drift_moves(idx, &b, |t, r| out += r * (values[t] - v0));
        out
    }

    /// Largest total jump rate over the grid at control `u` (diagnostic).
    pub fn max_rate(&self, u: &[f64]) -> f64 {
        (0..self.grid.len())
            .map(|idx| {
                let b = self.spec.drift(&self.grid.point(idx), u);
                let mut r: f64 = self.stencil.diffusion(idx).map(|(_, r)| r).sum();
                self.stencil.drift_moves(idx, &b, |_, v| r += v);
                r
            })
            .fold(0.0, f64::max)
    }
}

struct Solver<'a> {
    spec: &'a DiffusionSpec,
    cost: &'a CostModel,
    grid: &'a Grid,
    stencil: Stencil,
    s: Vec<f64>,
    a: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
}

enum Mode {
    Discounted(f64),
    Ergodic,
}

impl<'a> Solver<'a> {
    fn new(spec: &'a DiffusionSpec, cost: &'a CostModel, grid: &'a Grid) -> Result<Self> {
        let d = spec.dim();
        if grid.dim() != d {
            return Err(Error::Dimension(format!("grid has {} axes, diffusion {d}", grid.dim())));
        }
        if let CostModel::Power { c, m } = *cost {
            CostSpec::new(c, m)?;
        }
        let stencil = Stencil::build(grid, &spec.a())?;
        let points: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.point(i)).collect();
        let s: Vec<f64> = points.iter().map(|x| x.iter().sum::<f64>().max(0.0)).collect();
        let a = points
            .iter()
            .map(|x| (0..d).map(|i| spec.ell()[i] - spec.m()[i] * x[i]).collect())
            .collect();
        let k = s
            .iter()
            .map(|&s| (0..d).map(|i| (spec.m()[i] - spec.gamma()[i]) * s).collect())
            .collect();
        Ok(Self {
            spec,
            cost,
            grid,
            stencil,
            s,
            a,
            k,
        })
    }

    fn drift(&self, idx: usize, u: &[f64]) -> Vec<f64> {
        (0..u.len()).map(|i| self.a[idx][i] + self.k[idx][i] * u[i]).collect()
    }

    /// Generator matrix rows `L_u` as (idx, [(target, rate)]).
    fn rows(&self, controls: &[Vec<f64>]) -> Vec<Vec<(usize, f64)>> {
        (0..self.grid.len())
            .map(|idx| {
                let mut row: Vec<(usize, f64)> = self.stencil.diffusion(idx).collect();
                let b = self.drift(idx, &controls[idx]);
                self.stencil.drift_moves(idx, &b, |t, r| row.push((t, r)));
                row
            })
            .collect()
    }

    fn evaluate(&self, mode: &Mode, controls: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
        let n = self.grid.len();
        let rows = self.rows(controls);
        let rhs: Vec<f64> = (0..n).map(|i| self.cost.at(self.s[i], &controls[i])).collect();
        let mut mat = BandedMatrix::zeros(n, self.stencil.bandwidth);
        match *mode {
            Mode::Discounted(theta) => {
                for (i, row) in rows.iter().enumerate() {
                    let mut diag = theta;
                    for &(t, r) in row {
                        diag += r;
                        mat.add(i, t, -r);
                    }
                    mat.add(i, i, diag);
                }
                mat.factor()?;
                Ok((mat.solve(&rhs), 0.0))
            }
            Mode::Ergodic => {
                // Unknowns: V with V(x0) = 0, and rho in slot x0. The bordered
                // column of ones is split off as a rank-one update.
                let x0 = self.grid.origin_index();
                let shift = rows[x0].iter().map(|&(_, r)| r).sum::<f64>() + 1.0;
                for (i, row) in rows.iter().enumerate() {
                    let mut diag = 0.0;
                    for &(t, r) in row {
                        diag += r;
                        if t != x0 {
                            mat.add(i, t, -r);
                        }
                    }
                    if i != x0 {
                        mat.add(i, i, diag);
                    }
                }
                mat.add(x0, x0, shift);
                mat.factor()?;
                let y = mat.solve(&rhs);
                let mut col = vec![1.0; n];
                col[x0] -= shift;
                let z = mat.solve(&col);
                let denom = 1.0 + z[x0];
                if denom.abs() < 1e-300 {
                    return Err(Error::Numerical("singular bordered system in ergodic evaluation".into()));
                }
                let coef = y[x0] / denom;
                let mut w: Vec<f64> = y.iter().zip(&z).map(|(a, b)| a - coef * b).collect();
                let rho = w[x0];
                w[x0] = 0.0;
                Ok((w, rho))
            }
        }
    }

    fn solve(&self, mode: Mode, opts: &SolverOptions) -> Result<GridValueFunction> {
        let d = self.spec.dim();
        let n = self.grid.len();
        let mut controls = vec![unit(d, d - 1); n];
        let mut history = Vec::new();
        let mut p_plus = vec![0.0; d];
        let mut p_minus = vec![0.0; d];
        for iter in 1..=opts.max_iter {
            let (values, rho) = self.evaluate(&mode, &controls)?;
            let mut residual: f64 = 0.0;
            let mut scale: f64 = 1.0;
            let mut changed = false;
            for idx in 0..n {
                self.stencil.gradients(&values, idx, &mut p_plus, &mut p_minus);
                let s = self.s[idx];
                let ham = Hamiltonian {
                    a: &self.a[idx],
                    k: &self.k[idx],
                    p_plus: &p_plus,
                    p_minus: &p_minus,
                    cost: |u: &[f64]| self.cost.at(s, u),
                };
                let current = ham.value(&controls[idx]);
                let (u, best) = ham.minimize(s, Some(&controls[idx]), &|u: &[f64]| self.cost.grad_u(s, u));
                let diffusion = self.stencil.diffusion_apply(&values, idx);
                let target = match mode {
                    Mode::Discounted(theta) => theta * values[idx],
                    Mode::Ergodic => rho,
                };
                residual = residual.max((diffusion + best.min(current) - target).abs());
                scale = scale.max(target.abs()).max(self.cost.at(s, &controls[idx]).abs());
                if best < current - 1e-13 * (1.0 + current.abs()) {
                    controls[idx] = u;
                    changed = true;
                }
            }
            let scaled = residual / scale;
            history.push(scaled);
            if scaled < opts.tol || !changed {
                let criterion = match mode {
                    Mode::Discounted(theta) => Criterion::Discounted { theta },
                    Mode::Ergodic => Criterion::Ergodic { rho },
                };
                if scaled >= opts.tol {
                    return Err(Error::NoConvergence {
                        iterations: iter,
                        residual: scaled,
                        history,
                    });
                }
                for u in &controls {
                    check_simplex(u)?;
                }
                return Ok(GridValueFunction {
                    grid: self.grid.clone(),
                    values,
                    controls,
                    criterion,
                    iterations: iter,
                    residual: scaled,
                    residual_history: history,
                    boundary: "reflecting".into(),
                });
            }
        }
        let residual = history.last().copied().unwrap_or(f64::NAN);
        Err(Error::NoConvergence {
            iterations: opts.max_iter,
            residual,
            history,
        })
    }
}

/// `min_u [L_u V + R] = theta V`.
pub fn solve_discounted(
    spec: &DiffusionSpec,
    cost: &CostModel,
    theta: f64,
    grid: &Grid,
    opts: &SolverOptions,
) -> Result<GridValueFunction> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::InvalidArgument(format!("discount rate must be positive, got {theta}")));
    }
    Solver::new(spec, cost, grid)?.solve(Mode::Discounted(theta), opts)
}

/// `min_u [L_u V + R] = rho`, normalized by `V(0) = 0`.
pub fn solve_ergodic(spec: &DiffusionSpec, cost: &CostModel, grid: &Grid, opts: &SolverOptions) -> Result<GridValueFunction> {
    Solver::new(spec, cost, grid)?.solve(Mode::Ergodic, opts)
}

/// Default relative width of the blending annulus.
pub const TRUNCATION_DELTA: f64 = 0.1;

/// Equals `v` on `|x| <= R`, `e_d` on `|x| >= R(1 + delta)`, and blends
/// linearly in `|x|` between.
pub fn epsilon_truncation(v: &MarkovControl, radius: f64, delta: f64) -> Result<MarkovControl> {
    if !(radius > 0.0) || !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "truncation needs R > 0 and delta > 0, got R = {radius}, delta = {delta}"
        )));
    }
    let d = v.dim();
    let inner = v.clone();
    Ok(MarkovControl::closure(d, move |x: &[f64]| {
        let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let w = ((r - radius) / (radius * delta)).clamp(0.0, 1.0);
        let ed = unit(d, d - 1);
        if w >= 1.0 {
            return ed;
        }
        let u = inner.eval_unchecked(x);
        if w <= 0.0 {
            return u;
        }
        u.iter().zip(&ed).map(|(a, b)| (1.0 - w) * a + w * b).collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn spec1() -> DiffusionSpec {
        DiffusionSpec::new(vec![0.0], vec![1.0], vec![0.5], DMatrix::from_element(1, 1, 2.25)).unwrap()
    }

    #[test]
    fn running_cost_examples() {
        let c = CostSpec::new(1.0, 2.0).unwrap();
        assert!((running_cost(&c, &[1.0, 1.0], &[0.5, 0.5]) - 2.0).abs() < 1e-12);
        assert_eq!(running_cost(&c, &[-1.0, 0.5], &[0.5, 0.5]), 0.0);
        let c = CostSpec::new(2.0, 1.0).unwrap();
        assert!((running_cost(&c, &[2.0, 1.0], &[1.0, 0.0]) - 6.0).abs() < 1e-12);
        assert!(CostSpec::new(0.0, 2.0).is_err());
        assert!(CostSpec::new(1.0, 0.5).is_err());
    }

    #[test]
    fn continuous_hamiltonian_examples() {
        let s = DiffusionSpec::new(vec![0.1, 0.2], vec![2.0, 1.0], vec![1.0, 1.0], DMatrix::identity(2, 2)).unwrap();
        let cost = CostModel::Power { c: 1.0, m: 2.0 };
        let (u, _) = hamiltonian_minimizer(&s, &cost, &[0.5, 0.5], &[1.0, 0.0]);
        assert!((u[0] - 0.25).abs() < 1e-9);
        let (u, h) = hamiltonian_minimizer(&s, &cost, &[-0.5, 0.2], &[1.0, 2.0]);
        assert_eq!(u, vec![0.0, 1.0]);
        let expect = (0.1 + 2.0 * 0.5) * 1.0 + (0.2 - 0.2) * 2.0;
        assert!((h - expect).abs() < 1e-12);
        let s1 = spec1();
        let (u, _) = hamiltonian_minimizer(&s1, &cost, &[3.0], &[1.0]);
        assert_eq!(u, vec![1.0]);
    }

    #[test]
    fn constant_hooks() {
        let g = Grid::symmetric(&[4.0], &[0.1]).unwrap();
        let s = spec1();
        let v = solve_discounted(&s, &CostModel::Constant { r: 3.0 }, 2.0, &g, &SolverOptions::default()).unwrap();
        assert!(v.values.iter().all(|x| (x - 1.5).abs() < 1e-10));
        let e = solve_ergodic(&s, &CostModel::Constant { r: 3.0 }, &g, &SolverOptions::default()).unwrap();
        assert!((e.rho().unwrap() - 3.0).abs() < 1e-10);
        assert!(e.values.iter().all(|x| x.abs() < 1e-8));
        let z = solve_discounted(&s, &CostModel::Zero, 1.0, &g, &SolverOptions::default()).unwrap();
        assert!(z.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn truncation_behaviour() {
        let v = MarkovControl::constant(vec![0.3, 0.7]).unwrap();
        let t = epsilon_truncation(&v, 2.0, 0.1).unwrap();
        assert_eq!(t.evaluate(&[1.0, 1.0]).unwrap(), vec![0.3, 0.7]);
        assert_eq!(t.evaluate(&[3.0, 0.0]).unwrap(), vec![0.0, 1.0]);
        let mid = t.evaluate(&[2.1, 0.0]).unwrap();
        assert!((mid[0] - 0.15).abs() < 1e-12);
        let ed = epsilon_truncation(&MarkovControl::last_class(2), 1.0, 0.1).unwrap();
        for x in [[0.0, 0.0], [1.05, 0.0], [5.0, -5.0]] {
            assert_eq!(ed.evaluate(&x).unwrap(), vec![0.0, 1.0]);
        }
    }
}
