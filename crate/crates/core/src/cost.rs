//! Cost functionals along prelimit and diffusion paths, occupation measures,
//! and the optimality-gap study.
//!
//! Every estimator is a fold over holding intervals `[t0, t1)` on which the
//! diffusion-scaled state `x` and the queue proportions `u` are constant. The
//! prelimit chain is piecewise constant, so its integrals are exact; Euler paths
//! use the left-point rule.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{unit, MarkovControl};
use crate::diffusion::{simulate_sde_observed, DiffusionSpec, SdePath};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hjb::{epsilon_truncation, solve_ergodic, CostModel, SolverOptions, TRUNCATION_DELTA};
use crate::model::ModelParams;
use crate::policy::{default_kappa, SchedulingPolicy};
use crate::rng::{stream, stream_index};
use crate::sim::{fluid_point, PathObserver, ScaledTrajectory, Segment, SimOptions, Simulator};
use crate::stats::{Estimate, TimeBatches};

pub const DEFAULT_BATCHES: usize = 20;
pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.1;
pub const DEFAULT_BINS: usize = 64;
pub const DEFAULT_SPREAD: f64 = 6.0;
pub const DEFAULT_SIMPLEX_RES: usize = 8;

/// Receives `(x, u)` held constant on `[t0, t1)`.
pub trait HoldObserver {
    fn hold(&mut self, t0: f64, t1: f64, x: &[f64], u: &[f64]);
}

impl<A: HoldObserver, B: HoldObserver> HoldObserver for (A, B) {
    fn hold(&mut self, t0: f64, t1: f64, x: &[f64], u: &[f64]) {
        self.0.hold(t0, t1, x, u);
        self.1.hold(t0, t1, x, u);
    }
}

impl<T: HoldObserver + ?Sized> HoldObserver for &mut T {
    fn hold(&mut self, t0: f64, t1: f64, x: &[f64], u: &[f64]) {
        (**self).hold(t0, t1, x, u);
    }
}

/// A recorded path that can replay its holding intervals.
pub trait CostPath {
    fn horizon(&self) -> f64;
    fn dim(&self) -> usize;
    fn replay(&self, obs: &mut dyn HoldObserver);
}

/// Queue proportions `q / <e,q>`, or `e_d` when no one waits.
pub fn queue_proportions(q: &[f64]) -> Vec<f64> {
    let total: f64 = q.iter().sum();
    if total > 0.0 {
        q.iter().map(|v| v / total).collect()
    } else {
        unit(q.len(), q.len() - 1)
    }
}

impl CostPath for ScaledTrajectory {
    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn dim(&self) -> usize {
        self.x_hat.first().map_or(0, Vec::len)
    }

    fn replay(&self, obs: &mut dyn HoldObserver) {
        for i in 0..self.times.len() {
            let u = queue_proportions(&self.q_hat[i]);
            obs.hold(self.times[i], self.end_of(i).min(self.horizon), &self.x_hat[i], &u);
        }
    }
}

impl CostPath for SdePath {
    fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    fn replay(&self, obs: &mut dyn HoldObserver) {
        for i in 0..self.times.len().saturating_sub(1) {
            obs.hold(self.times[i], self.times[i + 1], &self.points[i], &self.controls[i]);
        }
    }
}

/// Adapts a [`HoldObserver`] to the prelimit simulator by diffusion-scaling each segment.
pub struct Scaled<O> {
    pub inner: O,
    n: f64,
    scale: f64,
    rho: Vec<f64>,
    x: Vec<f64>,
    q: Vec<f64>,
}

impl<O: HoldObserver> Scaled<O> {
    pub fn new(inner: O, n: u64, beta: f64, rho: &[f64]) -> Self {
        let nf = n as f64;
        Self {
            inner,
            n: nf,
            scale: nf.powf(-beta),
            rho: rho.to_vec(),
            x: vec![0.0; rho.len()],
            q: vec![0.0; rho.len()],
        }
    }

    pub fn for_simulator(inner: O, sim: &Simulator) -> Self {
        let ctx = sim.context();
        Self::new(inner, ctx.n, ctx.beta, &ctx.rho)
    }
}

impl<O: HoldObserver> PathObserver for Scaled<O> {
    fn segment(&mut self, seg: &Segment<'_>) {
        for i in 0..self.rho.len() {
            self.x[i] = self.scale * (seg.x[i] as f64 - self.n * self.rho[i]);
            self.q[i] = self.scale * seg.q[i] as f64;
        }
        let u = queue_proportions(&self.q);
        self.inner.hold(seg.t0, seg.t1, &self.x, &u);
    }
}

/// Exact `int e^{-theta s} R ds` over holding intervals.
#[derive(Debug, Clone)]
pub struct DiscountedAccumulator {
    cost: CostModel,
    theta: f64,
    total: f64,
    max_cost: f64,
    end: f64,
}

impl DiscountedAccumulator {
    pub fn new(cost: CostModel, theta: f64) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::InvalidArgument(format!("discount rate must be positive, got {theta}")));
        }
        Ok(Self {
            cost,
            theta,
            total: 0.0,
            max_cost: 0.0,
            end: 0.0,
        })
    }

    /// Integral so far, after checking the discounted tail beyond the last
    /// interval against `tol / 2`.
    ///
    /// The tail assumes the running cost grows no faster than
    /// `R_max (1 + (s - T)/T)^m` past `T`, where `R_max` is the largest cost seen,
    /// which bounds it by `R_max e^{-theta T} / (theta - m/T)`.
    pub fn finish(&self, tol: f64) -> Result<f64> {
        let t = self.end;
        let tail = discounted_tail(&self.cost, self.theta, t, self.max_cost);
        if !(tail <= 0.5 * tol) {
            return Err(Error::HorizonTooShort {
                horizon: t,
                tail,
                limit: 0.5 * tol,
            });
        }
        Ok(self.total)
    }

    pub fn value(&self) -> f64 {
        self.total
    }
}

fn growth_order(cost: &CostModel) -> f64 {
    match *cost {
        CostModel::Power { m, .. } => m,
        _ => 0.0,
    }
}

/// Tail bound used by [`DiscountedAccumulator::finish`].
pub fn discounted_tail(cost: &CostModel, theta: f64, horizon: f64, max_cost: f64) -> f64 {
    if max_cost == 0.0 {
        return 0.0;
    }
    let m = growth_order(cost);
    if m == 0.0 {
        return max_cost * (-theta * horizon).exp() / theta;
    }
    let rate = theta - m / horizon;
    if !(rate > 0.0) {
        return f64::INFINITY;
    }
    max_cost * (-theta * horizon).exp() / rate
}

impl HoldObserver for DiscountedAccumulator {
    fn hold(&mut self, t0: f64, t1: f64, x: &[f64], u: &[f64]) {
        if t1 <= t0 {
            return;
        }
        let r = self.cost.running(x, u);
        self.max_cost = self.max_cost.max(r);
        let th = self.theta;
        self.total += r * ((-th * t0).exp() - (-th * t1).exp()) / th;
        self.end = self.end.max(t1);
    }
}

pub fn discounted_cost(path: &impl CostPath, cost: &CostModel, theta: f64, tol: f64) -> Result<f64> {
    let mut acc = DiscountedAccumulator::new(*cost, theta)?;
    path.replay(&mut acc);
    acc.finish(tol)
}

/// Averaging window for long-run estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgodicWindow {
    /// Defaults to a tenth of the horizon.
    pub burn_in: Option<f64>,
    pub batches: usize,
}

impl Default for ErgodicWindow {
    fn default() -> Self {
        Self {
            burn_in: None,
            batches: DEFAULT_BATCHES,
        }
    }
}

impl ErgodicWindow {
    pub fn start(&self, horizon: f64) -> f64 {
        self.burn_in.unwrap_or(DEFAULT_BURN_IN_FRACTION * horizon)
    }

    pub fn batches_for(&self, horizon: f64) -> Result<TimeBatches> {
        let start = self.start(horizon);
        if !(horizon > start) {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} does not exceed the burn-in {start}"
            )));
        }
        TimeBatches::new(start, horizon, self.batches)
    }
}

/// Time average of `R` over the window with a batch-means interval.
#[derive(Debug, Clone)]
pub struct ErgodicAccumulator {
    cost: CostModel,
    batches: TimeBatches,
}

impl ErgodicAccumulator {
    pub fn new(cost: CostModel, horizon: f64, window: &ErgodicWindow) -> Result<Self> {
        Ok(Self {
            cost,
            batches: window.batches_for(horizon)?,
        })
    }

    pub fn estimate(&self) -> Estimate {
        self.batches.estimate()
    }
}

impl HoldObserver for ErgodicAccumulator {
    fn hold(&mut self, t0: f64, t1: f64, x: &[f64], u: &[f64]) {
        self.batches.add(t0, t1, self.cost.running(x, u));
    }
}

pub fn ergodic_cost(path: &impl CostPath, cost: &CostModel, window: &ErgodicWindow) -> Result<Estimate> {
    let mut acc = ErgodicAccumulator::new(*cost, path.horizon(), window)?;
    path.replay(&mut acc);
    Ok(acc.estimate())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub order: f64,
    pub estimate: Estimate,
}

/// Time-averaged `|x|^m` (Euclidean norm) for several orders.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    orders: Vec<f64>,
    batches: Vec<TimeBatches>,
}

impl MomentAccumulator {
    pub fn new(orders: &[f64], horizon: f64, window: &ErgodicWindow) -> Result<Self> {
        let batches = orders
            .iter()
            .map(|_| window.batches_for(horizon))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            orders: orders.to_vec(),
            batches,
        })
    }

    pub fn report(&self) -> Vec<MomentEntry> {
        self.orders
            .iter()
            .zip(&self.batches)
            .map(|(&order, b)| MomentEntry {
                order,
                estimate: b.estimate(),
            })
            .collect()
    }
}

impl HoldObserver for MomentAccumulator {
    fn hold(&mut self, t0: f64, t1: f64, x: &[f64], _: &[f64]) {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (m, b) in self.orders.iter().zip(self.batches.iter_mut()) {
            b.add(t0, t1, r.powf(*m));
        }
    }
}

pub fn moment_report(path: &impl CostPath, orders: &[f64], window: &ErgodicWindow) -> Result<Vec<MomentEntry>> {
    let mut acc = MomentAccumulator::new(orders, path.horizon(), window)?;
    path.replay(&mut acc);
    Ok(acc.report())
}

/// Rectangular state bins with one overflow bin at each end of every axis,
/// times the simplex lattice of resolution `1/simplex_res` for controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub bins: usize,
    pub simplex_res: usize,
}

impl Binning {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, bins: usize, simplex_res: usize) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Dimension("binning bounds disagree in dimension".into()));
        }
        if bins == 0 || simplex_res == 0 {
            return Err(Error::InvalidArgument("binning needs at least one bin".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(b > a)) {
            return Err(Error::InvalidArgument(format!("empty binning range {lo:?}..{hi:?}")));
        }
        Ok(Self {
            lo,
            hi,
            bins,
            simplex_res,
        })
    }

    /// Default binning: `DEFAULT_BINS` per axis over the time-weighted mean
    /// plus or minus `DEFAULT_SPREAD` standard deviations of the path.
    pub fn fit(path: &impl CostPath, start: f64) -> Result<Self> {
        let d = path.dim();
        let mut acc = SpreadAccumulator {
            start,
            w: 0.0,
            s1: vec![0.0; d],
            s2: vec![0.0; d],
        };
        path.replay(&mut acc);
        if acc.w <= 0.0 {
            return Err(Error::InvalidArgument("path has no time after the burn-in".into()));
        }
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        for i in 0..d {
            let m = acc.s1[i] / acc.w;
            let sd = (acc.s2[i] / acc.w - m * m).max(0.0).sqrt().max(1e-6);
            lo.push(m - DEFAULT_SPREAD * sd);
            hi.push(m + DEFAULT_SPREAD * sd);
        }
        Self::new(lo, hi, DEFAULT_BINS, DEFAULT_SIMPLEX_RES)
    }

    /// Bin index on `axis`: 0 is the underflow bin, `bins + 1` the overflow bin.
    pub fn state_bin(&self, axis: usize, v: f64) -> usize {
        let (lo, hi) = (self.lo[axis], self.hi[axis]);
        if v < lo {
            0
        } else if v >= hi {
            self.bins + 1
        } else {
            1 + (((v - lo) / (hi - lo) * self.bins as f64) as usize).min(self.bins - 1)
        }
    }

    /// Centre of a regular bin; edge bins report their finite edge.
    pub fn bin_center(&self, axis: usize, idx: usize) -> f64 {
        let (lo, hi) = (self.lo[axis], self.hi[axis]);
        let w = (hi - lo) / self.bins as f64;
        match idx {
            0 => lo,
            i if i > self.bins => hi,
            i => lo + (i as f64 - 0.5) * w,
        }
    }

    /// Nearest point of the lattice `{k / res : sum k = res}` (largest-remainder rounding).
    pub fn simplex_cell(&self, u: &[f64]) -> Vec<usize> {
        let res = self.simplex_res;
        let scaled: Vec<f64> = u.iter().map(|v| v.max(0.0) * res as f64).collect();
        let mut k: Vec<usize> = scaled.iter().map(|v| v.floor() as usize).collect();
        let used: usize = k.iter().sum();
        let mut order: Vec<usize> = (0..u.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = scaled[a] - scaled[a].floor();
            let fb = scaled[b] - scaled[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        if used <= res {
            for &i in order.iter().take(res - used) {
                k[i] += 1;
            }
        } else {
            let mut extra = used - res;
            for &i in order.iter().rev() {
                while extra > 0 && k[i] > 0 {
                    k[i] -= 1;
                    extra -= 1;
                }
            }
        }
        k
    }
}

struct SpreadAccumulator {
    start: f64,
    w: f64,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl HoldObserver for SpreadAccumulator {
    fn hold(&mut self, t0: f64, t1: f64, x: &[f64], _: &[f64]) {
        let dt = t1 - t0.max(self.start);
        if dt <= 0.0 {
            return;
        }
        self.w += dt;
        for (i, v) in x.iter().enumerate() {
            self.s1[i] += dt * v;
            self.s2[i] += dt * v * v;
        }
    }
}

/// One occupied `(state bin, control lattice point)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub state: Vec<usize>,
    pub control: Vec<usize>,
    pub mass: f64,
    /// Occupation-weighted mean state and control inside the cell.
    pub x_mean: Vec<f64>,
    pub u_mean: Vec<f64>,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
}

/// Occupation-time histogram of `(x, u)` normalized by the window length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub binning: Binning,
    pub start: f64,
    pub horizon: f64,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinnedIntegral {
    pub value: f64,
    /// Bound on the gap to the exact path integral caused by binning.
    pub error_bound: f64,
}

impl EmpiricalMeasure {
    pub fn total_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.mass).sum()
    }

    /// Mass per bin on `axis`, including both overflow bins.
    pub fn state_marginal(&self, axis: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.binning.bins + 2];
        for c in &self.cells {
            out[c.state[axis]] += c.mass;
        }
        out
    }

    /// `int R dzeta` using the within-cell mean of `(x, u)`. The bound brackets
    /// `R` over each cell's observed bounding box.
    pub fn integrate(&self, cost: &CostModel) -> BinnedIntegral {
        let mut value = 0.0;
        let mut err = 0.0;
        for c in &self.cells {
            value += c.mass * cost.running(&c.x_mean, &c.u_mean);
            if let CostModel::Power { .. } = cost {
                let d = c.u_lo.len() as f64;
                let s_hi = c.x_hi.iter().sum::<f64>().max(0.0);
                let s_lo = c.x_lo.iter().sum::<f64>().max(0.0);
                let nu_hi = c.u_hi.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nu_lo = c.u_lo.iter().map(|v| v * v).sum::<f64>().sqrt().max(d.sqrt().recip());
                let upper = cost.at(s_hi, &[nu_hi]);
                let lower = cost.at(s_lo, &[nu_lo]);
                err += c.mass * (upper - lower).max(0.0);
            }
        }
        BinnedIntegral {
            value,
            error_bound: err,
        }
    }
}

struct MeasureBuilder {
    binning: Binning,
    start: f64,
    cells: BTreeMap<(Vec<usize>, Vec<usize>), Cell>,
}

impl HoldObserver for MeasureBuilder {
    fn hold(&mut self, t0: f64, t1: f64, x: &[f64], u: &[f64]) {
        let dt = t1 - t0.max(self.start);
        if dt <= 0.0 {
            return;
        }
        let state: Vec<usize> = x.iter().enumerate().map(|(i, &v)| self.binning.state_bin(i, v)).collect();
        let control = self.binning.simplex_cell(u);
        let cell = self.cells.entry((state.clone(), control.clone())).or_insert_with(|| Cell {
            state,
            control,
            mass: 0.0,
            x_mean: vec![0.0; x.len()],
            u_mean: vec![0.0; u.len()],
            x_lo: x.to_vec(),
            x_hi: x.to_vec(),
            u_lo: u.to_vec(),
            u_hi: u.to_vec(),
        });
        cell.mass += dt;
        for i in 0..x.len() {
            cell.x_mean[i] += dt * x[i];
            cell.x_lo[i] = cell.x_lo[i].min(x[i]);
            cell.x_hi[i] = cell.x_hi[i].max(x[i]);
        }
        for i in 0..u.len() {
            cell.u_mean[i] += dt * u[i];
            cell.u_lo[i] = cell.u_lo[i].min(u[i]);
            cell.u_hi[i] = cell.u_hi[i].max(u[i]);
        }
    }
}

/// Occupation measure of `(x, u)` over `[start, T]`.
pub fn mean_empirical_measure(path: &impl CostPath, start: f64, binning: &Binning) -> Result<EmpiricalMeasure> {
    let horizon = path.horizon();
    if !(horizon > start) {
        return Err(Error::InvalidArgument(format!(
            "window [{start}, {horizon}] is empty"
        )));
    }
    if binning.lo.len() != path.dim() {
        return Err(Error::Dimension("binning and path dimensions differ".into()));
    }
    let mut b = MeasureBuilder {
        binning: binning.clone(),
        start,
        cells: BTreeMap::new(),
    };
    path.replay(&mut b);
    let total: f64 = b.cells.values().map(|c| c.mass).sum();
    let cells = b
        .cells
        .into_values()
        .map(|mut c| {
            for v in c.x_mean.iter_mut().chain(c.u_mean.iter_mut()) {
                *v /= c.mass;
            }
            c.mass /= total;
            c
        })
        .collect();
    Ok(EmpiricalMeasure {
        binning: binning.clone(),
        start,
        horizon,
        cells,
    })
}

/// Time-weighted samples `(x_axis, dt)` of the path after `start`: the exact
/// state marginal of the occupation measure before binning.
pub fn occupation_samples(path: &impl CostPath, axis: usize, start: f64) -> Vec<(f64, f64)> {
    struct Collect {
        axis: usize,
        start: f64,
        out: Vec<(f64, f64)>,
    }
    impl HoldObserver for Collect {
        fn hold(&mut self, t0: f64, t1: f64, x: &[f64], _: &[f64]) {
            let dt = t1 - t0.max(self.start);
            if dt > 0.0 {
                self.out.push((x[self.axis], dt));
            }
        }
    }
    let mut c = Collect {
        axis,
        start,
        out: Vec::new(),
    };
    path.replay(&mut c);
    c.out
}

/// Wasserstein-1 distance between two equally weighted empirical laws on the line.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    let wa: Vec<(f64, f64)> = a.iter().map(|&v| (v, 1.0)).collect();
    let wb: Vec<(f64, f64)> = b.iter().map(|&v| (v, 1.0)).collect();
    wasserstein1_weighted(&wa, &wb)
}

/// `int |F_a - F_b| dx` for weighted samples `(value, weight)`; weights are normalized.
pub fn wasserstein1_weighted(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let norm = |s: &[(f64, f64)]| {
        let total: f64 = s.iter().map(|p| p.1).sum();
        let mut v: Vec<(f64, f64)> = s.iter().map(|&(x, w)| (x, w / total)).collect();
        v.sort_by(|p, q| p.0.total_cmp(&q.0));
        v
    };
    let a = norm(a);
    let b = norm(b);
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut prev = a[0].0.min(b[0].0);
    let mut dist = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => unreachable!(),
        };
        dist += (fa - fb).abs() * (next - prev);
        while i < a.len() && a[i].0 == next {
            fa += a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 == next {
            fb += b[j].1;
            j += 1;
        }
        prev = next;
    }
    dist
}

/// Runs `f(rep)` for every replication in parallel and collects in order.
pub fn replicate<T: Send>(reps: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..reps).into_par_iter().map(|r| f(r)).collect()
}

/// Stream tags for the built-in replicated estimators.
pub mod tags {
    pub const DISCOUNTED_PRELIMIT: u16 = 11;
    pub const DISCOUNTED_SDE: u16 = 12;
    pub const ERGODIC_PRELIMIT: u16 = 13;
    pub const ERGODIC_SDE: u16 = 14;
    pub const GAP: u16 = 15;
}

fn check_reps(reps: usize) -> Result<()> {
    if reps == 0 {
        return Err(Error::InvalidArgument("at least one replication is required".into()));
    }
    Ok(())
}

/// Replication-averaged discounted cost of the prelimit chain from `x0`.
#[allow(clippy::too_many_arguments)]
pub fn discounted_cost_prelimit(
    sim: &Simulator,
    x0: &[u64],
    cost: &CostModel,
    theta: f64,
    horizon: f64,
    tol: f64,
    reps: usize,
    seed: u64,
) -> Result<Estimate> {
    check_reps(reps)?;
    let values = replicate(reps, |r| {
        let mut rng = stream(seed, stream_index(tags::DISCOUNTED_PRELIMIT, 0, r as u32));
        let mut obs = Scaled::for_simulator(DiscountedAccumulator::new(*cost, theta)?, sim);
        sim.run(horizon, x0, &mut rng, &SimOptions::default(), &mut obs)?;
        obs.inner.finish(tol)
    })?;
    Ok(Estimate::from_samples(&values))
}

/// Replication-averaged discounted cost of the Euler scheme from `x0`.
#[allow(clippy::too_many_arguments)]
pub fn discounted_cost_sde(
    spec: &DiffusionSpec,
    control: &MarkovControl,
    x0: &[f64],
    cost: &CostModel,
    theta: f64,
    horizon: f64,
    dt: f64,
    tol: f64,
    reps: usize,
    seed: u64,
) -> Result<Estimate> {
    check_reps(reps)?;
    let values = replicate(reps, |r| {
        let mut rng = stream(seed, stream_index(tags::DISCOUNTED_SDE, 0, r as u32));
        let mut acc = DiscountedAccumulator::new(*cost, theta)?;
        simulate_sde_observed(spec, control, x0, horizon, dt, &mut rng, |t, h, x, u| acc.hold(t, t + h, x, u))?;
        acc.finish(tol)
    })?;
    Ok(Estimate::from_samples(&values))
}

/// Long-run average cost of the prelimit chain. With several replications the
/// interval comes from the per-replication time averages, with one from batch means.
#[allow(clippy::too_many_arguments)]
pub fn ergodic_cost_prelimit(
    sim: &Simulator,
    x0: &[u64],
    cost: &CostModel,
    horizon: f64,
    window: &ErgodicWindow,
    reps: usize,
    seed: u64,
    slot: u16,
) -> Result<Estimate> {
    check_reps(reps)?;
    let per_rep = replicate(reps, |r| {
        let mut rng = stream(seed, stream_index(tags::ERGODIC_PRELIMIT, slot, r as u32));
        let mut obs = Scaled::for_simulator(ErgodicAccumulator::new(*cost, horizon, window)?, sim);
        sim.run(horizon, x0, &mut rng, &SimOptions::default(), &mut obs)?;
        Ok(obs.inner.estimate())
    })?;
    Ok(combine(&per_rep))
}

/// Long-run average cost of the Euler scheme.
#[allow(clippy::too_many_arguments)]
pub fn ergodic_cost_sde(
    spec: &DiffusionSpec,
    control: &MarkovControl,
    x0: &[f64],
    cost: &CostModel,
    horizon: f64,
    dt: f64,
    window: &ErgodicWindow,
    reps: usize,
    seed: u64,
) -> Result<Estimate> {
    check_reps(reps)?;
    let per_rep = replicate(reps, |r| {
        let mut rng = stream(seed, stream_index(tags::ERGODIC_SDE, 0, r as u32));
        let mut acc = ErgodicAccumulator::new(*cost, horizon, window)?;
        simulate_sde_observed(spec, control, x0, horizon, dt, &mut rng, |t, h, x, u| acc.hold(t, t + h, x, u))?;
        Ok(acc.estimate())
    })?;
    Ok(combine(&per_rep))
}

fn combine(per_rep: &[Estimate]) -> Estimate {
    if per_rep.len() == 1 {
        return per_rep[0];
    }
    let means: Vec<f64> = per_rep.iter().map(|e| e.mean).collect();
    Estimate::from_samples(&means)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapConfig {
    pub n_list: Vec<u64>,
    pub horizon: f64,
    pub reps: usize,
    pub seed: u64,
    pub window: ErgodicWindow,
    /// Radius beyond which the solver control is blended into `e_d`.
    pub truncation_radius: f64,
    pub truncation_delta: f64,
    /// Defaults to `0.9 min rho`.
    pub kappa: Option<f64>,
    pub solver: SolverOptions,
}

impl GapConfig {
    pub fn new(n_list: Vec<u64>, horizon: f64, reps: usize, seed: u64, truncation_radius: f64) -> Self {
        Self {
            n_list,
            horizon,
            reps,
            seed,
            window: ErgodicWindow::default(),
            truncation_radius,
            truncation_delta: TRUNCATION_DELTA,
            kappa: None,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub n: u64,
    /// Simulated long-run cost of the tested policy: an upper bound on the
    /// optimal prelimit value up to Monte Carlo error.
    pub cost: Estimate,
    pub gap: f64,
    pub half_width: f64,
    /// `gap >= -2 * half_width`.
    pub lower_bound_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapTable {
    /// Lower side: the diffusion optimum on the truncated grid.
    pub rho_star: f64,
    pub solver_residual: f64,
    pub policy: String,
    pub rows: Vec<GapRow>,
    /// Point-estimate gaps never increase along `n_list`.
    pub nonincreasing: bool,
    pub lower_bound_ok: bool,
    pub note: String,
}

/// Solves the ergodic problem, maps its truncated control to the prelimit
/// through the omega rounding, and simulates the resulting long-run cost for
/// every `n`. The optimal prelimit value is only bracketed: below by
/// `rho_star`, above by the simulated cost of this one policy.
pub fn optimality_gap(params: &ModelParams, cost: &CostModel, grid: &Grid, cfg: &GapConfig) -> Result<GapTable> {
    if cfg.n_list.is_empty() {
        return Err(Error::InvalidArgument("n_list is empty".into()));
    }
    let dq = params.derive()?;
    let spec = DiffusionSpec::from_derived(&dq)?;
    let solved = solve_ergodic(&spec, cost, grid, &cfg.solver)?;
    let rho_star = solved.rho().expect("ergodic solve reports rho");
    let control = epsilon_truncation(&solved.control()?, cfg.truncation_radius, cfg.truncation_delta)?;
    let kappa = cfg.kappa.unwrap_or_else(|| default_kappa(&dq.rho));
    let mut rows = Vec::with_capacity(cfg.n_list.len());
    for (slot, &n) in cfg.n_list.iter().enumerate() {
        let pn = params.with_n(n)?;
        let sim = Simulator::new(&pn, SchedulingPolicy::omega(control.clone(), kappa))?;
        let x0 = fluid_point(n, &dq.rho);
        let est = ergodic_cost_prelimit(&sim, &x0, cost, cfg.horizon, &cfg.window, cfg.reps, cfg.seed, slot as u16)?;
        let gap = est.mean - rho_star;
        rows.push(GapRow {
            n,
            cost: est,
            gap,
            half_width: est.half_width,
            lower_bound_ok: gap >= -2.0 * est.half_width,
        });
    }
    let nonincreasing = rows.windows(2).all(|w| w[1].gap <= w[0].gap);
    let lower_bound_ok = rows.iter().all(|r| r.lower_bound_ok);
    Ok(GapTable {
        rho_star,
        solver_residual: solved.residual,
        policy: format!("omega-control from the truncated ergodic control (kappa {kappa})"),
        rows,
        nonincreasing,
        lower_bound_ok,
        note: "long-run costs are single-horizon time averages after burn-in; the optimal prelimit value lies between rho_star and the simulated policy cost".into(),
    })
}

/// Summary line for one estimated metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub label: String,
    pub params_digest: String,
    pub metric: String,
    pub estimate: f64,
    pub half_width: f64,
    pub replications: usize,
    pub seed: u64,
    /// Random-stream indices used, one per replication.
    pub streams: Vec<u64>,
}

impl ExperimentReport {
    pub fn new(label: &str, params_digest: &str, metric: &str, est: &Estimate, seed: u64, streams: Vec<u64>) -> Self {
        Self {
            label: label.into(),
            params_digest: params_digest.into(),
            metric: metric.into(),
            estimate: est.mean,
            half_width: est.half_width,
            replications: est.samples,
            seed,
            streams,
        }
    }
}
