//! Generators of the prelimit chain, the Lyapunov family
//! `f_n(x) = sum_i xi_i |x_i - rho_i n|^m`, the Poisson corrector for the
//! environment, and numerical Foster–Lyapunov drift scans.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::policy::{Assignment, PolicyContext, SchedulingPolicy};

/// Relative tolerance of the centering condition `sum_k pi_k delta_k = 0`.
pub const CENTERING_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpec {
    pub m: u32,
    pub xi: Vec<f64>,
    pub n: u64,
}

impl LyapunovSpec {
    pub fn new(m: u32, xi: Vec<f64>, n: u64) -> Result<Self> {
        if m < 2 || m % 2 != 0 {
            return Err(Error::InvalidArgument(format!("Lyapunov exponent must be even and >= 2, got {m}")));
        }
        if xi.is_empty() || xi.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("Lyapunov weights must be positive, got {xi:?}")));
        }
        Ok(Self { m, xi, n })
    }
}

/// `f_n(x) = sum_i xi_i |x_i - rho_i n|^m`.
pub fn lyapunov_f(spec: &LyapunovSpec, x: &[f64], rho: &[f64]) -> f64 {
    let n = spec.n as f64;
    x.iter()
        .zip(rho)
        .zip(&spec.xi)
        .map(|((xi, r), w)| w * (xi - r * n).abs().powi(spec.m as i32))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiWeights {
    pub xi: Vec<f64>,
    pub eps1: f64,
    /// `sup |gamma^n - mu^n|` at the working `n`.
    pub c1: f64,
    /// Lower bound on all prelimit service and abandonment rates.
    pub c2: f64,
    /// Set when `c1 = 0` and uniform weights were substituted.
    pub degenerate: bool,
}

/// `xi_1 = 1`, `xi_i = (eps1^m / d^m) min_{i' < i} xi_i'` with `eps1 = c1 / (8 c2)`.
pub fn xi_from_constants(d: usize, m: u32, c1: f64, c2: f64) -> Result<XiWeights> {
    if !(c2 > 0.0) {
        return Err(Error::InvalidArgument(format!("rate lower bound must be positive, got {c2}")));
    }
    if c1 == 0.0 {
        return Ok(XiWeights {
            xi: vec![1.0; d],
            eps1: 0.0,
            c1,
            c2,
            degenerate: true,
        });
    }
    let eps1 = c1 / (8.0 * c2);
    let factor = (eps1 / d as f64).powi(m as i32);
    let mut xi = vec![1.0];
    for _ in 1..d {
        let min = xi.iter().copied().fold(f64::INFINITY, f64::min);
        xi.push(factor * min);
    }
    Ok(XiWeights {
        xi,
        eps1,
        c1,
        c2,
        degenerate: false,
    })
}

/// Weights from the model; `c2 = None` uses `0.9` times the smallest prelimit rate.
pub fn xi_weights(params: &ModelParams, m: u32, c2: Option<f64>) -> Result<XiWeights> {
    if m < 2 || m % 2 != 0 {
        return Err(Error::InvalidArgument(format!("Lyapunov exponent must be even and >= 2, got {m}")));
    }
    let pre = params.prelimit();
    let mut c1: f64 = 0.0;
    let mut min_rate = f64::INFINITY;
    for ((_, _, mu), (_, _, g)) in pre.mu.iter().zip(pre.gamma.iter()) {
        c1 = c1.max((g - mu).abs());
        min_rate = min_rate.min(mu).min(g);
    }
    xi_from_constants(params.classes(), m, c1, c2.unwrap_or(0.9 * min_rate))
}

/// Scalar field on headcounts.
pub type Field<'a> = &'a dyn Fn(&[i64]) -> f64;
/// Scalar field on headcounts and environment state.
pub type EnvField<'a> = &'a dyn Fn(&[i64], usize) -> f64;

/// Generators of the `n`-th joint chain under one scheduling policy.
#[derive(Debug, Clone)]
pub struct StabilityModel {
    d: usize,
    k: usize,
    n: u64,
    alpha: f64,
    beta: f64,
    rho: Vec<f64>,
    pi: Vec<f64>,
    upsilon: DMatrix<f64>,
    /// `n^alpha Q`
    env_gen: DMatrix<f64>,
    bar: [Vec<f64>; 3],
    /// Per-state rates `[lambda, mu, gamma]`, indexed `[k * d + i]`.
    per_state: [Vec<f64>; 3],
    policy: SchedulingPolicy,
    ctx: PolicyContext,
}

impl StabilityModel {
    pub fn new(params: &ModelParams, policy: SchedulingPolicy) -> Result<Self> {
        let dq = params.derive()?;
        let d = dq.d;
        let k = params.states();
        let flat = |t: &crate::rates::RateTable| {
            let mut v = vec![0.0; d * k];
            for (i, s, r) in t.iter() {
                v[s * d + i] = r;
            }
            v
        };
        Ok(Self {
            d,
            k,
            n: dq.n,
            alpha: dq.alpha,
            beta: dq.beta,
            rho: dq.rho.clone(),
            pi: dq.analytics.pi.iter().copied().collect(),
            upsilon: dq.analytics.upsilon.clone(),
            env_gen: params.env.q() * params.env.speed(),
            bar: [dq.bar_lambda_n.clone(), dq.bar_mu_n.clone(), dq.bar_gamma_n.clone()],
            per_state: [flat(&dq.prelimit.lambda), flat(&dq.prelimit.mu), flat(&dq.prelimit.gamma)],
            ctx: PolicyContext {
                n: dq.n,
                beta: dq.beta,
                rho: dq.rho,
            },
            policy,
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn states(&self) -> usize {
        self.k
    }

    pub fn assign(&self, x: &[i64]) -> Result<Assignment> {
        if x.iter().any(|&v| v < 0) {
            return Err(Error::InvalidArgument(format!("negative headcount {x:?}")));
        }
        let xu: Vec<u64> = x.iter().map(|&v| v as u64).collect();
        self.policy.assign(&xu, &self.ctx)
    }

    /// `sum_i l_i (f(x+e_i)-f(x)) + sum_i (s_i z_i + r_i q_i)(f(x-e_i)-f(x))`.
    fn queue_part(&self, f: Field, x: &[i64], a: &Assignment, rates: [&[f64]; 3]) -> f64 {
        let f0 = f(x);
        let mut y = x.to_vec();
        let mut out = 0.0;
        for i in 0..self.d {
            y[i] += 1;
            let up = f(&y) - f0;
            y[i] -= 2;
            let dn = if x[i] > 0 { f(&y) - f0 } else { 0.0 };
            y[i] += 1;
            out += rates[0][i] * up + (rates[1][i] * a.z[i] as f64 + rates[2][i] * a.q[i] as f64) * dn;
        }
        out
    }

    fn state_rates(&self, k: usize) -> [&[f64]; 3] {
        let r = k * self.d..(k + 1) * self.d;
        [&self.per_state[0][r.clone()], &self.per_state[1][r.clone()], &self.per_state[2][r]]
    }

    /// Generator of the averaged process.
    pub fn averaged_apply(&self, f: Field, x: &[i64]) -> Result<f64> {
        let a = self.assign(x)?;
        Ok(self.queue_part(f, x, &a, [&self.bar[0], &self.bar[1], &self.bar[2]]))
    }

    /// Queue part of the joint generator with rates frozen at state `k`.
    pub fn state_apply(&self, f: Field, x: &[i64], k: usize) -> Result<f64> {
        let a = self.assign(x)?;
        Ok(self.queue_part(f, x, &a, self.state_rates(k)))
    }

    /// Same operator with rate differences `bar - rate(k)`.
    pub fn delta_apply(&self, f: Field, x: &[i64], k: usize) -> Result<f64> {
        let a = self.assign(x)?;
        Ok(self.delta_with(f, x, k, &a))
    }

    fn delta_with(&self, f: Field, x: &[i64], k: usize, a: &Assignment) -> f64 {
        let r = self.state_rates(k);
        let diff: [Vec<f64>; 3] = std::array::from_fn(|j| (0..self.d).map(|i| self.bar[j][i] - r[j][i]).collect());
        self.queue_part(f, x, a, [&diff[0], &diff[1], &diff[2]])
    }

    /// Full generator of `(X, J)` applied to `f(., .)` at `(x, k)`.
    pub fn full_apply(&self, f: EnvField, x: &[i64], k: usize) -> Result<f64> {
        let a = self.assign(x)?;
        let fk = |y: &[i64]| f(y, k);
        let mut out = self.queue_part(&fk, x, &a, self.state_rates(k));
        let f0 = f(x, k);
        for kk in 0..self.k {
            if kk != k {
                out += self.env_gen[(k, kk)] * (f(x, kk) - f0);
            }
        }
        Ok(out)
    }

    /// Per-state `Delta_k(x)` for all `k`.
    pub fn delta_vector(&self, f: Field, x: &[i64]) -> Result<Vec<f64>> {
        let a = self.assign(x)?;
        Ok((0..self.k).map(|k| self.delta_with(f, x, k, &a)).collect())
    }

    /// `g = -n^-alpha Upsilon Delta(x)`, solving `n^alpha (Q g)_k = Delta_k(x)`.
    pub fn poisson_corrector(&self, f: Field, x: &[i64]) -> Result<Vec<f64>> {
        let delta = self.delta_vector(f, x)?;
        self.corrector_from_delta(&delta)
    }

    pub fn corrector_from_delta(&self, delta: &[f64]) -> Result<Vec<f64>> {
        let sum: f64 = self.pi.iter().zip(delta).map(|(p, v)| p * v).sum();
        let scale: f64 = self.pi.iter().zip(delta).map(|(p, v)| (p * v).abs()).sum::<f64>().max(1.0);
        if sum.abs() > CENTERING_TOL * scale {
            return Err(Error::Centering { sum, scale });
        }
        let dv = DVector::from_column_slice(delta);
        let g = &self.upsilon * dv * (-(self.n as f64).powf(-self.alpha));
        Ok(g.iter().copied().collect())
    }

    /// `max_k |n^alpha (Q g)_k - Delta_k|`.
    pub fn corrector_residual(&self, g: &[f64], delta: &[f64]) -> f64 {
        let gv = DVector::from_column_slice(g);
        let qg = &self.env_gen * gv;
        qg.iter().zip(delta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn env_generator(&self) -> &DMatrix<f64> {
        &self.env_gen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanVariant {
    /// Averaged generator on `n^(-m beta) f_n`.
    Averaged,
    /// Full generator on `n^(-m beta) f_n`, without corrector.
    Raw,
    /// Full generator on `n^(-m beta) (f_n + g_n[f_n])`.
    Corrected,
}

impl fmt::Display for ScanVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Averaged => "averaged",
            Self::Raw => "raw",
            Self::Corrected => "corrected",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub variant: ScanVariant,
    pub m: u32,
    /// `None` derives the weights from the model.
    pub xi: Option<Vec<f64>>,
    /// Inner region `|x - n rho|_inf <= c0 n^beta`.
    pub c0: f64,
    /// Far shell reaches `c_far n^beta`; `0` disables it.
    pub c_far: f64,
    /// Keep every `far_stride`-th lattice point of the far shell.
    pub far_stride: usize,
    /// Core ball `|x_hat|_inf <= core_radius` fixing `C1`.
    pub core_radius: f64,
    pub worst: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            variant: ScanVariant::Averaged,
            m: 2,
            xi: None,
            c0: 4.0,
            c_far: 8.0,
            far_stride: 7,
            core_radius: 1.0,
            worst: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub x: Vec<i64>,
    /// 1-based environment state; 0 for the averaged variant.
    pub k: usize,
    pub x_hat: Vec<f64>,
    pub lv: f64,
    pub v: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub variant: ScanVariant,
    pub n: u64,
    pub alpha: f64,
    pub beta: f64,
    pub m: u32,
    pub xi: Vec<f64>,
    pub xi_degenerate: bool,
    pub region: String,
    pub states: usize,
    pub core_states: usize,
    /// Largest `C2` for which `LV <= C1(C2) - C2 V` holds at every state.
    pub c2: f64,
    /// `max` over the core of `LV + C2 V`.
    pub c1: f64,
    pub satisfied_fraction: f64,
    pub success: bool,
    /// Smallest slack `C1 - C2 V - LV` outside the core at half the fitted `C2`.
    pub margin: f64,
    /// `C1 / C2`, the implied bound on the long-run mean of `V`.
    pub moment_bound: f64,
    pub worst_states: Vec<ScanPoint>,
    /// `max |g| / (1 + n^(m(1-alpha)) + f_n)` over the region (corrected variant).
    pub corrector_ratio: Option<f64>,
}

const C2_CAP: f64 = 1e6;

struct Sample {
    x: Vec<i64>,
    k: usize,
    lv: f64,
    v: f64,
    core: bool,
}

fn lattice_region(center: &[f64], lo_r: f64, hi_r: f64, stride: usize) -> Vec<Vec<i64>> {
    let d = center.len();
    let lo: Vec<i64> = center.iter().map(|c| ((c - hi_r).ceil() as i64).max(0)).collect();
    let hi: Vec<i64> = center.iter().map(|c| (c + hi_r).floor() as i64).collect();
    let mut out = Vec::new();
    let mut cur = lo.clone();
    let mut counter = 0usize;
    loop {
        let dist = cur
            .iter()
            .zip(center)
            .map(|(&v, c)| (v as f64 - c).abs())
            .fold(0.0, f64::max);
        if dist >= lo_r || lo_r == 0.0 {
            if counter % stride.max(1) == 0 {
                out.push(cur.clone());
            }
            counter += 1;
        }
        let mut i = 0;
        loop {
            if i == d {
                return out;
            }
            if cur[i] < hi[i] {
                cur[i] += 1;
                break;
            }
            cur[i] = lo[i];
            i += 1;
        }
    }
}

/// Evaluates `LV` and `V` over a lattice region and fits Foster–Lyapunov constants.
pub fn drift_inequality_scan(model: &StabilityModel, params: &ModelParams, cfg: &ScanConfig) -> Result<ScanReport> {
    let d = model.d;
    let n = model.n as f64;
    let nb = n.powf(model.beta);
    let (xi, degenerate) = match &cfg.xi {
        Some(w) => (w.clone(), false),
        None => {
            let w = xi_weights(params, cfg.m, None)?;
            (w.xi, w.degenerate)
        }
    };
    let spec = LyapunovSpec::new(cfg.m, xi, model.n)?;
    if spec.xi.len() != d {
        return Err(Error::Dimension(format!("{} Lyapunov weights for {d} classes", spec.xi.len())));
    }
    let norm = n.powf(-(cfg.m as f64) * model.beta);
    let center: Vec<f64> = model.rho.iter().map(|r| r * n).collect();
    let rho = model.rho.clone();
    let f = |x: &[i64]| {
        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        lyapunov_f(&spec, &xf, &rho)
    };
    let mut points = lattice_region(&center, 0.0, cfg.c0 * nb, 1);
    let inner = points.len();
    if cfg.c_far > cfg.c0 {
        let far = lattice_region(&center, cfg.c0 * nb + 1e-9, cfg.c_far * nb, cfg.far_stride);
        points.extend(far.into_iter().filter(|p| {
            p.iter()
                .zip(&center)
                .map(|(&v, c)| (v as f64 - c).abs())
                .fold(0.0, f64::max)
                > cfg.c0 * nb
        }));
    }
    let x_hat = |x: &[i64]| -> Vec<f64> { x.iter().zip(&center).map(|(&v, c)| (v as f64 - c) / nb).collect() };
    let is_core = |x: &[i64]| x_hat(x).iter().all(|v| v.abs() <= cfg.core_radius);
    let mut samples = Vec::new();
    let mut corrector_ratio: Option<f64> = None;
    let growth = 1.0 + n.powf(cfg.m as f64 * (1.0 - model.alpha));
    for x in &points {
        let core = is_core(x);
        match cfg.variant {
            ScanVariant::Averaged => {
                let lv = model.averaged_apply(&f, x)? * norm;
                samples.push(Sample {
                    x: x.clone(),
                    k: 0,
                    lv,
                    v: f(x) * norm,
                    core,
                });
            }
            ScanVariant::Raw => {
                let fk = |y: &[i64], _k: usize| f(y);
                for k in 0..model.k {
                    let lv = model.full_apply(&fk, x, k)? * norm;
                    samples.push(Sample {
                        x: x.clone(),
                        k: k + 1,
                        lv,
                        v: f(x) * norm,
                        core,
                    });
                }
            }
            ScanVariant::Corrected => {
                let g0 = model.poisson_corrector(&f, x)?;
                let ratio = g0.iter().fold(0.0f64, |a, v| a.max(v.abs())) / (growth + f(x));
                corrector_ratio = Some(corrector_ratio.map_or(ratio, |r| r.max(ratio)));
                let cache = std::cell::RefCell::new(std::collections::HashMap::<Vec<i64>, Vec<f64>>::new());
                let failure = std::cell::RefCell::new(None);
                let vfun = |y: &[i64], k: usize| -> f64 {
                    let mut c = cache.borrow_mut();
                    if !c.contains_key(y) {
                        let g = match model.poisson_corrector(&f, y) {
                            Ok(g) => g,
                            Err(e) => {
                                *failure.borrow_mut() = Some(e);
                                vec![0.0; model.k]
                            }
                        };
                        c.insert(y.to_vec(), g);
                    }
                    f(y) + c[y][k]
                };
                for k in 0..model.k {
                    let lv = model.full_apply(&vfun, x, k)? * norm;
                    if let Some(e) = failure.borrow_mut().take() {
                        return Err(e);
                    }
                    samples.push(Sample {
                        x: x.clone(),
                        k: k + 1,
                        lv,
                        v: (f(x) + g0[k]) * norm,
                        core,
                    });
                }
            }
        }
    }
    let core_states = samples.iter().filter(|s| s.core).count();
    if core_states == 0 {
        return Err(Error::InvalidArgument("scan core ball contains no lattice points".into()));
    }
    let c1_of = |c2: f64| {
        samples
            .iter()
            .filter(|s| s.core)
            .map(|s| s.lv + c2 * s.v)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let tol = |c1: f64| 1e-12 * (1.0 + c1.abs());
    let satisfied = |c2: f64| {
        let c1 = c1_of(c2);
        samples.iter().filter(|s| s.lv + c2 * s.v <= c1 + tol(c1)).count()
    };
    let all = samples.len();
    let feasible = |c2: f64| satisfied(c2) == all;
    let c2 = if !feasible(0.0) {
        0.0
    } else {
        let mut lo = 0.0;
        let mut hi = 1e-3;
        while feasible(hi) && hi < C2_CAP {
            lo = hi;
            hi *= 2.0;
        }
        if hi >= C2_CAP && feasible(hi) {
            hi
        } else {
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if feasible(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        }
    };
    let c1 = c1_of(c2);
    let sat = satisfied(c2);
    let half = 0.5 * c2;
    let c1_half = c1_of(half);
    let margin = samples
        .iter()
        .filter(|s| !s.core)
        .map(|s| c1_half - half * s.v - s.lv)
        .fold(f64::INFINITY, f64::min);
    let mut ranked: Vec<(f64, &Sample)> = samples.iter().map(|s| (c1 - c2 * s.v - s.lv, s)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    let worst_states = ranked
        .iter()
        .take(cfg.worst)
        .map(|(slack, s)| ScanPoint {
            x: s.x.clone(),
            k: s.k,
            x_hat: x_hat(&s.x),
            lv: s.lv,
            v: s.v,
            slack: *slack,
        })
        .collect();
    let region = format!(
        "lattice x >= 0 with |x - n rho|_inf <= {} n^beta ({inner} points){}; core |x_hat|_inf <= {}",
        cfg.c0,
        if cfg.c_far > cfg.c0 {
            format!(
                ", far shell to {} n^beta every {} points ({} points)",
                cfg.c_far,
                cfg.far_stride,
                points.len() - inner
            )
        } else {
            String::new()
        },
        cfg.core_radius
    );
    Ok(ScanReport {
        variant: cfg.variant,
        n: model.n,
        alpha: model.alpha,
        beta: model.beta,
        m: cfg.m,
        xi: spec.xi.clone(),
        xi_degenerate: degenerate,
        region,
        states: all,
        core_states,
        c2,
        c1,
        satisfied_fraction: sat as f64 / all as f64,
        success: sat == all && c2 > 0.0,
        margin,
        moment_bound: if c2 > 0.0 { c1 / c2 } else { f64::INFINITY },
        worst_states,
        corrector_ratio,
    })
}
