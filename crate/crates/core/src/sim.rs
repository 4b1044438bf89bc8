//! Exact event-driven simulation of the joint chain `(X, Z, Q, J)`.
//!
//! Rates depend only on `(z, q, k)`, which are frozen between events, so the
//! Gillespie step is exact. The policy re-assigns servers after every event.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::env_chain::{sample_index, sample_initial};
use crate::error::{Error, Result, StateDump};
use crate::model::ModelParams;
use crate::policy::{check_assignment, static_priority_assign, PolicyContext, SchedulingPolicy};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub t: f64,
    pub x: Vec<u64>,
    pub z: Vec<u64>,
    pub q: Vec<u64>,
    /// Environment state, 0-based.
    pub j: usize,
}

/// One holding interval `[t0, t1)` of the chain.
#[derive(Debug, Clone, Copy)]
pub struct Segment<'a> {
    pub t0: f64,
    pub t1: f64,
    pub x: &'a [u64],
    pub z: &'a [u64],
    pub q: &'a [u64],
    pub env: usize,
    /// Total event rate out of the current state.
    pub total_rate: f64,
}

/// Receives every holding interval in time order.
pub trait PathObserver {
    fn segment(&mut self, seg: &Segment<'_>);
}

impl PathObserver for () {
    fn segment(&mut self, _: &Segment<'_>) {}
}

impl<A: PathObserver, B: PathObserver> PathObserver for (A, B) {
    fn segment(&mut self, seg: &Segment<'_>) {
        self.0.segment(seg);
        self.1.segment(seg);
    }
}

impl<T: PathObserver + ?Sized> PathObserver for &mut T {
    fn segment(&mut self, seg: &Segment<'_>) {
        (**self).segment(seg);
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Overrides the stationary draw of the initial environment state.
    pub initial_env: Option<usize>,
    /// Record every `stride`-th epoch (0 or 1 keeps all).
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSummary {
    pub events: u64,
    pub horizon: f64,
    pub final_state: JointState,
    /// `int_0^T` of the total event rate along the path.
    pub integrated_rate: f64,
}

/// Prepared simulator for one model and policy.
#[derive(Debug, Clone)]
pub struct Simulator {
    d: usize,
    k: usize,
    n: u64,
    ctx: PolicyContext,
    pi: Vec<f64>,
    lam: Vec<f64>,
    mu: Vec<f64>,
    gam: Vec<f64>,
    /// Off-diagonal `n^alpha q_{kk'}` per row, diagonal zeroed.
    env_rates: Vec<f64>,
    env_out: Vec<f64>,
    policy: SchedulingPolicy,
}

impl Simulator {
    pub fn new(params: &ModelParams, policy: SchedulingPolicy) -> Result<Self> {
        let report = params.validate();
        if !report.is_ok() {
            return Err(Error::Validation(report));
        }
        let derived = params.derive()?;
        let d = params.classes();
        let k = params.states();
        let pre = &derived.prelimit;
        let flat = |t: &crate::rates::RateTable| {
            let mut v = vec![0.0; d * k];
            for (i, s, r) in t.iter() {
                v[s * d + i] = r;
            }
            v
        };
        let (lam, mu, gam) = (flat(&pre.lambda), flat(&pre.mu), flat(&pre.gamma));
        if let Some(bad) = lam.iter().chain(&mu).find(|r| !(**r > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "prelimit rates must be positive at n = {}, found {bad}",
                params.n()
            )));
        }
        let speed = params.env.speed();
        let q = params.env.q();
        let mut env_rates = vec![0.0; k * k];
        let mut env_out = vec![0.0; k];
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    env_rates[a * k + b] = speed * q[(a, b)];
                    env_out[a] += speed * q[(a, b)];
                }
            }
        }
        Ok(Self {
            d,
            k,
            n: params.n(),
            ctx: PolicyContext {
                n: params.n(),
                beta: derived.beta,
                rho: derived.rho.clone(),
            },
            pi: derived.analytics.pi.iter().copied().collect(),
            lam,
            mu,
            gam,
            env_rates,
            env_out,
            policy,
        })
    }

    pub fn context(&self) -> &PolicyContext {
        &self.ctx
    }

    pub fn classes(&self) -> usize {
        self.d
    }

    fn assign(&self, t: f64, x: &[u64], env: usize, z: &mut [u64], q: &mut [u64]) -> Result<()> {
        if let SchedulingPolicy::StaticPriority = self.policy {
            let a = static_priority_assign(x, self.n);
            z.copy_from_slice(&a.z);
            q.copy_from_slice(&a.q);
            return Ok(());
        }
        let raw = self.policy.raw_assign(x, &self.ctx)?;
        match check_assignment(x, self.n, &raw) {
            Ok(a) => {
                z.copy_from_slice(&a.z);
                q.copy_from_slice(&a.q);
                Ok(())
            }
            Err(reason) => Err(Error::InvariantBreach(Box::new(StateDump {
                reason,
                t,
                x: x.to_vec(),
                z: raw.z,
                q: raw.q,
                env,
                n: self.n,
            }))),
        }
    }

    /// Runs on `[0, horizon]`, streaming holding intervals to `observer`.
    pub fn run(
        &self,
        horizon: f64,
        x0: &[u64],
        rng: &mut SimRng,
        opts: &SimOptions,
        observer: &mut impl PathObserver,
    ) -> Result<SimSummary> {
        let d = self.d;
        let k = self.k;
        if x0.len() != d {
            return Err(Error::Dimension(format!("initial state has {} classes, model has {d}", x0.len())));
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be finite and nonnegative, got {horizon}")));
        }
        let mut env = match opts.initial_env {
            Some(j) if j < k => j,
            Some(j) => return Err(Error::InvalidArgument(format!("initial environment state {j} out of range"))),
            None => sample_initial(&self.pi, rng),
        };
        let mut x = x0.to_vec();
        let mut z = vec![0u64; d];
        let mut q = vec![0u64; d];
        self.assign(0.0, &x, env, &mut z, &mut q)?;
        let mut t = 0.0;
        let mut events = 0u64;
        let mut integrated = 0.0;
        let mut rates = vec![0.0; 3 * d];
        loop {
            let base = env * d;
            let mut total = self.env_out[env];
            for i in 0..d {
                let a = self.lam[base + i];
                let s = self.mu[base + i] * z[i] as f64;
                let r = self.gam[base + i] * q[i] as f64;
                rates[i] = a;
                rates[d + i] = s;
                rates[2 * d + i] = r;
                total += a + s + r;
            }
            let e: f64 = Exp1.sample(rng);
            let dt = e / total;
            let t1 = (t + dt).min(horizon);
            observer.segment(&Segment {
                t0: t,
                t1,
                x: &x,
                z: &z,
                q: &q,
                env,
                total_rate: total,
            });
            integrated += total * (t1 - t);
            if t + dt >= horizon {
                break;
            }
            t += dt;
            events += 1;
            let mut u = rng.random::<f64>() * total;
            let mut fired = None;
            for (idx, &r) in rates.iter().enumerate() {
                if u < r {
                    fired = Some(idx);
                    break;
                }
                u -= r;
            }
            match fired {
                Some(idx) if idx < d => x[idx] += 1,
                Some(idx) => {
                    let i = idx % d;
                    // round-off can select a zero-rate departure; skip it
                    if x[i] == 0 {
                        continue;
                    }
                    x[i] -= 1;
                }
                None => {
                    let row = &self.env_rates[env * k..(env + 1) * k];
                    env = sample_index(row, self.env_out[env], rng);
                    continue;
                }
            }
            self.assign(t, &x, env, &mut z, &mut q)?;
        }
        Ok(SimSummary {
            events,
            horizon,
            final_state: JointState { t: horizon, x, z, q, j: env },
            integrated_rate: integrated,
        })
    }

    pub fn trajectory(&self, horizon: f64, x0: &[u64], rng: &mut SimRng, opts: &SimOptions) -> Result<JointTrajectory> {
        self.trajectory_observed(horizon, x0, rng, opts, &mut ()).map(|(t, _)| t)
    }

    /// Records the path while also streaming it to `observer`.
    pub fn trajectory_observed(
        &self,
        horizon: f64,
        x0: &[u64],
        rng: &mut SimRng,
        opts: &SimOptions,
        observer: &mut impl PathObserver,
    ) -> Result<(JointTrajectory, SimSummary)> {
        let mut rec = Recorder {
            stride: opts.stride.max(1),
            seen: 0,
            events: Vec::new(),
        };
        let summary = self.run(horizon, x0, rng, opts, &mut (&mut rec, observer))?;
        let traj = JointTrajectory {
            events: rec.events,
            horizon,
            n: self.n,
            beta: self.ctx.beta,
            rho: self.ctx.rho.clone(),
            event_count: summary.events,
        };
        Ok((traj, summary))
    }
}

struct Recorder {
    stride: usize,
    seen: usize,
    events: Vec<JointState>,
}

impl PathObserver for Recorder {
    fn segment(&mut self, seg: &Segment<'_>) {
        if self.seen % self.stride == 0 {
            self.events.push(JointState {
                t: seg.t0,
                x: seg.x.to_vec(),
                z: seg.z.to_vec(),
                q: seg.q.to_vec(),
                j: seg.env,
            });
        }
        self.seen += 1;
    }
}

/// Recorded path; entry `i` holds on `[events[i].t, events[i+1].t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTrajectory {
    pub events: Vec<JointState>,
    pub horizon: f64,
    pub n: u64,
    pub beta: f64,
    pub rho: Vec<f64>,
    /// Number of events, including ones dropped by thinning.
    pub event_count: u64,
}

impl JointTrajectory {
    pub fn state_at(&self, t: f64) -> &JointState {
        let idx = self.events.partition_point(|e| e.t <= t);
        &self.events[idx.saturating_sub(1)]
    }

    pub fn end_of(&self, i: usize) -> f64 {
        self.events.get(i + 1).map_or(self.horizon, |e| e.t)
    }

    /// CSV with columns `t, X_1..X_d, Z_1..Z_d, Q_1..Q_d, j` (1-based `j`).
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        let d = self.rho.len();
        let mut header = vec!["t".to_string()];
        for p in ["X", "Z", "Q"] {
            header.extend((1..=d).map(|i| format!("{p}_{i}")));
        }
        header.push("j".into());
        writeln!(w, "{}", header.join(","))?;
        for e in &self.events {
            write!(w, "{}", e.t)?;
            for v in e.x.iter().chain(&e.z).chain(&e.q) {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{}", e.j + 1)?;
        }
        Ok(())
    }

    pub fn diffusion_scale(&self) -> ScaledTrajectory {
        diffusion_scale(self)
    }
}

/// Centered and scaled views of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledTrajectory {
    pub times: Vec<f64>,
    pub horizon: f64,
    /// `n^-beta (X - n rho)`
    pub x_hat: Vec<Vec<f64>>,
    /// `n^-beta (Z - n rho)`
    pub z_hat: Vec<Vec<f64>>,
    /// `n^-beta Q`
    pub q_hat: Vec<Vec<f64>>,
    /// `X / n`
    pub x_bar: Vec<Vec<f64>>,
    pub env: Vec<usize>,
}

impl ScaledTrajectory {
    pub fn end_of(&self, i: usize) -> f64 {
        self.times.get(i + 1).copied().unwrap_or(self.horizon)
    }
}

pub fn scale_state(v: &[u64], n: u64, beta: f64, rho: &[f64]) -> Vec<f64> {
    let nf = n as f64;
    let s = nf.powf(-beta);
    v.iter().zip(rho).map(|(&a, r)| s * (a as f64 - nf * r)).collect()
}

pub fn diffusion_scale(traj: &JointTrajectory) -> ScaledTrajectory {
    let n = traj.n;
    let nf = n as f64;
    let s = nf.powf(-traj.beta);
    let zero = vec![0.0; traj.rho.len()];
    let mut out = ScaledTrajectory {
        times: Vec::with_capacity(traj.events.len()),
        horizon: traj.horizon,
        x_hat: Vec::with_capacity(traj.events.len()),
        z_hat: Vec::with_capacity(traj.events.len()),
        q_hat: Vec::with_capacity(traj.events.len()),
        x_bar: Vec::with_capacity(traj.events.len()),
        env: Vec::with_capacity(traj.events.len()),
    };
    for e in &traj.events {
        out.times.push(e.t);
        out.x_hat.push(scale_state(&e.x, n, traj.beta, &traj.rho));
        out.z_hat.push(scale_state(&e.z, n, traj.beta, &traj.rho));
        out.q_hat.push(scale_state(&e.q, n, traj.beta, &zero));
        out.x_bar.push(e.x.iter().map(|&v| v as f64 / nf).collect());
        out.env.push(e.j);
    }
    debug_assert!(s > 0.0);
    out
}

/// Convenience wrapper around [`Simulator`].
pub fn simulate(
    params: &ModelParams,
    policy: SchedulingPolicy,
    horizon: f64,
    x0: &[u64],
    rng: &mut SimRng,
) -> Result<JointTrajectory> {
    Simulator::new(params, policy)?.trajectory(horizon, x0, rng, &SimOptions::default())
}

/// `round(n rho)` per class, adjusted so the total is `n`.
pub fn fluid_point(n: u64, rho: &[f64]) -> Vec<u64> {
    let mut x: Vec<u64> = rho.iter().map(|r| (r * n as f64).round().max(0.0) as u64).collect();
    let total: u64 = x.iter().sum();
    let last = x.len() - 1;
    if total > n {
        x[last] = x[last].saturating_sub(total - n);
    } else {
        x[last] += n - total;
    }
    x
}
