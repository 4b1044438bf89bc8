//! Preemptive, work-conserving scheduling policies.
//!
//! A policy maps a headcount vector `x` to an assignment `(z, q)` with
//! `x = z + q`, `z, q >= 0` and `sum(z) = min(sum(x), n)`.

use std::fmt;
use std::sync::Arc;

use crate::control::MarkovControl;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub z: Vec<u64>,
    pub q: Vec<u64>,
}

/// Unvalidated policy output, as produced by user callbacks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawAssignment {
    pub z: Vec<i64>,
    pub q: Vec<i64>,
}

/// Scaling data the diffusion-scaled policies need.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyContext {
    pub n: u64,
    pub beta: f64,
    pub rho: Vec<f64>,
}

impl PolicyContext {
    pub fn scaled(&self, x: &[u64]) -> Vec<f64> {
        let n = self.n as f64;
        let nb = n.powf(-self.beta);
        x.iter().zip(&self.rho).map(|(&xi, r)| nb * (xi as f64 - n * r)).collect()
    }
}

pub type CustomPolicyFn = Arc<dyn Fn(&[u64], &PolicyContext) -> RawAssignment + Send + Sync>;

#[derive(Clone)]
pub enum SchedulingPolicy {
    /// Servers go to classes in index order until capacity is exhausted.
    StaticPriority,
    /// Queue proportions from a Markov control near the fluid point, static priority elsewhere.
    OmegaControl { control: MarkovControl, kappa: f64 },
    Custom(CustomPolicyFn),
}

impl fmt::Debug for SchedulingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::StaticPriority => f.write_str("StaticPriority"),
            Self::OmegaControl { control, kappa } => f
                .debug_struct("OmegaControl")
                .field("control", control)
                .field("kappa", kappa)
                .finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl SchedulingPolicy {
    pub fn omega(control: MarkovControl, kappa: f64) -> Self {
        Self::OmegaControl { control, kappa }
    }

    pub fn custom(f: impl Fn(&[u64], &PolicyContext) -> RawAssignment + Send + Sync + 'static) -> Self {
        Self::Custom(Arc::new(f))
    }

    pub fn raw_assign(&self, x: &[u64], ctx: &PolicyContext) -> Result<RawAssignment> {
        let a = match self {
            Self::StaticPriority => static_priority_assign(x, ctx.n),
            Self::OmegaControl { control, kappa } => omega_control_assign(x, ctx, control, *kappa)?,
            Self::Custom(f) => return Ok(f(x, ctx)),
        };
        Ok(RawAssignment {
            z: a.z.iter().map(|&v| v as i64).collect(),
            q: a.q.iter().map(|&v| v as i64).collect(),
        })
    }

    /// Assignment with every invariant checked.
    pub fn assign(&self, x: &[u64], ctx: &PolicyContext) -> Result<Assignment> {
        let raw = self.raw_assign(x, ctx)?;
        check_assignment(x, ctx.n, &raw).map_err(Error::Policy)
    }
}

/// Validates the balance, sign, capacity and work-conservation constraints.
pub fn check_assignment(x: &[u64], n: u64, raw: &RawAssignment) -> std::result::Result<Assignment, String> {
    let d = x.len();
    if raw.z.len() != d || raw.q.len() != d {
        return Err(format!("assignment has wrong dimension (z {}, q {})", raw.z.len(), raw.q.len()));
    }
    for i in 0..d {
        if raw.z[i] < 0 || raw.q[i] < 0 {
            return Err(format!("negative assignment in class {i}"));
        }
        if raw.z[i] + raw.q[i] != x[i] as i64 {
            return Err(format!("balance X = Z + Q violated in class {i}"));
        }
    }
    let total_z: i64 = raw.z.iter().sum();
    let total_x: u64 = x.iter().sum();
    if total_z != total_x.min(n) as i64 {
        return Err(format!(
            "work conservation violated: sum Z = {total_z}, min(sum X, n) = {}",
            total_x.min(n)
        ));
    }
    Ok(Assignment {
        z: raw.z.iter().map(|&v| v as u64).collect(),
        q: raw.q.iter().map(|&v| v as u64).collect(),
    })
}

/// `z_i = x_i ^ (n - sum_{i' < i} x_i')^+`.
pub fn static_priority_assign(x: &[u64], n: u64) -> Assignment {
    let mut z = Vec::with_capacity(x.len());
    let mut q = Vec::with_capacity(x.len());
    let mut ahead = 0u64;
    for &xi in x {
        let free = n.saturating_sub(ahead);
        let zi = xi.min(free);
        z.push(zi);
        q.push(xi - zi);
        ahead = ahead.saturating_add(xi);
    }
    Assignment { z, q }
}

/// Mass-preserving rounding: floor the first `d - 1` coordinates and move
/// all fractional mass into the last one.
pub fn omega_round(y: &[f64]) -> Vec<f64> {
    let d = y.len();
    let mut out: Vec<f64> = y.iter().map(|v| v.floor()).collect();
    let frac: f64 = y.iter().zip(&out).map(|(v, f)| v - f).sum();
    out[d - 1] += frac;
    out
}

pub fn default_kappa(rho: &[f64]) -> f64 {
    0.9 * rho.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Queue allocation `omega((sum(x) - n)^+ v(x_hat))` inside
/// `sup_i |x_i - n rho_i| <= kappa n`, static priority outside.
///
/// When the rounded target asks for more class-`i` customers in queue than
/// are present, the excess is moved to classes with spare customers, last
/// class first.
pub fn omega_control_assign(
    x: &[u64],
    ctx: &PolicyContext,
    control: &MarkovControl,
    kappa: f64,
) -> Result<Assignment> {
    let d = x.len();
    let n = ctx.n;
    let nf = n as f64;
    let min_rho = ctx.rho.iter().copied().fold(f64::INFINITY, f64::min);
    if !(kappa > 0.0 && kappa < min_rho) {
        return Err(Error::Policy(format!("kappa = {kappa} must lie in (0, min rho = {min_rho})")));
    }
    let inside = x
        .iter()
        .zip(&ctx.rho)
        .all(|(&xi, r)| (xi as f64 - nf * r).abs() <= kappa * nf);
    if !inside {
        return Ok(static_priority_assign(x, n));
    }
    let total: u64 = x.iter().sum();
    let excess = total.saturating_sub(n);
    if excess == 0 {
        return Ok(Assignment {
            z: x.to_vec(),
            q: vec![0; d],
        });
    }
    if d == 1 {
        // the simplex is a single point
        return Ok(Assignment {
            z: vec![x[0] - excess],
            q: vec![excess],
        });
    }
    let u = control.evaluate(&ctx.scaled(x))?;
    let target: Vec<f64> = u.iter().map(|ui| excess as f64 * ui).collect();
    let rounded = omega_round(&target);
    let mut q: Vec<u64> = rounded[..d - 1].iter().map(|v| v.max(0.0) as u64).collect();
    let head: u64 = q.iter().sum();
    if head > excess {
        return Err(Error::Policy(format!("rounded queue mass {head} exceeds excess {excess}")));
    }
    q.push(excess - head);
    let mut spill = 0u64;
    for i in 0..d {
        if q[i] > x[i] {
            spill += q[i] - x[i];
            q[i] = x[i];
        }
    }
    for i in (0..d).rev() {
        if spill == 0 {
            break;
        }
        let room = x[i] - q[i];
        let take = room.min(spill);
        q[i] += take;
        spill -= take;
    }
    let z = x.iter().zip(&q).map(|(xi, qi)| xi - qi).collect();
    Ok(Assignment { z, q })
}
