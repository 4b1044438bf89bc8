//! Closed-form and quadrature reference values used to validate the
//! simulators and solvers.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Composite Simpson rule with `2 * half` panels on `[a, b]`.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, half: usize) -> f64 {
    let n = 2 * half.max(1);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `E[(Y^+)^2]` for `Y ~ N(m, v)`.
pub fn gaussian_positive_second_moment(m: f64, v: f64) -> f64 {
    if v <= 0.0 {
        return m.max(0.0).powi(2);
    }
    let s = v.sqrt();
    let z = m / s;
    (m * m + v) * normal_cdf(z) + m * s * normal_pdf(z)
}

/// Mean and variance at time `t` of `dX = (ell - mu X) dt + sigma dW`, `X(0) = x0`.
pub fn ou_moments(ell: f64, mu: f64, sigma2: f64, x0: f64, t: f64) -> (f64, f64) {
    let e = (-mu * t).exp();
    let mean = x0 * e + ell / mu * (1.0 - e);
    let var = sigma2 / (2.0 * mu) * (1.0 - e * e);
    (mean, var)
}

/// `int_0^inf e^{-theta t} c E[(X_t^+)^2] dt` for the OU process of [`ou_moments`].
pub fn ou_discounted_positive_quadratic(ell: f64, mu: f64, sigma2: f64, x0: f64, theta: f64, c: f64) -> f64 {
    let end = 60.0 / theta;
    let f = |t: f64| {
        let (m, v) = ou_moments(ell, mu, sigma2, x0, t);
        (-theta * t).exp() * c * gaussian_positive_second_moment(m, v)
    };
    simpson(f, 0.0, end, 20_000)
}

/// Stationary law of the one-dimensional piecewise OU process
/// `dX = (ell - mu min(X, 0) - gamma max(X, 0)) dt + sigma dW`.
#[derive(Debug, Clone, Copy)]
pub struct PiecewiseOu {
    pub ell: f64,
    pub mu: f64,
    pub gamma: f64,
    pub sigma2: f64,
    lo: f64,
    hi: f64,
    norm: f64,
}

impl PiecewiseOu {
    pub fn new(ell: f64, mu: f64, gamma: f64, sigma2: f64) -> Result<Self> {
        if !(mu > 0.0) || !(sigma2 > 0.0) || gamma < 0.0 || (gamma == 0.0 && ell >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "piecewise OU with mu = {mu}, gamma = {gamma}, ell = {ell}, sigma^2 = {sigma2} has no stationary law"
            )));
        }
        let mut p = Self {
            ell,
            mu,
            gamma,
            sigma2,
            lo: 0.0,
            hi: 0.0,
            norm: 1.0,
        };
        // mode is where the drift vanishes; go out until the log-density drops by 60
        let mode = if ell >= 0.0 { ell / gamma.max(f64::MIN_POSITIVE) } else { ell / mu };
        let top = p.log_unnormalized(mode);
        let mut step = 1.0;
        while top - p.log_unnormalized(mode - step) < 60.0 {
            step *= 1.5;
        }
        p.lo = mode - step;
        step = 1.0;
        while top - p.log_unnormalized(mode + step) < 60.0 {
            step *= 1.5;
        }
        p.hi = mode + step;
        p.norm = simpson(|x| (p.log_unnormalized(x) - top).exp(), p.lo, p.hi, 50_000) * top.exp();
        Ok(p)
    }

    fn log_unnormalized(&self, x: f64) -> f64 {
        let k = if x < 0.0 { self.mu } else { self.gamma };
        2.0 / self.sigma2 * (self.ell * x - 0.5 * k * x * x)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_unnormalized(x).exp() / self.norm
    }

    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        // split at the kink so Simpson sees smooth pieces
        let left = if self.lo < 0.0 { simpson(|x| f(x) * self.density(x), self.lo, 0.0_f64.min(self.hi), 50_000) } else { 0.0 };
        let right = if self.hi > 0.0 { simpson(|x| f(x) * self.density(x), 0.0_f64.max(self.lo), self.hi, 50_000) } else { 0.0 };
        left + right
    }
}

/// Stationary law of the Erlang-A queue-length chain: arrivals `lambda`,
/// `min(x, n)` busy servers at rate `mu`, `(x - n)^+` abandoning at rate `gamma`.
pub fn erlang_a_stationary(lambda: f64, mu: f64, gamma: f64, n: u64) -> Result<Vec<f64>> {
    if !(lambda > 0.0) || !(mu > 0.0) || !(gamma > 0.0) {
        return Err(Error::InvalidArgument("Erlang-A needs positive rates".into()));
    }
    let mut logw = vec![0.0];
    let mut x = 0u64;
    loop {
        let death = mu * (x + 1).min(n) as f64 + gamma * (x + 1).saturating_sub(n) as f64;
        let next = logw[x as usize] + (lambda / death).ln();
        logw.push(next);
        x += 1;
        // past the mode the weights decay geometrically; stop once negligible
        if x > n && death > 2.0 * lambda && next < logw.iter().cloned().fold(f64::MIN, f64::max) - 50.0 {
            break;
        }
    }
    let top = logw.iter().cloned().fold(f64::MIN, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Stationary mean number waiting, `E[(X - n)^+]`.
pub fn erlang_a_mean_queue(lambda: f64, mu: f64, gamma: f64, n: u64) -> Result<f64> {
    let p = erlang_a_stationary(lambda, mu, gamma, n)?;
    Ok(p.iter().enumerate().map(|(x, w)| (x as f64 - n as f64).max(0.0) * w).sum())
}
