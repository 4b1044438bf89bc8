//! The limiting controlled diffusion
//! `dX = b(X, U) dt + sigma dW`, `b(x, u) = l - M(x - <e,x>^+ u) - Gamma <e,x>^+ u`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::control::MarkovControl;
use crate::error::{Error, Result};
use crate::model::DerivedQuantities;
use crate::rng::SimRng;

/// Eigenvalues of the covariance below this are treated as zero.
pub const EIGEN_CLIP: f64 = 1e-12;

/// Euler step used when none is configured.
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    ell: Vec<f64>,
    m: Vec<f64>,
    gamma: Vec<f64>,
    sigma: DMatrix<f64>,
    sigma_factor: DMatrix<f64>,
}

impl DiffusionSpec {
    /// `m` and `gamma` are the diagonals of `M` and `Gamma`.
    pub fn new(ell: Vec<f64>, m: Vec<f64>, gamma: Vec<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let d = ell.len();
        if m.len() != d || gamma.len() != d || sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::Dimension(format!(
                "diffusion data: ell {d}, M {}, Gamma {}, Sigma {}x{}",
                m.len(),
                gamma.len(),
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let sigma_factor = psd_sqrt(&sigma)?;
        Ok(Self {
            ell,
            m,
            gamma,
            sigma,
            sigma_factor,
        })
    }

    pub fn from_derived(dq: &DerivedQuantities) -> Result<Self> {
        Self::new(dq.ell.clone(), dq.mu_pi.clone(), dq.gamma_pi.clone(), dq.sigma.clone())
    }

    pub fn dim(&self) -> usize {
        self.ell.len()
    }

    pub fn ell(&self) -> &[f64] {
        &self.ell
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_factor(&self) -> &DMatrix<f64> {
        &self.sigma_factor
    }

    /// Second-order coefficient `a = Sigma / 2`.
    pub fn a(&self) -> DMatrix<f64> {
        &self.sigma * 0.5
    }

    pub fn with_sigma(&self, sigma: DMatrix<f64>) -> Result<Self> {
        Self::new(self.ell.clone(), self.m.clone(), self.gamma.clone(), sigma)
    }

    pub fn drift(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.drift_into(x, u, &mut out);
        out
    }

    pub fn drift_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let s = x.iter().sum::<f64>().max(0.0);
        for i in 0..self.dim() {
            let q = s * u[i];
            out[i] = self.ell[i] - self.m[i] * (x[i] - q) - self.gamma[i] * q;
        }
    }
}

/// Symmetric PSD square root with eigenvalues clipped at zero.
pub fn psd_sqrt(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    if d == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let scale = sigma.amax().max(1.0);
    let asym = (sigma - sigma.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::Numerical(format!("covariance is not symmetric (defect {asym:e})")));
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-8 * scale {
        return Err(Error::Numerical(format!("covariance is not positive semidefinite (eigenvalue {min:e})")));
    }
    let roots = eig
        .eigenvalues
        .map(|l| if l <= EIGEN_CLIP { 0.0 } else { l.sqrt() });
    let v = &eig.eigenvectors;
    let factor = v * DMatrix::from_diagonal(&roots) * v.transpose();
    let defect = (&factor * factor.transpose() - &sym).amax();
    if defect > 1e-10 * scale.max(sym.amax()) && min >= 0.0 {
        return Err(Error::Numerical(format!("square-root defect {defect:e}")));
    }
    Ok(factor)
}

/// Scalar field with value, gradient and Hessian.
pub trait SmoothField {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// Central-difference derivatives of a plain function.
pub struct FiniteDifference<F> {
    pub f: F,
    pub h: f64,
}

impl<F: Fn(&[f64]) -> f64> FiniteDifference<F> {
    pub fn new(f: F, h: f64) -> Self {
        Self { f, h }
    }

    fn at(&self, x: &[f64], moves: &[(usize, f64)]) -> f64 {
        let mut y = x.to_vec();
        for &(i, s) in moves {
            y[i] += s;
        }
        (self.f)(&y)
    }
}

impl<F: Fn(&[f64]) -> f64> SmoothField for FiniteDifference<F> {
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let h = self.h;
        (0..x.len())
            .map(|i| (self.at(x, &[(i, h)]) - self.at(x, &[(i, -h)])) / (2.0 * h))
            .collect()
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let h = self.h;
        let f0 = (self.f)(x);
        DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                (self.at(x, &[(i, h)]) - 2.0 * f0 + self.at(x, &[(i, -h)])) / (h * h)
            } else {
                (self.at(x, &[(i, h), (j, h)]) - self.at(x, &[(i, h), (j, -h)]) - self.at(x, &[(i, -h), (j, h)])
                    + self.at(x, &[(i, -h), (j, -h)]))
                    / (4.0 * h * h)
            }
        })
    }
}

/// `L_u f(x) = <b(x,u), grad f> + sum_ij a_ij d_ij f`.
pub fn generator_apply(spec: &DiffusionSpec, f: &impl SmoothField, x: &[f64], u: &[f64]) -> f64 {
    let b = spec.drift(x, u);
    let g = f.gradient(x);
    let hess = f.hessian(x);
    let first: f64 = b.iter().zip(&g).map(|(bi, gi)| bi * gi).sum();
    let a = spec.a();
    first + a.component_mul(&hess).sum()
}

/// Euler path sampled on a uniform mesh (the last step may be shorter).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdePath {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// Control held on `[times[i], times[i+1])`; the last entry is the control at the terminal point.
    pub controls: Vec<Vec<f64>>,
    pub dt: f64,
}

impl SdePath {
    pub fn terminal(&self) -> &[f64] {
        self.points.last().expect("path has at least the initial point")
    }

    /// CSV with columns `t, X_1..X_d, U_1..U_d`.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        let d = self.points.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("X_{i}")));
        header.extend((1..=d).map(|i| format!("U_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for ((t, p), u) in self.times.iter().zip(&self.points).zip(&self.controls) {
            write!(w, "{t}")?;
            for v in p.iter().chain(u) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn step_plan(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be finite and nonnegative, got {horizon}")));
    }
    Ok((horizon / dt - 1e-9).ceil().max(0.0) as usize)
}

/// Euler–Maruyama steps streamed to `observer(t, h, x, u)`, where `(x, u)` is
/// the state and control held over `[t, t + h)`. Returns the terminal point.
pub fn simulate_sde_observed(
    spec: &DiffusionSpec,
    control: &MarkovControl,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    rng: &mut SimRng,
    mut observer: impl FnMut(f64, f64, &[f64], &[f64]),
) -> Result<Vec<f64>> {
    let d = spec.dim();
    if x0.len() != d || control.dim() != d {
        return Err(Error::Dimension(format!(
            "x0 has {} components, control {}, diffusion {d}",
            x0.len(),
            control.dim()
        )));
    }
    let steps = step_plan(horizon, dt)?;
    let mut x = x0.to_vec();
    let mut b = vec![0.0; d];
    let mut xi = DVector::zeros(d);
    let factor = spec.sigma_factor();
    for s in 0..steps {
        let t = s as f64 * dt;
        let h = (horizon - t).min(dt);
        let u = control.evaluate(&x)?;
        observer(t, h, &x, &u);
        spec.drift_into(&x, &u, &mut b);
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let noise = factor * &xi;
        let sq = h.sqrt();
        for i in 0..d {
            x[i] += b[i] * h + sq * noise[i];
        }
    }
    Ok(x)
}

pub fn simulate_sde(
    spec: &DiffusionSpec,
    control: &MarkovControl,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    rng: &mut SimRng,
) -> Result<SdePath> {
    let mut path = SdePath {
        times: Vec::new(),
        points: Vec::new(),
        controls: Vec::new(),
        dt,
    };
    let end = simulate_sde_observed(spec, control, x0, horizon, dt, rng, |t, _, x, u| {
        path.times.push(t);
        path.points.push(x.to_vec());
        path.controls.push(u.to_vec());
    })?;
    path.times.push(horizon);
    path.controls.push(control.evaluate(&end)?);
    path.points.push(end);
    Ok(path)
}
