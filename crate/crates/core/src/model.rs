//! Model primitives and their derived limit coefficients.
//!
//! Prelimit rates are generated from the limit coefficients,
//!
//! ```text
//! lambda^n_i(k) = n lambda_i(k) + n^beta lambda_hat_i(k)
//! mu^n_i(k)     = mu_i(k) + n^(beta - 1) mu_hat_i(k)
//! gamma^n_i(k)  = gamma_i(k)
//! ```
//!
//! with `beta = max(1/2, 1 - alpha/2)`, so the averaged Halfin-Whitt scaling
//! holds exactly at every `n`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env_chain::{theta_matrix, EnvAnalytics, EnvGenerator};
use crate::error::{Error, Result};
use crate::rates::RateTable;

/// Tolerance on `|sum_i rho_i - 1|`.
pub const CRITICAL_LOAD_TOL: f64 = 1e-9;

pub fn beta_for(alpha: f64) -> f64 {
    0.5_f64.max(1.0 - alpha / 2.0)
}

/// Covariance regime of the limiting noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseRegime {
    /// `alpha > 1`: arrival/service noise only (`Lambda^2`).
    Poisson,
    /// `alpha = 1`: both sources (`Lambda^2 + Theta`).
    Balanced,
    /// `alpha < 1`: modulation noise only (`Theta`).
    Modulation,
}

impl NoiseRegime {
    pub fn for_alpha(alpha: f64) -> Self {
        if alpha > 1.0 {
            Self::Poisson
        } else if alpha == 1.0 {
            Self::Balanced
        } else {
            Self::Modulation
        }
    }
}

impl fmt::Display for NoiseRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Poisson => "alpha>1: Lambda^2",
            Self::Balanced => "alpha=1: Lambda^2+Theta",
            Self::Modulation => "alpha<1: Theta",
        })
    }
}

/// `sigma' sigma` for the given regime.
pub fn assemble_sigma(regime: NoiseRegime, lambda_sq: &DMatrix<f64>, theta: &DMatrix<f64>) -> DMatrix<f64> {
    match regime {
        NoiseRegime::Poisson => lambda_sq.clone(),
        NoiseRegime::Balanced => lambda_sq + theta,
        NoiseRegime::Modulation => theta.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub env: EnvGenerator,
    pub lambda: RateTable,
    pub mu: RateTable,
    pub gamma: RateTable,
    pub lambda_hat: RateTable,
    pub mu_hat: RateTable,
}

impl ModelParams {
    pub fn new(
        env: EnvGenerator,
        lambda: RateTable,
        mu: RateTable,
        gamma: RateTable,
        lambda_hat: RateTable,
        mu_hat: RateTable,
    ) -> Result<Self> {
        let d = lambda.classes();
        let k = env.states();
        for (name, t) in [
            ("lambda", &lambda),
            ("mu", &mu),
            ("gamma", &gamma),
            ("lambda_hat", &lambda_hat),
            ("mu_hat", &mu_hat),
        ] {
            if t.classes() != d || t.states() != k {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {d}x{k} (classes x environment states)",
                    t.classes(),
                    t.states()
                )));
            }
        }
        Ok(Self {
            env,
            lambda,
            mu,
            gamma,
            lambda_hat,
            mu_hat,
        })
    }

    /// Model with no second-order terms.
    pub fn first_order(env: EnvGenerator, lambda: RateTable, mu: RateTable, gamma: RateTable) -> Result<Self> {
        let zero = RateTable::filled(lambda.classes(), lambda.states(), 0.0);
        Self::new(env, lambda, mu, gamma, zero.clone(), zero)
    }

    pub fn classes(&self) -> usize {
        self.lambda.classes()
    }

    pub fn states(&self) -> usize {
        self.env.states()
    }

    pub fn n(&self) -> u64 {
        self.env.n()
    }

    pub fn alpha(&self) -> f64 {
        self.env.alpha()
    }

    pub fn beta(&self) -> f64 {
        beta_for(self.alpha())
    }

    pub fn with_n(&self, n: u64) -> Result<Self> {
        Ok(Self {
            env: self.env.with_n(n)?,
            ..self.clone()
        })
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Ok(Self {
            env: self.env.with_alpha(alpha)?,
            ..self.clone()
        })
    }

    pub fn prelimit(&self) -> PrelimitRates {
        let n = self.n() as f64;
        let beta = self.beta();
        let nb = n.powf(beta);
        let nb1 = n.powf(beta - 1.0);
        PrelimitRates {
            lambda: self.lambda.map(|i, k, v| n * v + nb * self.lambda_hat.get(i, k)),
            mu: self.mu.map(|i, k, v| v + nb1 * self.mu_hat.get(i, k)),
            gamma: self.gamma.clone(),
        }
    }

    /// Checks every positivity and loading constraint; never stops at the first failure.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for (name, t) in [("lambda", &self.lambda), ("mu", &self.mu), ("gamma", &self.gamma)] {
            for (i, k, v) in t.iter() {
                if !(v > 0.0 && v.is_finite()) {
                    violations.push(Violation::NonPositiveRate {
                        table: name.into(),
                        class: i,
                        state: k,
                        value: v,
                    });
                }
            }
        }
        for (name, t) in [("lambda_hat", &self.lambda_hat), ("mu_hat", &self.mu_hat)] {
            for (i, k, v) in t.iter() {
                if !v.is_finite() {
                    violations.push(Violation::NonFinite {
                        table: name.into(),
                        class: i,
                        state: k,
                    });
                }
            }
        }
        let pre = self.prelimit();
        for (name, t) in [("lambda^n", &pre.lambda), ("mu^n", &pre.mu)] {
            for (i, k, v) in t.iter() {
                if !(v > 0.0) {
                    violations.push(Violation::NonPositiveRate {
                        table: name.into(),
                        class: i,
                        state: k,
                        value: v,
                    });
                }
            }
        }
        match self.env.analytics() {
            Ok(an) => {
                let pi = an.pi.as_slice();
                let lp = self.lambda.average(pi);
                let mp = self.mu.average(pi);
                let total: f64 = lp.iter().zip(&mp).map(|(l, m)| l / m).sum();
                if !((total - 1.0).abs() <= CRITICAL_LOAD_TOL) {
                    violations.push(Violation::CriticalLoad { total });
                }
            }
            Err(e) => violations.push(Violation::Environment(e.to_string())),
        }
        ValidationReport { violations }
    }

    pub fn derive(&self) -> Result<DerivedQuantities> {
        let report = self.validate();
        if !report.is_ok() {
            return Err(Error::Validation(report));
        }
        let analytics = self.env.analytics()?;
        let pi = analytics.pi.as_slice();
        let d = self.classes();
        let alpha = self.alpha();
        let beta = self.beta();
        let lambda_pi = self.lambda.average(pi);
        let mu_pi = self.mu.average(pi);
        let gamma_pi = self.gamma.average(pi);
        let rho: Vec<f64> = lambda_pi.iter().zip(&mu_pi).map(|(l, m)| l / m).collect();
        let lhat_pi = self.lambda_hat.average(pi);
        let mhat_pi = self.mu_hat.average(pi);
        let ell: Vec<f64> = (0..d).map(|i| lhat_pi[i] - rho[i] * mhat_pi[i]).collect();
        let theta = theta_matrix(&self.lambda, &self.mu, &rho, &analytics.pi, &analytics.upsilon)?;
        let lambda_sq = DMatrix::from_diagonal(&DVector::from_iterator(d, lambda_pi.iter().map(|l| 2.0 * l)));
        let regime = NoiseRegime::for_alpha(alpha);
        let sigma = assemble_sigma(regime, &lambda_sq, &theta);
        let pre = self.prelimit();
        Ok(DerivedQuantities {
            d,
            n: self.n(),
            alpha,
            beta,
            regime,
            bar_lambda_n: pre.lambda.average(pi),
            bar_mu_n: pre.mu.average(pi),
            bar_gamma_n: pre.gamma.average(pi),
            lambda_pi,
            mu_pi,
            gamma_pi,
            rho,
            ell,
            lambda_hat_pi: lhat_pi,
            mu_hat_pi: mhat_pi,
            lambda_sq,
            theta,
            sigma,
            analytics,
            prelimit: pre,
        })
    }
}

/// Rates of the `n`-th system.
#[derive(Debug, Clone, PartialEq)]
pub struct PrelimitRates {
    pub lambda: RateTable,
    pub mu: RateTable,
    pub gamma: RateTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivedQuantities {
    pub d: usize,
    pub n: u64,
    pub alpha: f64,
    pub beta: f64,
    pub regime: NoiseRegime,
    pub lambda_pi: Vec<f64>,
    pub mu_pi: Vec<f64>,
    pub gamma_pi: Vec<f64>,
    pub rho: Vec<f64>,
    pub ell: Vec<f64>,
    pub lambda_hat_pi: Vec<f64>,
    pub mu_hat_pi: Vec<f64>,
    /// `Lambda^2 = diag(2 lambda^pi)`.
    pub lambda_sq: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    /// Covariance of the limiting Brownian motion.
    pub sigma: DMatrix<f64>,
    pub bar_lambda_n: Vec<f64>,
    pub bar_mu_n: Vec<f64>,
    pub bar_gamma_n: Vec<f64>,
    pub analytics: EnvAnalytics,
    pub prelimit: PrelimitRates,
}

impl DerivedQuantities {
    pub fn m_diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.mu_pi))
    }

    pub fn gamma_diag(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.gamma_pi))
    }

    /// `n^(1-beta) (1 - rho^n)` from the averaged prelimit rates.
    pub fn load_gap(&self) -> f64 {
        let n = self.n as f64;
        let rho_n: f64 = self
            .bar_lambda_n
            .iter()
            .zip(&self.bar_mu_n)
            .map(|(l, m)| l / m)
            .sum::<f64>()
            / n;
        n.powf(1.0 - self.beta) * (1.0 - rho_n)
    }

    /// Large-`n` limit of [`Self::load_gap`]: `sum_i (rho_i mu_hat_i - lambda_hat_i) / mu_i`.
    pub fn load_gap_limit(&self) -> f64 {
        (0..self.d)
            .map(|i| (self.rho[i] * self.mu_hat_pi[i] - self.lambda_hat_pi[i]) / self.mu_pi[i])
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    NonPositiveRate {
        table: String,
        class: usize,
        state: usize,
        value: f64,
    },
    NonFinite {
        table: String,
        class: usize,
        state: usize,
    },
    CriticalLoad {
        total: f64,
    },
    Environment(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonPositiveRate {
                table,
                class,
                state,
                value,
            } => write!(f, "positivity violated: {table}[{class}][{state}] = {value}"),
            Self::NonFinite { table, class, state } => {
                write!(f, "non-finite entry: {table}[{class}][{state}]")
            }
            Self::CriticalLoad { total } => {
                write!(f, "critical load violated: sum of rho = {total}")
            }
            Self::Environment(msg) => write!(f, "environment: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("ok");
        }
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_env(n: u64, alpha: f64) -> EnvGenerator {
        EnvGenerator::new(DMatrix::from_element(1, 1, 0.0), alpha, n).unwrap()
    }

    fn table(rows: &[&[f64]]) -> RateTable {
        RateTable::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn critically_loaded_two_class_accepted() {
        let p = ModelParams::first_order(
            single_env(100, 1.0),
            table(&[&[1.0], &[1.0]]),
            table(&[&[2.0], &[2.0]]),
            table(&[&[1.0], &[1.0]]),
        )
        .unwrap();
        assert!(p.validate().is_ok());
        let dq = p.derive().unwrap();
        assert_eq!(dq.rho, vec![0.5, 0.5]);
    }

    #[test]
    fn underloaded_rejected() {
        let p = ModelParams::first_order(
            single_env(100, 1.0),
            table(&[&[0.9]]),
            table(&[&[1.0]]),
            table(&[&[1.0]]),
        )
        .unwrap();
        let report = p.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(report.to_string().contains("critical load violated"));
        assert!(matches!(p.derive(), Err(Error::Validation(_))));
    }

    #[test]
    fn all_violations_reported() {
        let p = ModelParams::first_order(
            single_env(100, 1.0),
            table(&[&[0.9], &[1.0]]),
            table(&[&[1.0], &[-1.0]]),
            table(&[&[0.0], &[1.0]]),
        )
        .unwrap();
        let report = p.validate();
        let text = report.to_string();
        assert!(text.contains("gamma[0][0]"), "{text}");
        assert!(text.contains("mu[1][0]"), "{text}");
        assert!(text.contains("critical load"), "{text}");
    }

    #[test]
    fn beta_formula() {
        assert_eq!(beta_for(2.0), 0.5);
        assert_eq!(beta_for(0.5), 0.75);
        assert_eq!(beta_for(1.0), 0.5);
    }

    #[test]
    fn sigma_regimes() {
        let p = ModelParams::first_order(
            single_env(100, 2.0),
            table(&[&[1.0], &[1.0]]),
            table(&[&[2.0], &[2.0]]),
            table(&[&[1.0], &[1.0]]),
        )
        .unwrap();
        let dq = p.derive().unwrap();
        assert_eq!(dq.regime, NoiseRegime::Poisson);
        assert_eq!(dq.sigma, DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0])));
        assert_eq!(dq.ell, vec![0.0, 0.0]);
    }

    #[test]
    fn prelimit_rates_follow_scaling() {
        let env = EnvGenerator::new(DMatrix::from_element(1, 1, 0.0), 1.0, 400).unwrap();
        let p = ModelParams::new(
            env,
            table(&[&[1.0]]),
            table(&[&[1.0]]),
            table(&[&[0.5]]),
            table(&[&[2.0]]),
            table(&[&[3.0]]),
        )
        .unwrap();
        let pre = p.prelimit();
        assert_eq!(pre.lambda.get(0, 0), 400.0 + 20.0 * 2.0);
        assert_eq!(pre.mu.get(0, 0), 1.0 + 3.0 / 20.0);
        assert_eq!(pre.gamma.get(0, 0), 0.5);
    }
}
