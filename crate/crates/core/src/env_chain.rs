//! Background environment chain.
//!
//! The environment is a finite irreducible CTMC with generator `n^alpha Q`.
//! Everything the queueing model needs from it comes from three objects:
//! the stationary law `pi`, the deviation matrix
//!
//! ```text
//! Upsilon = (Pi - Q)^{-1} - Pi,      Pi = e pi'
//! ```
//!
//! which solves `Q Upsilon = Upsilon Q = Pi - I`, and the modulation
//! covariance `Theta` built from centered rate tables.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rates::RateTable;
use crate::rng::SimRng;

/// Numerical tolerances for environment analytics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvTolerances {
    /// Row-sum tolerance (relative to the row scale) when validating `Q`.
    pub row_sum: f64,
    /// Bound on `|pi'Q|_inf` and `|pi Upsilon|_inf`.
    pub stationary: f64,
    /// Bound on `|Q Upsilon - (Pi - I)|_inf`.
    pub deviation: f64,
}

impl Default for EnvTolerances {
    fn default() -> Self {
        Self {
            row_sum: 1e-9,
            stationary: 1e-10,
            deviation: 1e-9,
        }
    }
}

/// Validated environment generator `n^alpha Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvGenerator {
    q: DMatrix<f64>,
    alpha: f64,
    n: u64,
}

impl EnvGenerator {
    pub fn new(q: DMatrix<f64>, alpha: f64, n: u64) -> Result<Self> {
        validate_rate_matrix(&q, EnvTolerances::default().row_sum)?;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        Ok(Self { q, alpha, n })
    }

    pub fn from_rows(rows: &[Vec<f64>], alpha: f64, n: u64) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?, alpha, n)
    }

    pub fn states(&self) -> usize {
        self.q.nrows()
    }

    /// Unscaled generator `Q`.
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Switching speed `n^alpha`.
    pub fn speed(&self) -> f64 {
        (self.n as f64).powf(self.alpha)
    }

    pub fn with_n(&self, n: u64) -> Result<Self> {
        Self::new(self.q.clone(), self.alpha, n)
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.q.clone(), alpha, self.n)
    }

    pub fn analytics(&self) -> Result<EnvAnalytics> {
        EnvAnalytics::compute(&self.q, EnvTolerances::default())
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let k = rows.len();
    if k == 0 {
        return Err(Error::InvalidGenerator("empty matrix".into()));
    }
    if let Some(r) = rows.iter().position(|r| r.len() != k) {
        return Err(Error::InvalidGenerator(format!(
            "row {r} has {} entries, expected {k}",
            rows[r].len()
        )));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

/// Checks conservativeness, sign pattern, and irreducibility of a rate matrix.
pub fn validate_rate_matrix(q: &DMatrix<f64>, row_tol: f64) -> Result<()> {
    if q.nrows() == 0 || q.nrows() != q.ncols() {
        return Err(Error::InvalidGenerator(format!(
            "expected a non-empty square matrix, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let k = q.nrows();
    for i in 0..k {
        let mut sum = 0.0;
        let mut scale: f64 = 0.0;
        for j in 0..k {
            let v = q[(i, j)];
            if !v.is_finite() {
                return Err(Error::InvalidGenerator(format!("entry ({i},{j}) is not finite")));
            }
            if i != j && v < 0.0 {
                return Err(Error::InvalidGenerator(format!(
                    "off-diagonal entry ({i},{j}) = {v} is negative"
                )));
            }
            sum += v;
            scale = scale.max(v.abs());
        }
        if sum.abs() > row_tol * scale.max(1.0) {
            return Err(Error::InvalidGenerator(format!("row {i} sums to {sum:e}, not 0")));
        }
    }
    let unreachable = non_communicating_states(q);
    if !unreachable.is_empty() {
        return Err(Error::NotIrreducible { unreachable });
    }
    Ok(())
}

/// States that are not in the strongly connected component of state 0.
fn non_communicating_states(q: &DMatrix<f64>) -> Vec<usize> {
    let k = q.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..k {
                let w = if forward { q[(i, j)] } else { q[(j, i)] };
                if i != j && w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    let fwd = reach(true);
    let bwd = reach(false);
    (0..k).filter(|&j| !(fwd[j] && bwd[j])).collect()
}

/// Solves `pi'Q = 0`, `pi'e = 1` by replacing one balance equation with the normalization.
pub fn stationary_distribution(q: &DMatrix<f64>) -> Result<DVector<f64>> {
    validate_rate_matrix(q, EnvTolerances::default().row_sum)?;
    let k = q.nrows();
    if k == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    let mut a = q.transpose();
    let mut rhs = DVector::zeros(k);
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    rhs[k - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("stationary system is singular".into()))?;
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Numerical(format!(
            "stationary solve produced a non-positive entry: {:?}",
            pi.as_slice()
        )));
    }
    Ok(pi)
}

/// `Pi`: every row equal to `pi`.
pub fn pi_matrix(pi: &DVector<f64>) -> DMatrix<f64> {
    let k = pi.len();
    DMatrix::from_fn(k, k, |_, j| pi[j])
}

/// `Upsilon = (Pi - Q)^{-1} - Pi`.
pub fn deviation_matrix(q: &DMatrix<f64>, pi: &DVector<f64>) -> Result<DMatrix<f64>> {
    if pi.len() != q.nrows() {
        return Err(Error::Dimension(format!(
            "pi has length {}, generator has {} states",
            pi.len(),
            q.nrows()
        )));
    }
    let big_pi = pi_matrix(pi);
    let inv = (&big_pi - q)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("Pi - Q is singular".into()))?;
    let upsilon = inv - &big_pi;
    let k = q.nrows();
    let resid = (q * &upsilon - (&big_pi - DMatrix::identity(k, k))).abs().max();
    let scale = q.abs().max().max(1.0) * upsilon.abs().max().max(1.0);
    if resid > 1e-9 * scale {
        return Err(Error::Numerical(format!(
            "deviation matrix identity residual {resid:e} indicates ill-conditioning"
        )));
    }
    Ok(upsilon)
}

/// Modulation covariance.
///
/// With centered rates `c_i(k) = lambda_i(k) - rho_i mu_i(k)` the raw double sum
/// `2 sum_{k,l} c_i(k) c_j(l) pi_k Upsilon_kl` is symmetric only for reversible
/// environments; the symmetric part is returned, which is the covariance of the
/// limiting modulation noise in every case.
pub fn theta_matrix(
    lambda: &RateTable,
    mu: &RateTable,
    rho: &[f64],
    pi: &DVector<f64>,
    upsilon: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let d = lambda.classes();
    let k = pi.len();
    if mu.classes() != d || rho.len() != d {
        return Err(Error::Dimension(format!(
            "class counts differ: lambda {d}, mu {}, rho {}",
            mu.classes(),
            rho.len()
        )));
    }
    if lambda.states() != k || mu.states() != k || upsilon.nrows() != k || upsilon.ncols() != k {
        return Err(Error::Dimension(format!(
            "environment state counts differ: pi {k}, lambda {}, mu {}, upsilon {}x{}",
            lambda.states(),
            mu.states(),
            upsilon.nrows(),
            upsilon.ncols()
        )));
    }
    let centered = DMatrix::from_fn(d, k, |i, s| lambda.get(i, s) - rho[i] * mu.get(i, s));
    // D_pi Upsilon
    let weighted = DMatrix::from_fn(k, k, |s, l| pi[s] * upsilon[(s, l)]);
    let raw = &centered * weighted * centered.transpose() * 2.0;
    Ok((&raw + raw.transpose()) * 0.5)
}

/// Stationary law, deviation matrix and `Pi` of an environment generator.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvAnalytics {
    pub pi: DVector<f64>,
    pub upsilon: DMatrix<f64>,
    pub big_pi: DMatrix<f64>,
}

impl EnvAnalytics {
    pub fn compute(q: &DMatrix<f64>, tol: EnvTolerances) -> Result<Self> {
        let pi = stationary_distribution(q)?;
        let upsilon = deviation_matrix(q, &pi)?;
        let analytics = Self {
            big_pi: pi_matrix(&pi),
            pi,
            upsilon,
        };
        let r = analytics.residuals(q);
        if r.balance > tol.stationary * q.abs().max().max(1.0)
            || r.deviation > tol.deviation * q.abs().max().max(1.0) * analytics.upsilon.abs().max().max(1.0)
            || r.centering > tol.stationary * analytics.upsilon.abs().max().max(1.0)
        {
            return Err(Error::Numerical(format!("environment analytics residuals too large: {r:?}")));
        }
        Ok(analytics)
    }

    pub fn residuals(&self, q: &DMatrix<f64>) -> EnvResiduals {
        let k = q.nrows();
        let target = &self.big_pi - DMatrix::identity(k, k);
        EnvResiduals {
            balance: (self.pi.transpose() * q).abs().max(),
            deviation: (q * &self.upsilon - &target)
                .abs()
                .max()
                .max((&self.upsilon * q - &target).abs().max()),
            centering: (self.pi.transpose() * &self.upsilon).abs().max(),
        }
    }
}

/// Max-abs residuals of the defining identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvResiduals {
    /// `|pi'Q|_inf`
    pub balance: f64,
    /// `max(|Q Upsilon - (Pi - I)|, |Upsilon Q - (Pi - I)|)`
    pub deviation: f64,
    /// `|pi'Upsilon|_inf`
    pub centering: f64,
}

/// Piecewise-constant environment path on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvPath {
    /// Entry epochs; `times[0] = 0`.
    pub times: Vec<f64>,
    pub states: Vec<usize>,
    pub horizon: f64,
}

impl EnvPath {
    pub fn jumps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn state_at(&self, t: f64) -> usize {
        let idx = self.times.partition_point(|&s| s <= t);
        self.states[idx.saturating_sub(1)]
    }

    /// Fraction of `[0, horizon]` spent in each state.
    pub fn occupation(&self, k: usize) -> Vec<f64> {
        let mut occ = vec![0.0; k];
        for (i, &s) in self.states.iter().enumerate() {
            let end = self.times.get(i + 1).copied().unwrap_or(self.horizon);
            occ[s] += end - self.times[i];
        }
        occ.iter_mut().for_each(|o| *o /= self.horizon);
        occ
    }
}

/// Draws an initial state from `pi`.
pub fn sample_initial(pi: &[f64], rng: &mut SimRng) -> usize {
    sample_index(pi, pi.iter().sum(), rng)
}

pub(crate) fn sample_index(weights: &[f64], total: f64, rng: &mut SimRng) -> usize {
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    last
}

/// Exact jump-chain sample of the environment with generator `n^alpha Q`,
/// started from its stationary law.
pub fn sample_env_path(env: &EnvGenerator, horizon: f64, rng: &mut SimRng) -> Result<EnvPath> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let pi = stationary_distribution(env.q())?;
    let speed = env.speed();
    let k = env.states();
    let mut state = sample_initial(pi.as_slice(), rng);
    let mut path = EnvPath {
        times: vec![0.0],
        states: vec![state],
        horizon,
    };
    let mut t = 0.0;
    loop {
        let out_rate = -env.q()[(state, state)] * speed;
        if out_rate <= 0.0 {
            break;
        }
        t += Exp::new(out_rate).expect("positive rate").sample(rng);
        if t >= horizon {
            break;
        }
        let weights: Vec<f64> = (0..k)
            .map(|j| if j == state { 0.0 } else { env.q()[(state, j)] })
            .collect();
        state = sample_index(&weights, -env.q()[(state, state)], rng);
        path.times.push(t);
        path.states.push(state);
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn q2(a: f64, b: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-a, a, b, -b])
    }

    #[test]
    fn symmetric_chain_is_uniform() {
        let pi = stationary_distribution(&q2(1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(pi[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn asymmetric_two_state() {
        // pi' Q = 0 with Q = [[-2, 2], [1, -1]]: -2 p0 + p1 = 0, p0 + p1 = 1.
        let pi = stationary_distribution(&q2(2.0, 1.0)).unwrap();
        assert_abs_diff_eq!(pi[0], 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pi[1], 2.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn single_state() {
        let q = DMatrix::from_element(1, 1, 0.0);
        let pi = stationary_distribution(&q).unwrap();
        assert_eq!(pi.as_slice(), &[1.0]);
        let ups = deviation_matrix(&q, &pi).unwrap();
        assert_eq!(ups[(0, 0)], 0.0);
    }

    #[test]
    fn reducible_generator_names_states() {
        // state 2 is absorbing
        let q = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 1.0, -2.0, 1.0, 0.0, 0.0, 0.0]);
        match stationary_distribution(&q) {
            Err(Error::NotIrreducible { unreachable }) => assert_eq!(unreachable, vec![2]),
            other => panic!("expected irreducibility error, got {other:?}"),
        }
    }

    #[test]
    fn non_conservative_rows_rejected() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 1.0, -1.0]);
        assert!(matches!(stationary_distribution(&q), Err(Error::InvalidGenerator(_))));
        let q = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, -1.0]);
        assert!(matches!(stationary_distribution(&q), Err(Error::InvalidGenerator(_))));
    }

    #[test]
    fn symmetric_deviation_matrix() {
        let q = q2(1.0, 1.0);
        let pi = stationary_distribution(&q).unwrap();
        let ups = deviation_matrix(&q, &pi).unwrap();
        // direct inversion: Pi - Q = [[1.5, -0.5], [-0.5, 1.5]], inverse = [[0.75, 0.25], [0.25, 0.75]]
        let expected = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((ups - expected).abs().max() < 1e-12);
    }

    #[test]
    fn theta_worked_example() {
        let q = q2(1.0, 1.0);
        let pi = stationary_distribution(&q).unwrap();
        let ups = deviation_matrix(&q, &pi).unwrap();
        let lambda = RateTable::new(vec![vec![1.5, 0.5]]).unwrap();
        let mu = RateTable::new(vec![vec![1.0, 1.0]]).unwrap();
        let theta = theta_matrix(&lambda, &mu, &[1.0], &pi, &ups).unwrap();
        // brute-force double sum
        let c = [0.5, -0.5];
        let mut brute = 0.0;
        for k in 0..2 {
            for l in 0..2 {
                brute += 2.0 * c[k] * c[l] * pi[k] * ups[(k, l)];
            }
        }
        assert_abs_diff_eq!(brute, 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(theta[(0, 0)], brute, epsilon = 1e-14);
    }

    #[test]
    fn theta_vanishes_without_modulation() {
        let q = DMatrix::from_element(1, 1, 0.0);
        let pi = stationary_distribution(&q).unwrap();
        let ups = deviation_matrix(&q, &pi).unwrap();
        let lambda = RateTable::new(vec![vec![1.0], vec![2.0]]).unwrap();
        let mu = RateTable::new(vec![vec![3.0], vec![1.0]]).unwrap();
        let theta = theta_matrix(&lambda, &mu, &[0.5, 0.5], &pi, &ups).unwrap();
        assert_eq!(theta.abs().max(), 0.0);

        // centered rates: lambda = rho mu in every state
        let q = q2(1.0, 3.0);
        let pi = stationary_distribution(&q).unwrap();
        let ups = deviation_matrix(&q, &pi).unwrap();
        let mu = RateTable::new(vec![vec![2.0, 4.0]]).unwrap();
        let lambda = mu.map(|_, _, v| 0.5 * v);
        let theta = theta_matrix(&lambda, &mu, &[0.5], &pi, &ups).unwrap();
        assert!(theta.abs().max() < 1e-15);
    }

    #[test]
    fn theta_dimension_mismatch() {
        let q = q2(1.0, 1.0);
        let pi = stationary_distribution(&q).unwrap();
        let ups = deviation_matrix(&q, &pi).unwrap();
        let lambda = RateTable::new(vec![vec![1.0, 1.0, 1.0]]).unwrap();
        let mu = RateTable::new(vec![vec![1.0, 1.0, 1.0]]).unwrap();
        assert!(matches!(
            theta_matrix(&lambda, &mu, &[1.0], &pi, &ups),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn single_state_path_has_no_jumps() {
        let env = EnvGenerator::new(DMatrix::from_element(1, 1, 0.0), 1.0, 100).unwrap();
        let mut rng = crate::rng::stream(1, 0);
        let path = sample_env_path(&env, 50.0, &mut rng).unwrap();
        assert_eq!(path.jumps(), 0);
        assert_eq!(path.occupation(1), vec![1.0]);
    }

    #[test]
    fn path_lookup() {
        let path = EnvPath {
            times: vec![0.0, 1.0, 2.5],
            states: vec![0, 1, 0],
            horizon: 4.0,
        };
        assert_eq!(path.state_at(0.5), 0);
        assert_eq!(path.state_at(1.0), 1);
        assert_eq!(path.state_at(3.0), 0);
        let occ = path.occupation(2);
        assert_abs_diff_eq!(occ[0], 2.5 / 4.0, epsilon = 1e-15);
    }
}
