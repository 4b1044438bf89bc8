//! Canned multi-step studies.

use mmq_core::cost::replicate;
use mmq_core::diffusion::simulate_sde_observed;
use mmq_core::rng::{stream, stream_index};
use mmq_core::sim::{fluid_point, scale_state, SimOptions};
use mmq_core::nalgebra::DMatrix;
use mmq_core::stats::{mean, variance};
use mmq_core::{DiffusionSpec, MarkovControl, ModelParams, NoiseRegime, Result, SchedulingPolicy, Simulator};
use serde::{Deserialize, Serialize};

pub const TAG_FCLT: u16 = 21;
pub const TAG_FCLT_REFERENCE: u16 = 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub replications: usize,
}

impl Marginal {
    fn of(samples: &[Vec<f64>]) -> Self {
        let d = samples.first().map_or(0, Vec::len);
        let col = |i: usize| samples.iter().map(|s| s[i]).collect::<Vec<_>>();
        Self {
            mean: (0..d).map(|i| mean(&col(i))).collect(),
            variance: (0..d).map(|i| variance(&col(i))).collect(),
            replications: samples.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcltRow {
    pub n: u64,
    pub prelimit: Marginal,
    /// Largest per-class absolute error against the reference.
    pub mean_error: f64,
    pub variance_error: f64,
    pub relative_variance_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcltReport {
    pub t_star: f64,
    pub alpha: f64,
    pub beta: f64,
    pub regime: NoiseRegime,
    pub sigma: Vec<Vec<f64>>,
    pub lambda_sq: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub reference: Marginal,
    pub reference_dt: f64,
    pub rows: Vec<FcltRow>,
    /// Variance errors strictly decrease along `n_list`.
    pub variance_error_decreasing: bool,
    pub note: String,
}

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Marginal law of the scaled state at `t_star` under static priority for each
/// `n`, against an Euler reference of the limit under the matched control
/// (the whole queue in the last class).
#[allow(clippy::too_many_arguments)]
pub fn fclt_check(
    params: &ModelParams,
    n_list: &[u64],
    t_star: f64,
    reps: usize,
    reference_reps: usize,
    dt: f64,
    seed: u64,
) -> Result<FcltReport> {
    if n_list.len() < 3 {
        return Err(mmq_core::Error::InvalidArgument(format!(
            "fclt check needs at least 3 system sizes, got {}",
            n_list.len()
        )));
    }
    if reps < 2 || reference_reps < 2 {
        return Err(mmq_core::Error::InvalidArgument("variance estimates need at least 2 replications".into()));
    }
    let dq = params.derive()?;
    let spec = DiffusionSpec::from_derived(&dq)?;
    let d = dq.d;
    let control = MarkovControl::last_class(d);
    let x0 = vec![0.0; d];
    let reference = replicate(reference_reps, |r| {
        let mut rng = stream(seed, stream_index(TAG_FCLT_REFERENCE, 0, r as u32));
        simulate_sde_observed(&spec, &control, &x0, t_star, dt, &mut rng, |_, _, _, _| {})
    })?;
    let reference = Marginal::of(&reference);
    let mut out = Vec::with_capacity(n_list.len());
    for (slot, &n) in n_list.iter().enumerate() {
        let pn = params.with_n(n)?;
        let beta = pn.beta();
        let sim = Simulator::new(&pn, SchedulingPolicy::StaticPriority)?;
        let start = fluid_point(n, &dq.rho);
        let samples = replicate(reps, |r| {
            let mut rng = stream(seed, stream_index(TAG_FCLT, slot as u16, r as u32));
            let s = sim.run(t_star, &start, &mut rng, &SimOptions::default(), &mut ())?;
            Ok(scale_state(&s.final_state.x, n, beta, &dq.rho))
        })?;
        let m = Marginal::of(&samples);
        let err = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let rel = m
            .variance
            .iter()
            .zip(&reference.variance)
            .map(|(x, y)| if *y > 0.0 { (x - y).abs() / y } else { (x - y).abs() })
            .fold(0.0, f64::max);
        out.push(FcltRow {
            n,
            mean_error: err(&m.mean, &reference.mean),
            variance_error: err(&m.variance, &reference.variance),
            relative_variance_error: rel,
            prelimit: m,
        });
    }
    let decreasing = out.windows(2).all(|w| w[1].variance_error < w[0].variance_error);
    Ok(FcltReport {
        t_star,
        alpha: dq.alpha,
        beta: dq.beta,
        regime: dq.regime,
        sigma: rows(&dq.sigma),
        lambda_sq: rows(&dq.lambda_sq),
        theta: rows(&dq.theta),
        reference,
        reference_dt: dt,
        rows: out,
        variance_error_decreasing: decreasing,
        note: "prelimit starts at the rounded fluid point with a stationary environment draw; the reference starts at 0".into(),
    })
}
