//! Small sample-statistics helpers shared by the estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normal quantile for two-sided 95% intervals.
pub const Z95: f64 = 1.96;

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    /// `1.96 * std_error`
    pub half_width: f64,
    /// Independent replications or batches behind the estimate.
    pub samples: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            half_width: 0.0,
            samples: 1,
        }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let m = mean(xs);
        let se = if n > 1 { (variance(xs) / n as f64).sqrt() } else { 0.0 };
        Self {
            mean: m,
            std_error: se,
            half_width: Z95 * se,
            samples: n,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        (v - self.mean).abs() <= self.half_width
    }

    pub fn within_se(&self, v: f64, k: f64) -> bool {
        (v - self.mean).abs() <= k * self.std_error
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            mean: c * self.mean,
            std_error: c.abs() * self.std_error,
            half_width: c.abs() * self.half_width,
            samples: self.samples,
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Accumulates a time integral into equal-length batches over `[start, end]`.
#[derive(Debug, Clone)]
pub struct TimeBatches {
    start: f64,
    width: f64,
    sums: Vec<f64>,
}

impl TimeBatches {
    pub fn new(start: f64, end: f64, batches: usize) -> Result<Self> {
        if batches < 10 {
            return Err(Error::InvalidArgument(format!(
                "batch-means estimates need at least 10 batches, got {batches}"
            )));
        }
        if !(end > start) {
            return Err(Error::InvalidArgument(format!(
                "averaging window [{start}, {end}] is empty"
            )));
        }
        Ok(Self {
            start,
            width: (end - start) / batches as f64,
            sums: vec![0.0; batches],
        })
    }

    /// Adds `value` held constant on `[t0, t1)`.
    pub fn add(&mut self, t0: f64, t1: f64, value: f64) {
        let nb = self.sums.len();
        let end = self.start + self.width * nb as f64;
        let mut a = t0.max(self.start);
        let b = t1.min(end);
        while a < b {
            let idx = (((a - self.start) / self.width) as usize).min(nb - 1);
            let edge = (self.start + self.width * (idx + 1) as f64).min(b);
            let edge = if edge <= a { b } else { edge };
            self.sums[idx] += value * (edge - a);
            a = edge;
        }
    }

    pub fn batch_means(&self) -> Vec<f64> {
        self.sums.iter().map(|s| s / self.width).collect()
    }

    /// Time average over the whole window with a batch-means interval.
    pub fn estimate(&self) -> Estimate {
        let means = self.batch_means();
        let mut e = Estimate::from_samples(&means);
        e.mean = self.sums.iter().sum::<f64>() / (self.width * self.sums.len() as f64);
        e
    }
}
