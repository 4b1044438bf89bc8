//! Banded LU without pivoting, for M-matrices arising from monotone schemes.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct BandedMatrix {
    n: usize,
    bw: usize,
    width: usize,
    data: Vec<f64>,
    factored: bool,
}

impl BandedMatrix {
    /// Square matrix of order `n` with entries only where `|i - j| <= bw`.
    pub fn zeros(n: usize, bw: usize) -> Self {
        let width = 2 * bw + 1;
        Self {
            n,
            bw,
            width,
            data: vec![0.0; n * width],
            factored: false,
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.bw);
        i * self.width + (j + self.bw - i)
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    #[cfg(test)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// In-place Doolittle factorization.
    pub fn factor(&mut self) -> Result<()> {
        let (n, bw, w) = (self.n, self.bw, self.width);
        for k in 0..n {
            let pivot = self.data[k * w + bw];
            if !(pivot.abs() > 1e-300) || !pivot.is_finite() {
                return Err(Error::Numerical(format!("zero pivot at row {k} of banded system")));
            }
            let last = (k + bw).min(n - 1);
            for i in k + 1..=last {
                let lik_slot = i * w + (k + bw - i);
                let l = self.data[lik_slot] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[lik_slot] = l;
                let row_k = k * w + bw - k;
                let row_i = i * w + bw - i;
                for j in k + 1..=last {
                    let v = self.data[row_k + j];
                    if v != 0.0 {
                        self.data[row_i + j] -= l * v;
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert!(self.factored, "matrix must be factored before solving");
        let (n, bw, w) = (self.n, self.bw, self.width);
        let mut y = rhs.to_vec();
        for i in 0..n {
            let start = i.saturating_sub(bw);
            let base = i * w + bw - i;
            let mut s = y[i];
            for j in start..i {
                s -= self.data[base + j] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let end = (i + bw).min(n - 1);
            let base = i * w + bw - i;
            let mut s = y[i];
            for j in i + 1..=end {
                s -= self.data[base + j] * y[j];
            }
            y[i] = s / self.data[base + i];
        }
        y
    }
}
