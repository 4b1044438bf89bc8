use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangular lattice `lo + h * idx` containing the origin as a lattice point.
///
/// Flat indices run with the first axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lo: Vec<f64>,
    h: Vec<f64>,
    counts: Vec<usize>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(lo: &[f64], hi: &[f64], h: &[f64]) -> Result<Self> {
        let d = lo.len();
        if d == 0 || hi.len() != d || h.len() != d {
            return Err(Error::Dimension(format!(
                "grid bounds have lengths lo={}, hi={}, h={}",
                lo.len(),
                hi.len(),
                h.len()
            )));
        }
        let mut counts = Vec::with_capacity(d);
        for i in 0..d {
            if !(h[i] > 0.0) {
                return Err(Error::InvalidArgument(format!("mesh width h[{i}] = {} must be positive", h[i])));
            }
            if !(lo[i] <= 0.0 && hi[i] >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "grid box [{}, {}] on axis {i} does not contain the origin",
                    lo[i], hi[i]
                )));
            }
            let below = -lo[i] / h[i];
            let span = (hi[i] - lo[i]) / h[i];
            if (below - below.round()).abs() > 1e-9 * below.max(1.0) || (span - span.round()).abs() > 1e-9 * span.max(1.0) {
                return Err(Error::InvalidArgument(format!(
                    "axis {i}: bounds [{}, {}] are not multiples of h = {}",
                    lo[i], hi[i], h[i]
                )));
            }
            counts.push(span.round() as usize + 1);
        }
        let mut strides = Vec::with_capacity(d);
        let mut s = 1;
        for &c in &counts {
            strides.push(s);
            s *= c;
        }
        Ok(Self {
            lo: lo.iter().zip(h).map(|(l, hh)| (l / hh).round() * hh).collect(),
            h: h.to_vec(),
            counts,
            strides,
        })
    }

    /// Box `[-w_i, w_i]` per axis.
    pub fn symmetric(half_width: &[f64], h: &[f64]) -> Result<Self> {
        let lo: Vec<f64> = half_width.iter().map(|w| -w).collect();
        Self::new(&lo, half_width, h)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.lo[i] + self.h[i] * (self.counts[i] - 1) as f64)
            .collect()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut c = Vec::with_capacity(self.dim());
        for &n in &self.counts {
            c.push(idx % n);
            idx /= n;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.coords(idx)
            .iter()
            .enumerate()
            .map(|(i, &c)| self.lo[i] + self.h[i] * c as f64)
            .collect()
    }

    /// Neighbor `idx + step * e_axis`, if it lies in the box.
    pub fn neighbor(&self, idx: usize, axis: usize, step: i64) -> Option<usize> {
        let c = (idx / self.strides[axis]) % self.counts[axis];
        let target = c as i64 + step;
        if target < 0 || target >= self.counts[axis] as i64 {
            return None;
        }
        Some((idx as i64 + step * self.strides[axis] as i64) as usize)
    }

    pub fn origin_index(&self) -> usize {
        let coords: Vec<usize> = (0..self.dim())
            .map(|i| (-self.lo[i] / self.h[i]).round() as usize)
            .collect();
        self.index(&coords)
    }

    /// Largest flat-index offset reachable by a nearest-neighbor or diagonal move.
    pub fn bandwidth(&self, diagonals: bool) -> usize {
        let d = self.dim();
        let top = self.strides[d - 1];
        if diagonals && d >= 2 {
            top + self.strides[d - 2]
        } else {
            top
        }
    }

    /// Multilinear interpolation weights at `x` (coordinates clamped into the box).
    pub fn interpolation_weights(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let d = self.dim();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for i in 0..d {
            let n = self.counts[i];
            if n == 1 {
                continue;
            }
            let s = ((x[i] - self.lo[i]) / self.h[i]).clamp(0.0, (n - 1) as f64);
            let b = (s.floor() as usize).min(n - 2);
            base[i] = b;
            frac[i] = s - b as f64;
        }
        let mut out = Vec::with_capacity(1 << d);
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0;
            for i in 0..d {
                let up = (corner >> i) & 1 == 1;
                if self.counts[i] == 1 {
                    if up {
                        w = 0.0;
                    }
                    continue;
                }
                w *= if up { frac[i] } else { 1.0 - frac[i] };
                idx += (base[i] + usize::from(up)) * self.strides[i];
            }
            if w > 0.0 {
                out.push((idx, w));
            }
        }
        out
    }

    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        self.interpolation_weights(x).iter().map(|&(i, w)| w * values[i]).sum()
    }
}
