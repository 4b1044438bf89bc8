//! Minimization of the discrete Hamiltonian over the simplex.
//!
//! With `s = <e,x>^+` the drift is `b_i(u) = a_i + k_i u_i`, where
//! `a_i = l_i - mu_i x_i` and `k_i = (mu_i - gamma_i) s`. Coordinate `i`
//! contributes `b_i p_plus_i` when `b_i >= 0` and `b_i p_minus_i` otherwise.

use crate::control::{project_simplex, unit};

const BISECT_TOL: f64 = 1e-15;
const LATTICE: usize = 16;
const SUBGRADIENT_STEPS: usize = 200;

pub(crate) struct Hamiltonian<'a, C: Fn(&[f64]) -> f64> {
    pub a: &'a [f64],
    pub k: &'a [f64],
    pub p_plus: &'a [f64],
    pub p_minus: &'a [f64],
    /// `u`-dependent running cost.
    pub cost: C,
}

impl<C: Fn(&[f64]) -> f64> Hamiltonian<'_, C> {
    pub fn value(&self, u: &[f64]) -> f64 {
        let mut v = (self.cost)(u);
        for i in 0..u.len() {
            let b = self.a[i] + self.k[i] * u[i];
            v += if b >= 0.0 { b * self.p_plus[i] } else { b * self.p_minus[i] };
        }
        v
    }

    fn subgradient(&self, u: &[f64], cost_grad: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut g = cost_grad(u);
        for i in 0..u.len() {
            let b = self.a[i] + self.k[i] * u[i];
            g[i] += self.k[i] * if b >= 0.0 { self.p_plus[i] } else { self.p_minus[i] };
        }
        g
    }

    /// Global minimizer and minimum. Ties go to the lexicographically smallest candidate.
    pub fn minimize(
        &self,
        s: f64,
        warm: Option<&[f64]>,
        cost_grad: &dyn Fn(&[f64]) -> Vec<f64>,
    ) -> (Vec<f64>, f64) {
        let d = self.a.len();
        if d == 1 {
            return (vec![1.0], self.value(&[1.0]));
        }
        if s <= 0.0 {
            let u = unit(d, d - 1);
            let v = self.value(&u);
            return (u, v);
        }
        let candidates = if d == 2 { self.candidates_2d(cost_grad) } else { self.candidates_nd(warm, cost_grad) };
        pick(candidates.into_iter().map(|u| {
            let v = self.value(&u);
            (u, v)
        }))
    }

    fn candidates_2d(&self, cost_grad: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
        let mut knots = vec![0.0, 1.0];
        if self.k[0] != 0.0 {
            knots.push(-self.a[0] / self.k[0]);
        }
        if self.k[1] != 0.0 {
            knots.push(1.0 + self.a[1] / self.k[1]);
        }
        knots.retain(|w| (0.0..=1.0).contains(w));
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let mut out: Vec<Vec<f64>> = knots.iter().map(|&w| vec![w, 1.0 - w]).collect();
        for pair in knots.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            // the objective is convex between knots with one fixed branch per coordinate
            let mid = 0.5 * (lo + hi);
            let branch: Vec<bool> = (0..2)
                .map(|i| self.a[i] + self.k[i] * if i == 0 { mid } else { 1.0 - mid } >= 0.0)
                .collect();
            let slope = |w: f64| {
                let g = cost_grad(&[w, 1.0 - w]);
                let p = |i: usize| if branch[i] { self.p_plus[i] } else { self.p_minus[i] };
                (g[0] + self.k[0] * p(0)) - (g[1] + self.k[1] * p(1))
            };
            out.push(vec![root_of_increasing(&slope, lo, hi), 0.0]);
            let last = out.last_mut().expect("just pushed");
            last[1] = 1.0 - last[0];
        }
        out
    }

    fn candidates_nd(&self, warm: Option<&[f64]>, cost_grad: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
        let d = self.a.len();
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut lattice = Vec::new();
        simplex_lattice(d, LATTICE, &mut vec![0; d], 0, LATTICE, &mut lattice);
        for u in lattice {
            let v = self.value(&u);
            if best.as_ref().is_none_or(|(_, b)| v < *b) {
                best = Some((u, v));
            }
        }
        let (start, _) = best.expect("lattice is nonempty");
        let mut out = vec![start.clone()];
        let mut starts = vec![start];
        if let Some(w) = warm {
            starts.push(w.to_vec());
        }
        for s0 in starts {
            out.push(self.descend(s0, cost_grad));
        }
        out
    }

    fn descend(&self, mut u: Vec<f64>, cost_grad: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut best = (u.clone(), self.value(&u));
        for t in 0..SUBGRADIENT_STEPS {
            let g = self.subgradient(&u, cost_grad);
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax == 0.0 {
                break;
            }
            let step = 1.0 / (LATTICE as f64 * gmax * ((t + 1) as f64).sqrt());
            let trial: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            u = project_simplex(&trial);
            let v = self.value(&u);
            if v < best.1 {
                best = (u.clone(), v);
            }
        }
        best.0
    }
}

/// Minimizer on `[lo, hi]` of a convex function with nondecreasing derivative `slope`.
fn root_of_increasing(slope: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    if slope(lo) >= 0.0 {
        return lo;
    }
    if slope(hi) <= 0.0 {
        return hi;
    }
    while hi - lo > BISECT_TOL * (1.0 + hi.abs()) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn simplex_lattice(d: usize, res: usize, cur: &mut Vec<usize>, pos: usize, left: usize, out: &mut Vec<Vec<f64>>) {
    if pos == d - 1 {
        cur[pos] = left;
        out.push(cur.iter().map(|&c| c as f64 / res as f64).collect());
        return;
    }
    for c in 0..=left {
        cur[pos] = c;
        simplex_lattice(d, res, cur, pos + 1, left - c, out);
    }
}

/// Smallest value; near-ties resolved lexicographically.
fn pick(cands: impl Iterator<Item = (Vec<f64>, f64)>) -> (Vec<f64>, f64) {
    let all: Vec<(Vec<f64>, f64)> = cands.collect();
    let min = all.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * (1.0 + min.abs());
    all.into_iter()
        .filter(|c| c.1 <= min + tol)
        .min_by(|a, b| {
            a.0.iter()
                .zip(&b.0)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .expect("at least one candidate")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(c: f64, s: f64) -> impl Fn(&[f64]) -> f64 {
        move |u: &[f64]| c * s * s * u.iter().map(|v| v * v).sum::<f64>()
    }

    fn quad_grad(c: f64, s: f64) -> impl Fn(&[f64]) -> Vec<f64> {
        move |u: &[f64]| u.iter().map(|v| 2.0 * c * s * s * v).collect()
    }

    #[test]
    fn calculus_example_2d() {
        // objective u1 + u1^2 + (1 - u1)^2
        let h = Hamiltonian {
            a: &[0.0, 0.0],
            k: &[1.0, 0.0],
            p_plus: &[1.0, 0.0],
            p_minus: &[1.0, 0.0],
            cost: quad(1.0, 1.0),
        };
        let (u, v) = h.minimize(1.0, None, &quad_grad(1.0, 1.0));
        assert!((u[0] - 0.25).abs() < 1e-9);
        assert!((v - (0.25 + 0.0625 + 0.5625)).abs() < 1e-12);
    }

    #[test]
    fn nd_matches_2d_embedding() {
        let h = Hamiltonian {
            a: &[0.3, -0.2, 0.1],
            k: &[1.0, -0.5, 0.8],
            p_plus: &[0.7, 0.2, -0.4],
            p_minus: &[0.5, 0.1, -0.6],
            cost: quad(1.0, 2.0),
        };
        let (u, v) = h.minimize(2.0, None, &quad_grad(1.0, 2.0));
        assert!((u.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mut lattice = Vec::new();
        simplex_lattice(3, 64, &mut vec![0; 3], 0, 64, &mut lattice);
        let brute = lattice.iter().map(|w| h.value(w)).fold(f64::INFINITY, f64::min);
        assert!(v <= brute + 1e-6);
    }

    #[test]
    fn ties_prefer_lexicographically_smallest() {
        let h = Hamiltonian {
            a: &[0.0, 0.0],
            k: &[0.0, 0.0],
            p_plus: &[0.0, 0.0],
            p_minus: &[0.0, 0.0],
            cost: |_: &[f64]| 1.0,
        };
        let (u, _) = h.minimize(1.0, None, &|u: &[f64]| vec![0.0; u.len()]);
        assert_eq!(u, vec![0.0, 1.0]);
    }
}
