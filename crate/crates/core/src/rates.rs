use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class, per-environment-state rate table (`d` rows by `K` columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct RateTable {
    classes: usize,
    states: usize,
    data: Vec<f64>,
}

impl RateTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let classes = rows.len();
        if classes == 0 {
            return Err(Error::Dimension("rate table has no classes".into()));
        }
        let states = rows[0].len();
        if states == 0 {
            return Err(Error::Dimension("rate table has no environment states".into()));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != states) {
            return Err(Error::Dimension(format!(
                "rate table row {i} has {} entries, expected {states}",
                rows[i].len()
            )));
        }
        Ok(Self {
            classes,
            states,
            data: rows.into_iter().flatten().collect(),
        })
    }

    /// Table whose value does not depend on the environment state.
    pub fn unmodulated(per_class: &[f64], states: usize) -> Self {
        let rows = per_class.iter().map(|&v| vec![v; states]).collect();
        Self::new(rows).expect("non-empty table")
    }

    pub fn filled(classes: usize, states: usize, value: f64) -> Self {
        Self {
            classes,
            states,
            data: vec![value; classes * states],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn states(&self) -> usize {
        self.states
    }

    #[inline]
    pub fn get(&self, class: usize, state: usize) -> f64 {
        self.data[class * self.states + state]
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.data[class * self.states..(class + 1) * self.states]
    }

    /// Column `state` as a per-class vector.
    pub fn column(&self, state: usize) -> Vec<f64> {
        (0..self.classes).map(|i| self.get(i, state)).collect()
    }

    /// `sum_k pi_k table[i][k]` for every class.
    pub fn average(&self, pi: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|i| self.row(i).iter().zip(pi).map(|(v, p)| v * p).sum())
            .collect()
    }

    pub fn map(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.classes {
            for k in 0..self.states {
                data.push(f(i, k, self.get(i, k)));
            }
        }
        Self {
            classes: self.classes,
            states: self.states,
            data,
        }
    }

    /// Permute environment-state columns: column `k` of the result is column `perm[k]` of `self`.
    pub fn permute_states(&self, perm: &[usize]) -> Self {
        self.map(|i, k, _| self.get(i, perm[k]))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.classes).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.classes).flat_map(move |i| (0..self.states).map(move |k| (i, k, self.get(i, k))))
    }
}

impl TryFrom<Vec<Vec<f64>>> for RateTable {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<RateTable> for Vec<Vec<f64>> {
    fn from(t: RateTable) -> Self {
        t.to_rows()
    }
}
