//! Fixtures shared by the benchmarks.

use mmq_core::{EnvGenerator, ModelParams, RateTable};

/// Two classes in a two-state symmetric environment, critically loaded.
pub fn two_class(n: u64) -> ModelParams {
    let env = EnvGenerator::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]], 1.0, n).expect("valid generator");
    let t = |rows: Vec<Vec<f64>>| RateTable::new(rows).expect("valid rates");
    ModelParams::first_order(
        env,
        t(vec![vec![1.5, 0.5], vec![0.5, 1.5]]),
        t(vec![vec![2.0, 2.0], vec![2.0, 2.0]]),
        t(vec![vec![1.0, 1.0], vec![0.5, 0.5]]),
    )
    .expect("consistent dimensions")
}

/// One class in the same environment.
pub fn single_class(n: u64) -> ModelParams {
    let env = EnvGenerator::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]], 1.0, n).expect("valid generator");
    let t = |rows: Vec<Vec<f64>>| RateTable::new(rows).expect("valid rates");
    ModelParams::first_order(env, t(vec![vec![1.5, 0.5]]), t(vec![vec![1.0, 1.0]]), t(vec![vec![0.5, 0.5]]))
        .expect("consistent dimensions")
}
