//! Instances shared by the benchmarks.

use bipfit_core::{FittingProblem, Matrix, NonNegMatrix};

/// Dense positive `n x n` seed with uneven marginals, deterministic.
pub fn dense_problem(n: usize) -> FittingProblem {
    let x0 = Matrix::from_fn(n, n, |i, j| 1.0 + ((i * 7 + j * 13) % 11) as f64);
    let weights: Vec<f64> = (0..n).map(|i| 1.0 + (i % 5) as f64).collect();
    let total: f64 = weights.iter().sum();
    let a: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let b: Vec<f64> = weights.iter().rev().map(|w| w / total).collect();
    FittingProblem::from_parts(&x0.to_rows(), a, b).expect("valid instance")
}

/// The 5x6 block example with an all-ones seed on its support.
pub fn example_5x6() -> FittingProblem {
    let pattern = ["**0000", "0**000", "0***00", "****0*", "*0****"];
    let rows: Vec<Vec<f64>> = pattern
        .iter()
        .map(|r| {
            r.chars()
                .map(|c| if c == '*' { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let x0 = NonNegMatrix::from_rows(&rows).expect("valid seed");
    FittingProblem::new(
        x0,
        bipfit_core::Marginals::new(vec![0.25, 0.25, 0.25, 0.15, 0.10]).expect("valid"),
        bipfit_core::Marginals::new(vec![0.05, 0.05, 0.1, 0.2, 0.2, 0.4]).expect("valid"),
    )
    .expect("valid instance")
}
