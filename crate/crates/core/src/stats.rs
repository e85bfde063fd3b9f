//! Monte Carlo reductions with a fixed summation order.

use serde::Serialize;

use crate::error::{Error, Result};

/// Mean, standard error and 95% confidence interval of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub n: usize,
}

/// Pairwise (tree) summation: the result depends only on the order of `values`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// `SE = sample-sd / √n`.
pub fn mc_reduce(values: &[f64]) -> Result<Summary> {
    let n = values.len();
    if n < 2 {
        return Err(Error::arg(format!("mc_reduce needs at least 2 values, got {n}")));
    }
    let mean = pairwise_sum(values) / n as f64;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    Ok(Summary {
        mean,
        se,
        ci95: (mean - 1.96 * se, mean + 1.96 * se),
        n,
    })
}

/// Mean of a non-empty slice with the same summation order as [`mc_reduce`].
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(values) / values.len() as f64
}

/// Summary of `a_i − b_i`, the paired difference of two estimators on one ensemble.
pub fn paired_difference(a: &[f64], b: &[f64]) -> Result<Summary> {
    if a.len() != b.len() {
        return Err(Error::arg("paired samples differ in length"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mc_reduce(&d)
}
