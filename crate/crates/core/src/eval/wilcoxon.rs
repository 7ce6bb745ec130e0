//! Wilcoxon signed-rank test with the large-sample normal approximation.
//!
//! Zero differences are dropped, tied absolute differences receive their
//! average rank, and the statistic is standardised without a continuity or
//! tie correction:
//! `z = (W+ - n(n+1)/4) / sqrt(n(n+1)(2n+1)/24)`.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;

/// Minimum number of nonzero paired differences.
pub const MIN_PAIRS: usize = 5;

/// Absolute differences closer than this (relative to their magnitude) are
/// treated as ties, and differences below it as zero. Inputs such as
/// two-decimal prices produce differences like `0.62 - 0.59` and
/// `0.47 - 0.50` that agree only to rounding error.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct WilcoxonResult {
    /// Nonzero differences used.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub z: f64,
    pub p_two_sided: f64,
}

impl WilcoxonResult {
    /// Normal-approximation `P(W+ >= observed)` under the null.
    pub fn p_upper(&self) -> f64 {
        1.0 - std_normal_cdf(self.z)
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Average ranks (1-based) of `values`, with ties within `TIE_TOLERANCE`.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && close(values[idx[end]], values[idx[start]]) {
            end += 1;
        }
        // positions start..end share ranks start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Paired test of `a` against `b` using the differences `a - b`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::UnpairedResults(format!("{} vs {} samples", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| d.abs() > TIE_TOLERANCE)
        .collect();
    let n = diffs.len();
    if n < MIN_PAIRS {
        return Err(EvalError::TooFewPairs(n));
    }
    let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let nf = n as f64;
    let total = nf * (nf + 1.0) / 2.0;
    let mean = total / 2.0;
    let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0).sqrt();
    let z = (w_plus - mean) / sd;
    let p_two_sided = (2.0 * (1.0 - std_normal_cdf(z.abs()))).min(1.0);
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus: total - w_plus,
        z,
        p_two_sided,
    })
}

/// Error bound for the normal approximation's one-sided tail with `n`
/// untied ranks: the largest point mass of the exact null distribution of
/// `W+`.
///
/// The exact survival function moves in steps of at most this size, and the
/// uncorrected normal tail stays within one step of it for the sample sizes
/// checked in the test suite.
pub fn normal_tail_error_bound(n: usize) -> f64 {
    // counts[w] = number of sign assignments with W+ = w
    let max_w = n * (n + 1) / 2;
    let mut counts = vec![0f64; max_w + 1];
    counts[0] = 1.0;
    for r in 1..=n {
        for w in (r..=max_w).rev() {
            counts[w] += counts[w - r];
        }
    }
    let total = 2f64.powi(n as i32);
    counts.iter().cloned().fold(0.0, f64::max) / total
}
