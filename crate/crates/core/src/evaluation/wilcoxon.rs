use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

/// Largest sample size evaluated with the exact null distribution.
pub const EXACT_MAX_N: usize = 25;
pub const MIN_NONZERO: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of the ranks of the positive differences.
    pub statistic: f64,
    /// `P(W⁺ ≥ statistic)` under the symmetric null.
    pub p_value: f64,
    /// Differences left after dropping zeros.
    pub n: usize,
    pub exact: bool,
}

/// Average ranks (1-based) of `|d|`, ties sharing the mean of their positions.
pub fn signed_ranks(diffs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&a, &b| diffs[a].abs().total_cmp(&diffs[b].abs()));
    let mut ranks = vec![0.0; diffs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Exact upper tail of `W⁺` by dynamic programming over doubled ranks,
/// which are integers even with tied (half-integer) ranks.
fn exact_upper_tail(ranks: &[f64], statistic: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let threshold = (2.0 * statistic).round() as usize;
    let total = 2f64.powi(ranks.len() as i32);
    counts[threshold..].iter().sum::<f64>() / total
}

/// One-sided signed-rank test of "median difference > 0".
///
/// Zero differences are dropped. Up to [`EXACT_MAX_N`] remaining values the
/// null distribution is enumerated exactly; above that a normal
/// approximation with continuity and tie correction is used.
pub fn wilcoxon_one_sided(diffs: &[f64]) -> Result<WilcoxonResult> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("differences must be finite"));
    }
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nonzero.len();
    if n < MIN_NONZERO {
        return Err(Error::InsufficientData(format!(
            "{n} nonzero differences, need at least {MIN_NONZERO}"
        )));
    }
    let ranks = signed_ranks(&nonzero);
    let statistic = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .fold(0.0, |acc, (_, r)| acc + r);
    if n <= EXACT_MAX_N {
        return Ok(WilcoxonResult {
            statistic,
            p_value: exact_upper_tail(&ranks, statistic).clamp(0.0, 1.0),
            n,
            exact: true,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (statistic - mean - 0.5) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(WilcoxonResult {
        statistic,
        p_value: normal.sf(z).clamp(0.0, 1.0),
        n,
        exact: false,
    })
}
