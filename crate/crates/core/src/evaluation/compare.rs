use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{wilcoxon_one_sided, WilcoxonResult, RESULTS_CSV_HEADER};
use crate::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.001;
pub const COMPARISON_CSV_HEADER: &str = "example_id,si_sdr_a,si_sdr_b,diff";

/// Paired comparison of two systems over the same test examples.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    /// `(example_id, mean SI-SDR of A, of B)`.
    pub pairs: Vec<(usize, f64, f64)>,
    /// `Err` carries the reason the test could not be run.
    pub test: std::result::Result<WilcoxonResult, String>,
}

impl ComparisonReport {
    pub fn significant(&self) -> bool {
        matches!(&self.test, Ok(r) if r.p_value < SIGNIFICANCE_LEVEL)
    }

    pub fn mean_a(&self) -> f64 {
        self.pairs.iter().map(|p| p.1).sum::<f64>() / self.pairs.len() as f64
    }

    pub fn mean_b(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).sum::<f64>() / self.pairs.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{COMPARISON_CSV_HEADER}\n");
        for (id, a, b) in &self.pairs {
            let _ = writeln!(s, "{id},{a},{b},{}", a - b);
        }
        s
    }

    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "paired examples: {}", self.pairs.len());
        let _ = writeln!(s, "mean SI-SDR A: {:.3} dB", self.mean_a());
        let _ = writeln!(s, "mean SI-SDR B: {:.3} dB", self.mean_b());
        match &self.test {
            Ok(r) => {
                let _ = writeln!(
                    s,
                    "one-sided Wilcoxon signed-rank (A > B): W+ = {}, n = {}, p = {:.6e} ({})",
                    r.statistic,
                    r.n,
                    r.p_value,
                    if r.exact { "exact" } else { "normal approximation" }
                );
            }
            Err(reason) => {
                let _ = writeln!(s, "one-sided Wilcoxon signed-rank (A > B): {reason}");
            }
        }
        let verdict = if self.significant() {
            "A significantly better than B"
        } else {
            "not significant"
        };
        let _ = writeln!(s, "verdict at p<{SIGNIFICANCE_LEVEL}: {verdict}");
        s
    }
}

/// Reads a results CSV into per-example means over sources.
pub fn read_results_csv(path: impl AsRef<Path>) -> Result<BTreeMap<usize, f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    match lines.next() {
        Some((_, h)) if h.trim() == RESULTS_CSV_HEADER => {}
        _ => return Err(bad(1, format!("expected header `{RESULTS_CSV_HEADER}`"))),
    }
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [id, src, v] => id
                .parse::<usize>()
                .ok()
                .zip(src.parse::<usize>().ok())
                .zip(v.parse::<f64>().ok()),
            _ => None,
        };
        let Some(((id, _), v)) = parsed else {
            return Err(bad(i + 1, format!("malformed row `{line}`")));
        };
        let e = acc.entry(id).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    Ok(acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect())
}

/// Pairs per-example scores by identifier and tests "A > B".
pub fn compare(a: &BTreeMap<usize, f64>, b: &BTreeMap<usize, f64>) -> Result<ComparisonReport> {
    if a.len() != b.len() || a.keys().any(|k| !b.contains_key(k)) {
        return Err(Error::invalid("result sets cover different example identifiers"));
    }
    if a.is_empty() {
        return Err(Error::invalid("no examples to compare"));
    }
    let pairs: Vec<(usize, f64, f64)> = a.iter().map(|(k, va)| (*k, *va, b[k])).collect();
    let diffs: Vec<f64> = pairs.iter().map(|(_, x, y)| x - y).collect();
    let test = match wilcoxon_one_sided(&diffs) {
        Ok(r) => Ok(r),
        Err(Error::InsufficientData(msg)) => Err(format!("insufficient nonzero differences ({msg})")),
        Err(e) => return Err(e),
    };
    Ok(ComparisonReport { pairs, test })
}

pub fn compare_files(a: impl AsRef<Path>, b: impl AsRef<Path>) -> Result<ComparisonReport> {
    compare(&read_results_csv(a)?, &read_results_csv(b)?)
}
