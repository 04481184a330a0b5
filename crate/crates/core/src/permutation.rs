//! Permutation-calibrated constant critical values `k_1 <= ... <= k_n`.

use std::io::Read;

use crate::error::{Error, Result};
use crate::localtests::CriticalValueFamily;
use crate::par;

/// Fewest permutation rows accepted for calibration.
pub const MIN_ROWS: usize = 20;

/// `B × n` matrix of p-values, one row per permutation (row 0 is the
/// observed data under the identity permutation).
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationPValues {
    rows: Vec<Vec<f64>>,
    n: usize,
}

impl PermutationPValues {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() < MIN_ROWS {
            return Err(Error::Invalid(format!(
                "need at least {MIN_ROWS} permutation rows, got {}",
                rows.len()
            )));
        }
        let n = rows[0].len();
        if n == 0 {
            return Err(Error::Invalid("permutation rows are empty".into()));
        }
        for (b, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Dimension(format!(
                    "row {} has {} columns, expected {n}",
                    b + 1,
                    row.len()
                )));
            }
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::PValueRange { line: b + 1, value: *p });
            }
        }
        Ok(Self { rows, n })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_hypotheses(&self) -> usize {
        self.n
    }

    /// The observed p-values (first row).
    pub fn observed(&self) -> &[f64] {
        &self.rows[0]
    }
}

/// Headerless CSV, one permutation per line.
pub fn parse_matrix<R: Read>(source: R) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(rows.len() + 1);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("`{f}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Names sidecar: one hypothesis name per line, optional `name` header.
pub fn parse_names<R: Read>(mut source: R) -> Result<Vec<String>> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    let mut names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if names.first().is_some_and(|h| h == "name") {
        names.remove(0);
    }
    Ok(names)
}

/// Result of a calibration run.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub family: CriticalValueFamily,
    /// Quantile level `γ = j / B` of the per-order-statistic distributions.
    pub gamma: f64,
    /// Fraction of calibration rows with some `p_(i) <= k_i`.
    pub exceedance: f64,
}

/// Fraction of rows in which some order statistic falls at or below its
/// critical value.
pub fn joint_exceedance(rows: &[Vec<f64>], k: &[f64]) -> f64 {
    let hits: usize = par::map_slice(rows, crate::PARALLEL, |row| {
        let mut sorted = row.clone();
        sorted.sort_by(f64::total_cmp);
        usize::from(sorted.iter().zip(k).any(|(p, k)| p <= k))
    })
    .into_iter()
    .sum();
    hits as f64 / rows.len() as f64
}

/// Chooses `k_i` as the `γ`-quantile of the `i`-th order statistic over
/// rows, with `γ` the largest multiple of `1/B` whose joint exceedance on
/// the calibration rows stays at or below `α`.
pub fn calibrate_critvals(perms: &PermutationPValues, alpha: f64) -> Result<Calibration> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let b = perms.num_rows();
    if (b as f64) * alpha < 1.0 {
        return Err(Error::Invalid(format!(
            "{b} permutations are too few for alpha = {alpha} (need B * alpha >= 1)"
        )));
    }
    if perms.rows.iter().all(|r| r == &perms.rows[0]) {
        return Err(Error::Invalid("all permutation rows are identical".into()));
    }
    let n = perms.n;
    let sorted_rows: Vec<Vec<f64>> = par::map_slice(&perms.rows, crate::PARALLEL, |row| {
        let mut s = row.clone();
        s.sort_by(f64::total_cmp);
        s
    });
    // columns[i] holds the i-th order statistic of every row, ascending
    let columns: Vec<Vec<f64>> = par::map_range(n, crate::PARALLEL, |i| {
        let mut col: Vec<f64> = sorted_rows.iter().map(|r| r[i]).collect();
        col.sort_by(f64::total_cmp);
        col
    });
    let critical = |j: usize| -> Vec<f64> {
        if j == 0 {
            vec![f64::NEG_INFINITY; n]
        } else {
            columns.iter().map(|c| c[j - 1]).collect()
        }
    };
    let exceed = |j: usize| -> f64 {
        let k = critical(j);
        let hits = sorted_rows
            .iter()
            .filter(|row| row.iter().zip(&k).any(|(p, k)| p <= k))
            .count();
        hits as f64 / b as f64
    };
    // exceedance is nondecreasing in j and zero at j = 0
    let (mut lo, mut hi) = (0usize, b);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if exceed(mid) <= alpha {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let k = critical(lo);
    let exceedance = exceed(lo);
    Ok(Calibration {
        family: CriticalValueFamily::constant(k, alpha)?,
        gamma: lo as f64 / b as f64,
        exceedance,
    })
}
