use std::sync::OnceLock;

use crate::error::Result;
use crate::statfun::chi2_quantile;

/// Lazily computed Fisher critical values `g_r`, the `(1 - α)`-quantiles of
/// chi-square with `2r` degrees of freedom.
#[derive(Debug)]
pub struct FisherCriticalValues {
    alpha: f64,
    cells: Vec<OnceLock<f64>>,
}

impl FisherCriticalValues {
    pub fn new(alpha: f64, max_size: usize) -> Self {
        Self {
            alpha,
            cells: (0..=max_size).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn max_size(&self) -> usize {
        self.cells.len() - 1
    }

    /// `g_r` for `r >= 1`.
    pub fn get(&self, r: usize) -> Result<f64> {
        if let Some(v) = self.cells.get(r).and_then(OnceLock::get) {
            return Ok(*v);
        }
        let v = chi2_quantile(1.0 - self.alpha, 2 * r)?;
        if let Some(cell) = self.cells.get(r) {
            let _ = cell.set(v);
        }
        Ok(v)
    }
}

impl FisherCriticalValues {
    /// First `k < max_size` with `g_{k+1} / (k+1) > g_k / k`, if any. When
    /// none exists, adding a p-value below all current ones never undoes a
    /// rejection.
    pub fn first_growth_violation(&self) -> Result<Option<usize>> {
        let mut prev = self.get(1)?;
        for k in 1..self.max_size() {
            let next = self.get(k + 1)?;
            if next * k as f64 > prev * (k + 1) as f64 {
                return Ok(Some(k));
            }
            prev = next;
        }
        Ok(None)
    }
}

impl Clone for FisherCriticalValues {
    fn clone(&self) -> Self {
        Self {
            alpha: self.alpha,
            cells: self
                .cells
                .iter()
                .map(|c| match c.get() {
                    Some(v) => OnceLock::from(*v),
                    None => OnceLock::new(),
                })
                .collect(),
        }
    }
}

/// `-2 log p` for each p-value.
pub(crate) fn fisher_scores(pvals: &[f64]) -> Vec<f64> {
    pvals.iter().map(|p| -2.0 * p.ln()).collect()
}

/// Fisher combination: reject iff `-2 Σ log p_i >= g_{#I}`.
pub fn fisher_reject(pvals: &[f64], alpha: f64) -> Result<bool> {
    let stat: f64 = pvals.iter().map(|p| -2.0 * p.ln()).sum();
    let g = chi2_quantile(1.0 - alpha, 2 * pvals.len())?;
    Ok(stat >= g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_moderate_pvalues_rejected() {
        assert!(fisher_reject(&[0.051, 0.064, 0.097, 0.108], 0.05).unwrap());
    }

    #[test]
    fn p_one_never_rejects() {
        assert!(!fisher_reject(&[1.0], 0.05).unwrap());
    }

    #[test]
    fn three_small_pvalues() {
        let ps = [0.02, 0.03, 0.04];
        let stat: f64 = ps.iter().map(|p: &f64| -2.0 * p.ln()).sum();
        assert!((stat - 21.274_914).abs() < 1e-5);
        let g = chi2_quantile(0.95, 6).unwrap();
        assert!((g - 12.5916).abs() < 1e-4);
        assert!(fisher_reject(&ps, 0.05).unwrap());
    }

    #[test]
    fn growth_condition_depends_on_alpha() {
        assert_eq!(FisherCriticalValues::new(0.05, 200).first_growth_violation().unwrap(), None);
        assert_eq!(FisherCriticalValues::new(0.5, 200).first_growth_violation().unwrap(), Some(1));
        // adding 0.4558 below 0.4599 loses the rejection at α = 1/2
        assert!(fisher_reject(&[0.4599], 0.5).unwrap());
        assert!(!fisher_reject(&[0.4558, 0.4599], 0.5).unwrap());
    }

    #[test]
    fn critical_values_cache_matches_direct() {
        let g = FisherCriticalValues::new(0.05, 10);
        for r in 1..=12 {
            assert_eq!(g.get(r).unwrap(), chi2_quantile(0.95, 2 * r).unwrap());
        }
        let cloned = g.clone();
        assert_eq!(cloned.get(3).unwrap(), g.get(3).unwrap());
    }
}
