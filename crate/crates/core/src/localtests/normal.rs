use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statfun::std_normal_quantile;

/// Assumption about the joint distribution of null z-scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependence {
    /// Independent standard normal scores: `Var(Z_I) = #I`.
    Independent,
    /// Arbitrary joint normality: `Var(Z_I) <= (#I)^2`, valid for `α <= 1/2`.
    General,
}

/// `Φ^{-1}(1 - α)`, checking the level restriction of the dependent case.
pub(crate) fn normal_threshold(alpha: f64, dependence: Dependence) -> Result<f64> {
    if dependence == Dependence::General && alpha > 0.5 {
        return Err(Error::Invalid(format!(
            "the general-dependence normal sum test needs alpha <= 1/2, got {alpha}"
        )));
    }
    std_normal_quantile(1.0 - alpha)
}

/// Cutoff for `Z_I = Σ z_i` at set size `size`.
pub(crate) fn sum_cutoff(q: f64, size: usize, dependence: Dependence) -> f64 {
    match dependence {
        Dependence::Independent => (size as f64).sqrt() * q,
        Dependence::General => size as f64 * q,
    }
}

/// Reject `H_I` iff `Σ z_i >= √#I q` (independent) or `>= #I q` (general),
/// with `q = Φ^{-1}(1 - α)`.
pub fn normal_sum_reject(zvals: &[f64], alpha: f64, dependence: Dependence) -> Result<bool> {
    if zvals.is_empty() {
        return Err(Error::Invalid("normal sum test needs at least one score".into()));
    }
    let q = normal_threshold(alpha, dependence)?;
    let sum: f64 = zvals.iter().sum();
    Ok(sum >= sum_cutoff(q, zvals.len(), dependence))
}
