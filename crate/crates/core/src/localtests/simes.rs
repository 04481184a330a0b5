use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which critical values `c_i^m` a Simes-type test uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum FamilyVariant {
    /// `c_i^m = i α / m`
    Simes,
    /// `c_i^m = i α / (K_m m)` with `K_m` the m-th harmonic number
    Hommel,
    /// `c_i^m = k_i` for every `m`, e.g. permutation-calibrated values
    Constant { critical_values: Vec<f64> },
}

/// Critical values `c_i^m` for `1 <= i <= m <= n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticalValueFamily {
    variant: FamilyVariant,
    alpha: f64,
    n: usize,
    harmonic: Vec<f64>,
}

impl CriticalValueFamily {
    pub fn new(variant: FamilyVariant, alpha: f64, n: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Invalid(format!("alpha must be in (0, 1), got {alpha}")));
        }
        let mut harmonic = Vec::new();
        match &variant {
            FamilyVariant::Simes => {}
            FamilyVariant::Hommel => {
                harmonic.reserve(n + 1);
                harmonic.push(0.0);
                let mut acc = 0.0;
                for v in 1..=n {
                    acc += 1.0 / v as f64;
                    harmonic.push(acc);
                }
            }
            FamilyVariant::Constant { critical_values } => {
                if critical_values.len() != n {
                    return Err(Error::Dimension(format!(
                        "{} constant critical values for {n} hypotheses",
                        critical_values.len()
                    )));
                }
                if critical_values.iter().any(|k| k.is_nan() || *k > 1.0) {
                    return Err(Error::Invalid("critical values must be at most 1".into()));
                }
                if critical_values.windows(2).any(|w| w[0] > w[1]) {
                    return Err(Error::Invalid(
                        "constant critical values must be nondecreasing".into(),
                    ));
                }
            }
        }
        Ok(Self {
            variant,
            alpha,
            n,
            harmonic,
        })
    }

    pub fn simes(alpha: f64, n: usize) -> Result<Self> {
        Self::new(FamilyVariant::Simes, alpha, n)
    }

    pub fn hommel(alpha: f64, n: usize) -> Result<Self> {
        Self::new(FamilyVariant::Hommel, alpha, n)
    }

    pub fn constant(critical_values: Vec<f64>, alpha: f64) -> Result<Self> {
        let n = critical_values.len();
        Self::new(FamilyVariant::Constant { critical_values }, alpha, n)
    }

    pub fn variant(&self) -> &FamilyVariant {
        &self.variant
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn max_size(&self) -> usize {
        self.n
    }

    /// `c_i^m`, 1-based, for `1 <= i <= m <= n`.
    pub fn critical(&self, i: usize, m: usize) -> f64 {
        debug_assert!(i >= 1 && i <= m && m <= self.n, "c_{i}^{m} with n = {}", self.n);
        match &self.variant {
            FamilyVariant::Simes => i as f64 * self.alpha / m as f64,
            FamilyVariant::Hommel => i as f64 * self.alpha / (self.harmonic[m] * m as f64),
            FamilyVariant::Constant { critical_values } => critical_values[i - 1],
        }
    }

    /// `c_i^l <= c_i^m` whenever `l >= m`.
    pub fn satisfies_cond7(&self) -> bool {
        true
    }

    /// `c_i^m >= c_{i-w}^{m-w}` for `1 <= w < i`.
    pub fn satisfies_cond8(&self) -> bool {
        match self.variant {
            FamilyVariant::Simes | FamilyVariant::Constant { .. } => true,
            FamilyVariant::Hommel => self.n < 2,
        }
    }
}

/// Simes-type rejection: some `p_(i) <= c_i^m`, with `m` the set size.
pub fn simes_style_reject(pvals: &[f64], family: &CriticalValueFamily, m_context: usize) -> bool {
    assert_eq!(pvals.len(), m_context, "m must equal the intersection size");
    let mut sorted = pvals.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted_simes_reject(&sorted, family)
}

pub(crate) fn sorted_simes_reject(sorted: &[f64], family: &CriticalValueFamily) -> bool {
    let m = sorted.len();
    sorted
        .iter()
        .enumerate()
        .any(|(i, &p)| p <= family.critical(i + 1, m))
}
