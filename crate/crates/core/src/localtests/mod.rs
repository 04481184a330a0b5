//! Local tests for intersection hypotheses `H_I`.
//!
//! A [`TestSpec`] names a test and its payload; [`LocalTest`] is that spec
//! bound to a hypothesis set and a level, with whatever per-hypothesis
//! statistics and critical values it needs already prepared.

mod fisher;
mod ftest;
mod normal;
mod simes;
mod table;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use fisher::{fisher_reject, FisherCriticalValues};
pub use ftest::{ftest_pvalue, ftest_reject, RegressionData, RegressionModel};
pub use normal::{normal_sum_reject, Dependence};
pub use simes::{simes_style_reject, CriticalValueFamily, FamilyVariant};
pub use table::{parse_table, table_reject};

use crate::error::{Error, Result};
use crate::hypotheses::{HypothesisSet, IndexSet};

pub(crate) use fisher::fisher_scores;
pub(crate) use simes::sorted_simes_reject;

/// Serializable description of a local test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestSpec {
    Fisher,
    SimesFamily {
        #[serde(flatten)]
        family: FamilyVariant,
    },
    NormalSum {
        dependence: Dependence,
    },
    /// Rejects exactly the listed intersections, given by hypothesis names.
    Table {
        rejected: Vec<Vec<String>>,
    },
    RegressionF {
        data: RegressionData,
    },
}

impl TestSpec {
    pub fn simes() -> Self {
        TestSpec::SimesFamily {
            family: FamilyVariant::Simes,
        }
    }

    pub fn hommel() -> Self {
        TestSpec::SimesFamily {
            family: FamilyVariant::Hommel,
        }
    }

    pub fn constant(critical_values: Vec<f64>) -> Self {
        TestSpec::SimesFamily {
            family: FamilyVariant::Constant { critical_values },
        }
    }

    pub fn kind(&self) -> TestKind {
        match self {
            TestSpec::Fisher => TestKind::Fisher,
            TestSpec::SimesFamily { .. } => TestKind::SimesFamily,
            TestSpec::NormalSum {
                dependence: Dependence::Independent,
            } => TestKind::NormalSumIndependent,
            TestSpec::NormalSum {
                dependence: Dependence::General,
            } => TestKind::NormalSumGeneral,
            TestSpec::Table { .. } => TestKind::Table,
            TestSpec::RegressionF { .. } => TestKind::RegressionF,
        }
    }

    /// Short human-readable label, e.g. `fisher` or `simes_family(hommel)`.
    pub fn label(&self) -> String {
        match self {
            TestSpec::SimesFamily { family } => {
                let v = match family {
                    FamilyVariant::Simes => "simes",
                    FamilyVariant::Hommel => "hommel",
                    FamilyVariant::Constant { .. } => "constant",
                };
                format!("simes_family({v})")
            }
            other => other.kind().as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestKind {
    Fisher,
    SimesFamily,
    NormalSumIndependent,
    NormalSumGeneral,
    Table,
    RegressionF,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::Fisher => "fisher",
            TestKind::SimesFamily => "simes_family",
            TestKind::NormalSumIndependent => "normal_sum_independent",
            TestKind::NormalSumGeneral => "normal_sum_general",
            TestKind::Table => "table",
            TestKind::RegressionF => "regression_f",
        }
    }

    /// Rejection depends only on the multiset of per-hypothesis statistics.
    pub fn is_exchangeable(self) -> bool {
        !matches!(self, TestKind::Table | TestKind::RegressionF)
    }
}

#[derive(Debug, Clone)]
enum Engine {
    Fisher {
        scores: Vec<f64>,
        critical: FisherCriticalValues,
    },
    Simes {
        pvalues: Vec<f64>,
        family: CriticalValueFamily,
    },
    NormalSum {
        zscores: Vec<f64>,
        threshold: f64,
        dependence: Dependence,
    },
    Table {
        rejected: std::collections::HashSet<IndexSet>,
    },
    Regression {
        model: RegressionModel,
    },
}

/// A local test bound to a hypothesis set and a level `α`.
#[derive(Debug, Clone)]
pub struct LocalTest {
    hyps: Arc<HypothesisSet>,
    spec: TestSpec,
    alpha: f64,
    engine: Engine,
    shortcut_support: std::sync::OnceLock<std::result::Result<(), String>>,
}

impl LocalTest {
    pub fn new(hyps: impl Into<Arc<HypothesisSet>>, spec: TestSpec, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Invalid(format!("alpha must be in (0, 1), got {alpha}")));
        }
        let hyps = hyps.into();
        let n = hyps.len();
        let need_p = || {
            hyps.pvalues()
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Invalid(format!("{} test needs p-values", spec.label())))
        };
        let engine = match &spec {
            TestSpec::Fisher => Engine::Fisher {
                scores: fisher_scores(&need_p()?),
                critical: FisherCriticalValues::new(alpha, n),
            },
            TestSpec::SimesFamily { family } => Engine::Simes {
                pvalues: need_p()?,
                family: CriticalValueFamily::new(family.clone(), alpha, n)?,
            },
            TestSpec::NormalSum { dependence } => Engine::NormalSum {
                zscores: hyps
                    .zscores()
                    .ok_or_else(|| Error::Invalid("normal sum test needs z-scores".into()))?
                    .to_vec(),
                threshold: normal::normal_threshold(alpha, *dependence)?,
                dependence: *dependence,
            },
            TestSpec::Table { rejected } => {
                let mut sets = std::collections::HashSet::with_capacity(rejected.len());
                for names in rejected {
                    let mut set = IndexSet::empty(n);
                    for name in names {
                        let i = hyps
                            .index_of(name)
                            .ok_or_else(|| Error::UnknownName(name.clone()))?;
                        set.insert(i);
                    }
                    if set.is_empty() {
                        return Err(Error::Invalid("table entries must be nonempty".into()));
                    }
                    sets.insert(set);
                }
                Engine::Table { rejected: sets }
            }
            TestSpec::RegressionF { data } => {
                if data.num_covariates() != n {
                    return Err(Error::Dimension(format!(
                        "{} covariates for {n} hypotheses",
                        data.num_covariates()
                    )));
                }
                Engine::Regression {
                    model: RegressionModel::new(data)?,
                }
            }
        };
        Ok(Self {
            hyps,
            spec,
            alpha,
            engine,
            shortcut_support: Default::default(),
        })
    }

    /// The same test specification at another level.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if let Engine::Regression { model } = &self.engine {
            // reuse the prepared fit
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Invalid(format!("alpha must be in (0, 1), got {alpha}")));
            }
            return Ok(Self {
                hyps: self.hyps.clone(),
                spec: self.spec.clone(),
                alpha,
                engine: Engine::Regression {
                    model: model.clone(),
                },
                shortcut_support: Default::default(),
            });
        }
        Self::new(self.hyps.clone(), self.spec.clone(), alpha)
    }

    pub fn hypotheses(&self) -> &HypothesisSet {
        &self.hyps
    }

    pub fn shared_hypotheses(&self) -> Arc<HypothesisSet> {
        self.hyps.clone()
    }

    pub fn spec(&self) -> &TestSpec {
        &self.spec
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n(&self) -> usize {
        self.hyps.len()
    }

    pub fn kind(&self) -> TestKind {
        self.spec.kind()
    }

    pub fn is_exchangeable(&self) -> bool {
        self.kind().is_exchangeable()
    }

    pub fn critical_family(&self) -> Option<&CriticalValueFamily> {
        match &self.engine {
            Engine::Simes { family, .. } => Some(family),
            _ => None,
        }
    }

    pub(crate) fn fisher_parts(&self) -> Option<(&[f64], &FisherCriticalValues)> {
        match &self.engine {
            Engine::Fisher { scores, critical } => Some((scores, critical)),
            _ => None,
        }
    }

    /// Whether the exchangeable shortcut's two monotonicity requirements hold:
    /// more significant statistics never undo a rejection, and neither does
    /// adding a hypothesis more significant than every current member.
    pub fn exchangeable_shortcut_support(&self) -> std::result::Result<(), String> {
        self.shortcut_support
            .get_or_init(|| self.check_shortcut_support())
            .clone()
    }

    fn check_shortcut_support(&self) -> std::result::Result<(), String> {
        match &self.engine {
            Engine::Fisher { critical, .. } => match critical.first_growth_violation() {
                Ok(None) => Ok(()),
                Ok(Some(k)) => Err(format!(
                    "Fisher critical values at alpha = {} grow faster than linearly (g_{}/{} > g_{k}/{k}), \
                     so adding a smaller p-value can undo a rejection",
                    self.alpha,
                    k + 1,
                    k + 1
                )),
                Err(e) => Err(e.to_string()),
            },
            Engine::Simes { family, .. } => {
                if family.satisfies_cond7() && family.satisfies_cond8() {
                    Ok(())
                } else {
                    Err(format!(
                        "{} critical values are not shift-monotone (c_i^m >= c_(i-1)^(m-1) fails), \
                         so adding a smaller p-value can undo a rejection",
                        self.spec.label()
                    ))
                }
            }
            Engine::NormalSum { dependence, .. } => {
                if *dependence == Dependence::Independent && self.alpha > 0.5 {
                    Err("independent normal sum test above alpha = 1/2 is not monotone under \
                         adding a larger score"
                        .into())
                } else {
                    Ok(())
                }
            }
            Engine::Table { .. } | Engine::Regression { .. } => {
                Err(format!("{} test is not exchangeable", self.spec.label()))
            }
        }
    }

    /// Hypothesis indices from most to least significant, ties by input order.
    pub fn significance_order(&self) -> Vec<usize> {
        match &self.engine {
            Engine::NormalSum { .. } => self.hyps.order_by_zscore().unwrap_or_default(),
            _ => self
                .hyps
                .order_by_pvalue()
                .unwrap_or_else(|| (0..self.n()).collect()),
        }
    }

    /// Local test decision for the intersection of the given hypotheses.
    pub fn rejects(&self, members: &[usize]) -> Result<bool> {
        if members.is_empty() {
            return Err(Error::Invalid("intersection over an empty set".into()));
        }
        match &self.engine {
            Engine::Fisher { scores, critical } => {
                let stat: f64 = members.iter().map(|&i| scores[i]).sum();
                Ok(stat >= critical.get(members.len())?)
            }
            Engine::Simes { pvalues, family } => {
                let mut sorted: Vec<f64> = members.iter().map(|&i| pvalues[i]).collect();
                sorted.sort_by(f64::total_cmp);
                Ok(sorted_simes_reject(&sorted, family))
            }
            Engine::NormalSum {
                zscores,
                threshold,
                dependence,
            } => {
                let sum: f64 = members.iter().map(|&i| zscores[i]).sum();
                Ok(sum >= normal::sum_cutoff(*threshold, members.len(), *dependence))
            }
            Engine::Table { rejected } => {
                let set = IndexSet::from_indices(self.n(), members.iter().copied())?;
                Ok(rejected.contains(&set))
            }
            Engine::Regression { model } => Ok(model.pvalue(members)? <= self.alpha),
        }
    }

    pub fn rejects_set(&self, set: &IndexSet) -> Result<bool> {
        let members: Vec<usize> = set.iter().collect();
        self.rejects(&members)
    }
}
