//! Confidence sets, curves and median estimates assembled from closure or
//! shortcut results.

use std::ops::RangeInclusive;
use std::sync::{Arc, OnceLock};

use crate::closure::{run_closure_with, ClosureOptions, ClosureResult, MAX_CLOSURE_N};
use crate::error::{Error, Result};
use crate::hypotheses::IndexSet;
use crate::localtests::{FamilyVariant, LocalTest, TestSpec};
use crate::shortcuts::{dispatch_bound, fdp_curve, FdpCurve, Method, MethodPolicy, Provenance};

/// A `(1 - α)` confidence statement about the false rejections in `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet {
    pub set: IndexSet,
    pub alpha: f64,
    /// `t_α(R)` or a valid upper bound on it.
    pub t_upper: usize,
    pub f_lower: usize,
    pub method: Method,
}

impl ConfidenceSet {
    pub fn new(set: IndexSet, alpha: f64, t_upper: usize, method: Method) -> Self {
        let size = set.len();
        assert!(t_upper <= size, "t = {t_upper} exceeds #R = {size}");
        Self {
            f_lower: size - t_upper,
            set,
            alpha,
            t_upper,
            method,
        }
    }

    pub fn size(&self) -> usize {
        self.set.len()
    }

    /// Confidence set for the number of true nulls in `R`.
    pub fn tau_set(&self) -> RangeInclusive<usize> {
        0..=self.t_upper
    }

    /// Confidence set for the number of false nulls in `R`.
    pub fn phi_set(&self) -> RangeInclusive<usize> {
        self.f_lower..=self.size()
    }

    /// Upper bound on the false discovery proportion as `(t, #R)`.
    pub fn fdp_upper(&self) -> (usize, usize) {
        (self.t_upper, self.size())
    }

    pub fn fdp_upper_value(&self) -> f64 {
        self.t_upper as f64 / self.size() as f64
    }

    pub fn provenance(&self) -> Provenance {
        self.method.provenance()
    }
}

/// Median-type estimate `t_{1/2}(R)`, always reported with its interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub estimate: usize,
    pub estimate_method: Method,
    pub interval: ConfidenceSet,
}

/// A local test with method policy and lazily computed closures at the
/// requested level and at `α = 1/2`.
#[derive(Debug)]
pub struct Analysis {
    test: LocalTest,
    policy: MethodPolicy,
    closure: OnceLock<Arc<ClosureResult>>,
    median: OnceLock<Arc<Analysis>>,
}

impl Analysis {
    pub fn new(test: LocalTest, policy: MethodPolicy) -> Self {
        Self {
            test,
            policy,
            closure: OnceLock::new(),
            median: OnceLock::new(),
        }
    }

    pub fn test(&self) -> &LocalTest {
        &self.test
    }

    pub fn policy(&self) -> &MethodPolicy {
        &self.policy
    }

    pub fn n(&self) -> usize {
        self.test.n()
    }

    pub fn alpha(&self) -> f64 {
        self.test.alpha()
    }

    fn closure_options(&self) -> ClosureOptions {
        ClosureOptions {
            parallel: self.policy.parallel,
            ..Default::default()
        }
    }

    /// The closure, computed on first use, if the policy calls for it.
    pub fn closure(&self) -> Result<Option<Arc<ClosureResult>>> {
        if !self.policy.uses_closure(self.n()) {
            return Ok(None);
        }
        self.full_closure().map(Some)
    }

    fn full_closure(&self) -> Result<Arc<ClosureResult>> {
        if let Some(c) = self.closure.get() {
            return Ok(c.clone());
        }
        let c = Arc::new(run_closure_with(&self.test, &self.closure_options())?);
        Ok(self.closure.get_or_init(|| c).clone())
    }

    pub fn bound(&self, set: &IndexSet) -> Result<ConfidenceSet> {
        let closure = self.closure()?;
        let b = dispatch_bound(&self.test, set, &self.policy, closure.as_deref())?;
        Ok(ConfidenceSet::new(set.clone(), self.alpha(), b.t_upper, b.method))
    }

    pub fn curve(&self) -> Result<FdpCurve> {
        let closure = self.closure()?;
        fdp_curve(&self.test, &self.policy, closure.as_deref())
    }

    /// Inclusion-minimal rejected sets; needs the full closure.
    pub fn defining(&self) -> Result<Vec<IndexSet>> {
        if self.n() > self.policy.closure_cap.min(MAX_CLOSURE_N) {
            return Err(Error::CapExceeded {
                n: self.n(),
                cap: self.policy.closure_cap.min(MAX_CLOSURE_N),
            });
        }
        Ok(self.full_closure()?.defining_rejections())
    }

    fn median_analysis(&self) -> Result<Arc<Analysis>> {
        if let Some(a) = self.median.get() {
            return Ok(a.clone());
        }
        match self.test.spec() {
            TestSpec::SimesFamily {
                family: FamilyVariant::Constant { .. },
            } => {
                return Err(Error::NoMethod(
                    "constant critical values are calibrated for one level and cannot be rerun at 1/2"
                        .into(),
                ))
            }
            TestSpec::Table { .. } => {
                return Err(Error::NoMethod(
                    "an explicit rejection table has no level to change".into(),
                ))
            }
            _ => {}
        }
        let a = Arc::new(Analysis::new(self.test.with_alpha(0.5)?, self.policy));
        Ok(self.median.get_or_init(|| a).clone())
    }

    /// `t_{1/2}(R)` alongside the `(1 - α)` confidence set for `R`.
    pub fn estimate(&self, set: &IndexSet) -> Result<Estimate> {
        let interval = self.bound(set)?;
        let half = self.median_analysis()?.bound(set)?;
        Ok(Estimate {
            estimate: half.t_upper,
            estimate_method: half.method,
            interval,
        })
    }
}

/// One-off confidence set for `R`.
pub fn bound_report(test: &LocalTest, set: &IndexSet, policy: &MethodPolicy) -> Result<ConfidenceSet> {
    let b = dispatch_bound(test, set, policy, None)?;
    Ok(ConfidenceSet::new(set.clone(), test.alpha(), b.t_upper, b.method))
}

/// One-off median estimate `t_{1/2}(R)`.
pub fn estimate_tau(test: &LocalTest, set: &IndexSet, policy: &MethodPolicy) -> Result<usize> {
    let a = Analysis::new(test.clone(), *policy);
    Ok(a.estimate(set)?.estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypotheses::HypothesisSet;
    use proptest::prelude::*;

    const ADVERSE_P: [f64; 16] = [
        0.02, 0.03, 0.04, 0.04, 0.08, 0.10, 0.12, 0.18, 0.20, 0.23, 0.26, 0.28, 0.30, 0.31, 0.40,
        0.50,
    ];

    fn hyps(ps: &[f64]) -> HypothesisSet {
        HypothesisSet::from_pvalues(ps.iter().enumerate().map(|(i, &p)| (format!("H{}", i + 1), p))).unwrap()
    }

    fn top(n: usize, r: usize) -> IndexSet {
        IndexSet::from_indices(n, 0..r).unwrap()
    }

    #[test]
    fn confidence_set_shape() {
        let cs = ConfidenceSet::new(top(5, 3), 0.05, 1, Method::Closure);
        assert_eq!(cs.f_lower, 2);
        assert_eq!(cs.tau_set(), 0..=1);
        assert_eq!(cs.phi_set(), 2..=3);
        assert_eq!(cs.fdp_upper(), (1, 3));
        assert_eq!(cs.provenance(), Provenance::Exact);
    }

    #[test]
    fn adverse_event_estimates() {
        let fisher = Analysis::new(
            LocalTest::new(hyps(&ADVERSE_P), TestSpec::Fisher, 0.05).unwrap(),
            MethodPolicy::default(),
        );
        assert_eq!(fisher.estimate(&top(16, 16)).unwrap().estimate, 2);
        assert_eq!(fisher.estimate(&top(16, 14)).unwrap().estimate, 0);
        let simes = Analysis::new(
            LocalTest::new(hyps(&ADVERSE_P), TestSpec::simes(), 0.05).unwrap(),
            MethodPolicy::default(),
        );
        let e = simes.estimate(&top(16, 16)).unwrap();
        assert_eq!(e.estimate, 0);
        assert_eq!(e.interval.f_lower, 0);
    }

    #[test]
    fn gastro_triple() {
        let a = Analysis::new(
            LocalTest::new(hyps(&ADVERSE_P), TestSpec::Fisher, 0.05).unwrap(),
            MethodPolicy::default(),
        );
        let cs = a.bound(&IndexSet::from_indices(16, [2, 3, 4]).unwrap()).unwrap();
        assert_eq!(cs.phi_set(), 1..=3);
        assert_eq!(cs.provenance(), Provenance::Exact);
        let c1 = a.closure().unwrap().unwrap();
        let c2 = a.closure().unwrap().unwrap();
        assert!(Arc::ptr_eq(&c1, &c2));
    }

    #[test]
    fn constant_family_has_no_median_estimate() {
        let t = LocalTest::new(hyps(&[0.01, 0.2]), TestSpec::constant(vec![0.01, 0.02]), 0.05).unwrap();
        let a = Analysis::new(t, MethodPolicy::default());
        assert!(matches!(a.estimate(&top(2, 1)), Err(Error::NoMethod(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        // testing only R from the start is at least as informative as
        // selecting R after testing everything
        #[test]
        fn a_priori_restriction_dominates(
            ps in proptest::collection::vec(prop_oneof![0.0001f64..1.0, 0.0001f64..0.03], 3..=9),
            mask in any::<u64>(),
        ) {
            let n = ps.len();
            let m = (mask & ((1 << n) - 1)).max(1);
            let set = IndexSet::from_mask(n, m);
            let h = hyps(&ps);
            let post_hoc = bound_report(
                &LocalTest::new(h.clone(), TestSpec::Fisher, 0.05).unwrap(),
                &set,
                &MethodPolicy::default(),
            ).unwrap();
            let sub = h.restrict(&set).unwrap();
            let k = sub.len();
            let a_priori = bound_report(
                &LocalTest::new(sub, TestSpec::Fisher, 0.05).unwrap(),
                &IndexSet::full(k),
                &MethodPolicy::default(),
            ).unwrap();
            prop_assert!(a_priori.f_lower >= post_hoc.f_lower);
        }
    }
}
