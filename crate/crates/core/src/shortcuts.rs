//! Polynomial-time bounds on `t_α(R)` that avoid the full closure.

use serde::Serialize;

use crate::closure::{ClosureResult, MAX_CLOSURE_N};
use crate::error::{Error, Result};
use crate::hypotheses::{HypothesisSet, IndexSet};
use crate::localtests::{fisher_scores, CriticalValueFamily, FisherCriticalValues, LocalTest, TestKind};
use crate::par;

/// Where a bound came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Equal to `t_α(R)`, computed by full closed testing.
    Exact,
    /// A valid upper bound on `t_α(R)` from a shortcut.
    UpperBound,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Exact => "exact",
            Provenance::UpperBound => "upper-bound",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Closure,
    FisherShortcut,
    ExchangeableShortcut,
    SimesCurve,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Closure => "closure",
            Method::FisherShortcut => "fisher-shortcut",
            Method::ExchangeableShortcut => "exchangeable-shortcut",
            Method::SimesCurve => "simes-curve",
        }
    }

    pub fn provenance(self) -> Provenance {
        match self {
            Method::Closure => Provenance::Exact,
            _ => Provenance::UpperBound,
        }
    }
}

/// Lower confidence bounds on the number of false hypotheses among the
/// `r` most significant ones, for `r = 1..n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdpCurve {
    pub alpha: f64,
    pub test: String,
    pub method: Method,
    /// `f_lower[r - 1]` is the bound for the top-`r` set.
    pub f_lower: Vec<usize>,
}

impl FdpCurve {
    /// Builds a curve from per-`r` bounds, taking running maxima. A lower
    /// bound for a top-`r'` set also bounds every larger top set.
    pub fn from_bounds(alpha: f64, test: String, method: Method, raw: Vec<usize>) -> Self {
        let mut best = 0;
        let f_lower = raw
            .into_iter()
            .enumerate()
            .map(|(i, f)| {
                best = best.max(f.min(i + 1));
                best
            })
            .collect();
        Self {
            alpha,
            test,
            method,
            f_lower,
        }
    }

    pub fn len(&self) -> usize {
        self.f_lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_lower.is_empty()
    }

    /// `(r, f_lower(r))` pairs.
    pub fn points(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.f_lower.iter().enumerate().map(|(i, &f)| (i + 1, f))
    }

    pub fn f_at(&self, r: usize) -> usize {
        if r == 0 {
            0
        } else {
            self.f_lower[r - 1]
        }
    }
}

/// For each `k` in `1..=k_max` the largest `r` with `r - f_lower(r) < k`,
/// i.e. the most rejections with fewer than `k` false ones at the curve's
/// confidence level.
pub fn kfwer_frontier(curve: &FdpCurve, k_max: usize) -> Vec<(usize, usize)> {
    (1..=k_max)
        .map(|k| {
            let r = (0..=curve.len())
                .rev()
                .find(|&r| r - curve.f_at(r) < k)
                .unwrap_or(0);
            (k, r)
        })
        .collect()
}

/// Fisher combination shortcut, prepared once per hypothesis set and level.
#[derive(Debug, Clone)]
pub struct FisherShortcut {
    scores: Vec<f64>,
    critical: FisherCriticalValues,
    alpha: f64,
}

/// Per-query working data: sorted `-2 log p` inside and outside `R` with
/// prefix sums, so `u(·, k)` is a lookup.
#[derive(Debug, Clone, Default)]
pub struct FisherScratch {
    inside: Vec<f64>,
    outside: Vec<f64>,
    inside_prefix: Vec<f64>,
    outside_prefix: Vec<f64>,
}

impl FisherScratch {
    fn load(&mut self, scores: &[f64], set: &IndexSet) {
        self.inside.clear();
        self.outside.clear();
        for (i, &x) in scores.iter().enumerate() {
            if set.contains(i) {
                self.inside.push(x);
            } else {
                self.outside.push(x);
            }
        }
        self.inside.sort_by(f64::total_cmp);
        self.outside.sort_by(f64::total_cmp);
        prefix_sums(&self.inside, &mut self.inside_prefix);
        prefix_sums(&self.outside, &mut self.outside_prefix);
    }

    /// Sum of the `k` smallest scores in `R`.
    pub fn u_inside(&self, k: usize) -> f64 {
        self.inside_prefix[k]
    }

    /// Sum of the `k` smallest scores outside `R`.
    pub fn u_outside(&self, k: usize) -> f64 {
        self.outside_prefix[k]
    }
}

fn prefix_sums(values: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.reserve(values.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for v in values {
        acc += v;
        out.push(acc);
    }
}

impl FisherShortcut {
    pub fn new(hyps: &HypothesisSet, alpha: f64) -> Result<Self> {
        let ps = hyps
            .pvalues()
            .ok_or_else(|| Error::Invalid("the Fisher shortcut needs p-values".into()))?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Invalid(format!("alpha must be in (0, 1), got {alpha}")));
        }
        if let Some(p) = ps.iter().find(|&&p| p <= 0.0) {
            return Err(Error::Invalid(format!("the Fisher shortcut needs p in (0, 1], got {p}")));
        }
        let critical = FisherCriticalValues::new(alpha, ps.len());
        if let Some(k) = critical.first_growth_violation()? {
            return Err(Error::ShortcutRequirement(format!(
                "Fisher critical values at alpha = {alpha} violate g_{}/{} <= g_{k}/{k}",
                k + 1,
                k + 1
            )));
        }
        Ok(Self {
            scores: fisher_scores(ps),
            critical,
            alpha,
        })
    }

    /// `None` for non-Fisher tests; an error when the level rules the shortcut out.
    pub(crate) fn from_test(test: &LocalTest) -> Option<Result<Self>> {
        let (scores, critical) = test.fisher_parts()?;
        Some(
            test.exchangeable_shortcut_support()
                .map_err(Error::ShortcutRequirement)
                .map(|()| Self {
                    scores: scores.to_vec(),
                    critical: critical.clone(),
                    alpha: test.alpha(),
                }),
        )
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn bound(&self, set: &IndexSet) -> Result<usize> {
        self.bound_with(set, &mut FisherScratch::default())
    }

    /// Smallest `s` with `u(R, s+1) + u(R̄, j) >= g_{s+1+j}` for all
    /// `0 <= j <= M`, where `M` counts outside scores no larger than the
    /// largest of the `s + 1` smallest scores in `R`; `#R` if none.
    pub fn bound_with(&self, set: &IndexSet, scratch: &mut FisherScratch) -> Result<usize> {
        check_set(set, self.scores.len())?;
        scratch.load(&self.scores, set);
        let size = scratch.inside.len();
        let mut m = 0;
        for s in 0..size {
            let top = scratch.inside[s];
            while m < scratch.outside.len() && scratch.outside[m] <= top {
                m += 1;
            }
            let base = scratch.u_inside(s + 1);
            let mut holds = true;
            for j in 0..=m {
                if base + scratch.u_outside(j) < self.critical.get(s + 1 + j)? {
                    holds = false;
                    break;
                }
            }
            if holds {
                return Ok(s);
            }
        }
        Ok(size)
    }
}

fn check_set(set: &IndexSet, n: usize) -> Result<()> {
    if set.universe() != n {
        return Err(Error::Dimension(format!(
            "set over {} hypotheses, expected {n}",
            set.universe()
        )));
    }
    if set.is_empty() {
        return Err(Error::Invalid("the query set is empty".into()));
    }
    Ok(())
}

/// One-shot Fisher shortcut bound on `t_α(R)`.
pub fn fisher_bound(hyps: &HypothesisSet, set: &IndexSet, alpha: f64) -> Result<usize> {
    FisherShortcut::new(hyps, alpha)?.bound(set)
}

/// Sort key where larger means less significant.
fn insignificance(test: &LocalTest) -> Vec<f64> {
    let h = test.hypotheses();
    match test.kind() {
        TestKind::NormalSumIndependent | TestKind::NormalSumGeneral => {
            h.zscores().unwrap_or_default().iter().map(|z| -z).collect()
        }
        _ => h.pvalues().map(<[f64]>::to_vec).unwrap_or_default(),
    }
}

/// Generic shortcut for exchangeable local tests.
///
/// Returns the smallest `s` such that the local test rejects `Q ∪ Q̄_j` for
/// every `j <= m`, where `Q` holds the `s + 1` least significant members of
/// `R`, `Q̄_j` the `j` least significant hypotheses outside `R` and `m` the
/// number of outside hypotheses at most as significant as every member of `Q`.
pub fn exchangeable_bound(test: &LocalTest, set: &IndexSet) -> Result<usize> {
    test.exchangeable_shortcut_support()
        .map_err(Error::ShortcutRequirement)?;
    check_set(set, test.n())?;
    let key = insignificance(test);
    let by_key = |a: &usize, b: &usize| key[*b].total_cmp(&key[*a]).then(a.cmp(b));
    let mut inside: Vec<usize> = set.iter().collect();
    let mut outside: Vec<usize> = set.complement().iter().collect();
    // least significant first
    inside.sort_by(by_key);
    outside.sort_by(by_key);
    let mut members = Vec::with_capacity(test.n());
    let mut m = 0;
    for s in 0..inside.len() {
        let edge = key[inside[s]];
        while m < outside.len() && key[outside[m]] >= edge {
            m += 1;
        }
        members.clear();
        members.extend_from_slice(&inside[..=s]);
        let mut holds = true;
        for j in 0..=m {
            if j > 0 {
                members.push(outside[j - 1]);
            }
            if !test.rejects(&members)? {
                holds = false;
                break;
            }
        }
        if holds {
            return Ok(s);
        }
    }
    Ok(inside.len())
}

/// Which Simes-curve recursion to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimesVariant {
    /// `S_r = max{s : p_(r) <= c^n_{r-s}}`
    Basic,
    /// `S_r = max{s : p_(r) <= c^{n-s}_{r-s}}`, valid under the shift condition.
    Strong,
}

/// Curve of lower bounds for threshold sets `{i : p_i <= q}` under a
/// Simes-type family. Uses the strong recursion when the family allows it.
pub fn simes_curve(hyps: &HypothesisSet, family: &CriticalValueFamily) -> Result<FdpCurve> {
    let variant = if family.satisfies_cond8() {
        SimesVariant::Strong
    } else {
        SimesVariant::Basic
    };
    simes_curve_variant(hyps, family, variant)
}

pub fn simes_curve_variant(
    hyps: &HypothesisSet,
    family: &CriticalValueFamily,
    variant: SimesVariant,
) -> Result<FdpCurve> {
    if !family.satisfies_cond7() {
        return Err(Error::ShortcutRequirement(
            "critical values must not increase with the set size".into(),
        ));
    }
    if variant == SimesVariant::Strong && !family.satisfies_cond8() {
        return Err(Error::ShortcutRequirement(
            "the strong curve needs shift-monotone critical values".into(),
        ));
    }
    let ps = hyps
        .pvalues()
        .ok_or_else(|| Error::Invalid("the Simes curve needs p-values".into()))?;
    let n = ps.len();
    if family.max_size() != n {
        return Err(Error::Dimension(format!(
            "critical values for {} hypotheses, got {n}",
            family.max_size()
        )));
    }
    let mut sorted = ps.to_vec();
    sorted.sort_by(f64::total_cmp);
    let raw: Vec<usize> = (1..=n)
        .map(|r| overshoot(&sorted, family, variant, r).map_or(0, |s| s + 1))
        .collect();
    Ok(FdpCurve::from_bounds(
        family.alpha(),
        "simes_family".into(),
        Method::SimesCurve,
        raw,
    ))
}

fn simes_critical(family: &CriticalValueFamily, variant: SimesVariant, n: usize, r: usize, s: usize) -> f64 {
    match variant {
        SimesVariant::Basic => family.critical(r - s, n),
        SimesVariant::Strong => family.critical(r - s, n - s),
    }
}

/// `S_r`, or `None` when even `s = 0` fails. The admissible `s` form an
/// initial segment, so a binary search finds the largest.
fn overshoot(sorted: &[f64], family: &CriticalValueFamily, variant: SimesVariant, r: usize) -> Option<usize> {
    let n = sorted.len();
    let p = sorted[r - 1];
    let ok = |s: usize| p <= simes_critical(family, variant, n, r, s);
    if !ok(0) {
        return None;
    }
    let (mut lo, mut hi) = (0, r - 1);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Some(lo)
}

/// Whether `set` is a threshold set: no outside p-value is below an inside one.
pub fn is_threshold_set(hyps: &HypothesisSet, set: &IndexSet) -> bool {
    let Some(ps) = hyps.pvalues() else {
        return false;
    };
    let max_in = set.iter().map(|i| ps[i]).fold(f64::NEG_INFINITY, f64::max);
    set.complement().iter().all(|i| ps[i] >= max_in)
}

/// How to pick a method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MethodChoice {
    /// Closure when `n` is small enough, otherwise the best shortcut.
    #[default]
    Auto,
    Closure,
    Shortcut,
}

impl std::str::FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(MethodChoice::Auto),
            "closure" | "exact" => Ok(MethodChoice::Closure),
            "shortcut" => Ok(MethodChoice::Shortcut),
            other => Err(Error::Invalid(format!(
                "unknown method `{other}` (expected auto, closure or shortcut)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodPolicy {
    pub choice: MethodChoice,
    /// Largest `n` for which `Auto` runs the closure.
    pub closure_cap: usize,
    pub parallel: bool,
}

impl Default for MethodPolicy {
    fn default() -> Self {
        Self {
            choice: MethodChoice::Auto,
            closure_cap: MAX_CLOSURE_N,
            parallel: crate::PARALLEL,
        }
    }
}

impl MethodPolicy {
    pub fn uses_closure(&self, n: usize) -> bool {
        match self.choice {
            MethodChoice::Closure => true,
            MethodChoice::Shortcut => false,
            MethodChoice::Auto => n <= self.closure_cap.min(MAX_CLOSURE_N),
        }
    }
}

/// A bound together with the method that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bound {
    pub t_upper: usize,
    pub method: Method,
}

impl Bound {
    pub fn provenance(&self) -> Provenance {
        self.method.provenance()
    }
}

fn no_method(test: &LocalTest, e: Error) -> Error {
    match e {
        Error::ShortcutRequirement(why) => Error::NoMethod(format!(
            "{} with n = {} > {MAX_CLOSURE_N}: {why}",
            test.spec().label(),
            test.n()
        )),
        other => other,
    }
}

/// Shortcut bound for an arbitrary set, choosing the strongest applicable
/// shortcut for the test.
pub fn shortcut_bound(test: &LocalTest, set: &IndexSet) -> Result<Bound> {
    check_set(set, test.n())?;
    if let Some(fisher) = FisherShortcut::from_test(test) {
        let fisher = fisher.map_err(|e| no_method(test, e))?;
        return Ok(Bound {
            t_upper: fisher.bound(set)?,
            method: Method::FisherShortcut,
        });
    }
    let support = test.exchangeable_shortcut_support();
    if support.is_ok() {
        return Ok(Bound {
            t_upper: exchangeable_bound(test, set)?,
            method: Method::ExchangeableShortcut,
        });
    }
    if let Some(family) = test.critical_family() {
        if is_threshold_set(test.hypotheses(), set) {
            let curve = simes_curve(test.hypotheses(), family)?;
            return Ok(Bound {
                t_upper: set.len() - curve.f_at(set.len()),
                method: Method::SimesCurve,
            });
        }
        return Err(Error::NoMethod(format!(
            "{} with n = {} > {MAX_CLOSURE_N} supports only threshold sets {{i : p_i <= q}}",
            test.spec().label(),
            test.n()
        )));
    }
    Err(Error::NoMethod(format!(
        "{} with n = {}: {}",
        test.spec().label(),
        test.n(),
        support.err().unwrap_or_default()
    )))
}

/// Bound on `t_α(R)` by closure or shortcut according to `policy`. A
/// precomputed closure is used when given.
pub fn dispatch_bound(
    test: &LocalTest,
    set: &IndexSet,
    policy: &MethodPolicy,
    closure: Option<&ClosureResult>,
) -> Result<Bound> {
    if policy.uses_closure(test.n()) {
        let t_upper = match closure {
            Some(c) => c.t_alpha(set)?,
            None => {
                let opts = crate::closure::ClosureOptions {
                    parallel: policy.parallel,
                    ..Default::default()
                };
                crate::closure::run_closure_with(test, &opts)?.t_alpha(set)?
            }
        };
        return Ok(Bound {
            t_upper,
            method: Method::Closure,
        });
    }
    shortcut_bound(test, set)
}

/// The `r` most significant hypotheses for `r = 1..n`, as index lists.
pub fn top_sets(test: &LocalTest) -> Vec<IndexSet> {
    let order = test.significance_order();
    let n = test.n();
    let mut acc = IndexSet::empty(n);
    order
        .iter()
        .map(|&i| {
            acc.insert(i);
            acc.clone()
        })
        .collect()
}

/// Curve over top-`r` sets by closure or shortcut according to `policy`.
pub fn fdp_curve(test: &LocalTest, policy: &MethodPolicy, closure: Option<&ClosureResult>) -> Result<FdpCurve> {
    let label = test.spec().label();
    let alpha = test.alpha();
    let sets = top_sets(test);
    if policy.uses_closure(test.n()) {
        let owned;
        let c = match closure {
            Some(c) => c,
            None => {
                let opts = crate::closure::ClosureOptions {
                    parallel: policy.parallel,
                    ..Default::default()
                };
                owned = crate::closure::run_closure_with(test, &opts)?;
                &owned
            }
        };
        let raw = par::map_slice(&sets, policy.parallel, |s| c.t_alpha(s).map(|t| s.len() - t))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        return Ok(FdpCurve::from_bounds(alpha, label, Method::Closure, raw));
    }
    if let Some(fisher) = FisherShortcut::from_test(test) {
        let fisher = fisher.map_err(|e| no_method(test, e))?;
        // warm the critical values once so workers only read them
        for r in 1..=test.n() {
            fisher.critical.get(r)?;
        }
        let raw = par::map_slice(&sets, policy.parallel, |s| {
            fisher.bound(s).map(|t| s.len() - t)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        return Ok(FdpCurve::from_bounds(alpha, label, Method::FisherShortcut, raw));
    }
    if let Some(family) = test.critical_family() {
        let mut curve = simes_curve(test.hypotheses(), family)?;
        curve.test = label;
        return Ok(curve);
    }
    let support = test.exchangeable_shortcut_support();
    if support.is_ok() {
        let raw = par::map_slice(&sets, policy.parallel, |s| {
            exchangeable_bound(test, s).map(|t| s.len() - t)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        return Ok(FdpCurve::from_bounds(alpha, label, Method::ExchangeableShortcut, raw));
    }
    Err(Error::NoMethod(format!(
        "{} with n = {}: {}",
        label,
        test.n(),
        support.err().unwrap_or_default()
    )))
}
