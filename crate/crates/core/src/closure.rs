//! Exact closed testing over the full subset lattice.
//!
//! Subsets of `{0..n}` are bit masks; bit `i` stands for hypothesis `i`.
//! The rejected family 𝒳 is stored as a flat bit array indexed by mask and
//! built top-down by cardinality, so a set is only tested locally when all
//! of its immediate supersets survived.

use crate::bounds::ConfidenceSet;
use crate::error::{Error, Result};
use crate::hypotheses::IndexSet;
use crate::localtests::LocalTest;
use crate::par;

/// Hard limit on the number of hypotheses for the full closure.
pub const MAX_CLOSURE_N: usize = 25;

const CHUNK: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClosureOptions {
    /// Skip local tests of sets with a surviving superset.
    pub prune: bool,
    /// Keep the raw local-test outcomes 𝒰 (implies evaluating every set).
    pub record_raw: bool,
    pub parallel: bool,
    pub cap: usize,
}

impl Default for ClosureOptions {
    fn default() -> Self {
        Self {
            prune: true,
            record_raw: false,
            parallel: crate::PARALLEL,
            cap: MAX_CLOSURE_N,
        }
    }
}

impl ClosureOptions {
    pub fn unpruned() -> Self {
        Self {
            prune: false,
            record_raw: true,
            ..Self::default()
        }
    }

    pub fn sequential(mut self) -> Self {
        self.parallel = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClosureStats {
    /// Local tests actually run.
    pub evaluated: u64,
    /// Local tests skipped because a superset already survived.
    pub pruned: u64,
}

/// Flat bit array over all `2^n` masks.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Lattice {
    words: Vec<u64>,
}

impl Lattice {
    fn new(n: usize) -> Self {
        Self {
            words: vec![0; (1usize << n).div_ceil(64)],
        }
    }

    #[inline]
    fn get(&self, mask: u64) -> bool {
        self.words[(mask >> 6) as usize] >> (mask & 63) & 1 == 1
    }

    #[inline]
    fn set(&mut self, mask: u64) {
        self.words[(mask >> 6) as usize] |= 1 << (mask & 63);
    }
}

#[derive(Debug, Clone)]
pub struct ClosureResult {
    n: usize,
    alpha: f64,
    rejected: Lattice,
    raw: Option<Lattice>,
    stats: ClosureStats,
}

/// Closed testing with default options.
pub fn run_closure(test: &LocalTest) -> Result<ClosureResult> {
    run_closure_with(test, &ClosureOptions::default())
}

pub fn run_closure_with(test: &LocalTest, opts: &ClosureOptions) -> Result<ClosureResult> {
    let n = test.n();
    let cap = opts.cap.min(MAX_CLOSURE_N);
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    let binom = binomials(n);
    let mut rejected = Lattice::new(n);
    let mut raw = opts.record_raw.then(|| Lattice::new(n));
    let mut stats = ClosureStats::default();
    let evaluate_all = opts.record_raw || !opts.prune;
    let full: u64 = (1u64 << n) - 1;

    for k in (1..=n).rev() {
        let layer = binom[n][k] as usize;
        let chunks = layer.div_ceil(CHUNK);
        let survivors = &rejected;
        let outcomes = par::map_range(chunks, opts.parallel, |c| {
            let start = c * CHUNK;
            let len = CHUNK.min(layer - start);
            let mut mask = unrank_colex(start as u64, k, &binom);
            let mut out = ChunkOutcome::default();
            let mut members = [0usize; MAX_CLOSURE_N];
            for step in 0..len {
                if step > 0 {
                    mask = next_same_popcount(mask);
                }
                let supers_ok = k == n || {
                    let mut missing = !mask & full;
                    let mut ok = true;
                    while missing != 0 {
                        let bit = missing & missing.wrapping_neg();
                        if !survivors.get(mask | bit) {
                            ok = false;
                            break;
                        }
                        missing ^= bit;
                    }
                    ok
                };
                if !supers_ok && !evaluate_all {
                    out.pruned += 1;
                    continue;
                }
                let size = fill_members(mask, &mut members);
                let local = match test.rejects(&members[..size]) {
                    Ok(v) => v,
                    Err(e) => {
                        out.error = Some((mask, e));
                        return out;
                    }
                };
                out.evaluated += 1;
                if local {
                    out.raw.push(mask);
                    if supers_ok {
                        out.survivors.push(mask);
                    }
                }
            }
            out
        });
        for out in outcomes {
            if let Some((mask, e)) = out.error {
                return Err(Error::LocalTest {
                    set: IndexSet::from_mask(n, mask).to_string(),
                    source: Box::new(e),
                });
            }
            stats.evaluated += out.evaluated;
            stats.pruned += out.pruned;
            for m in out.survivors {
                rejected.set(m);
            }
            if let Some(raw) = raw.as_mut() {
                for m in out.raw {
                    raw.set(m);
                }
            }
        }
    }
    Ok(ClosureResult {
        n,
        alpha: test.alpha(),
        rejected,
        raw,
        stats,
    })
}

#[derive(Default)]
struct ChunkOutcome {
    survivors: Vec<u64>,
    raw: Vec<u64>,
    evaluated: u64,
    pruned: u64,
    error: Option<(u64, Error)>,
}

fn fill_members(mask: u64, buf: &mut [usize]) -> usize {
    let mut rest = mask;
    let mut k = 0;
    while rest != 0 {
        buf[k] = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        k += 1;
    }
    k
}

/// Pascal's triangle up to row `n`.
fn binomials(n: usize) -> Vec<Vec<u64>> {
    let mut rows = vec![vec![0u64; n + 2]; n + 2];
    for a in 0..=n + 1 {
        rows[a][0] = 1;
        for b in 1..=a {
            rows[a][b] = rows[a - 1][b - 1] + if b < a { rows[a - 1][b] } else { 0 };
        }
    }
    rows
}

/// The `rank`-th `k`-subset of `{0, 1, ...}` in colex order as a mask.
fn unrank_colex(mut rank: u64, k: usize, binom: &[Vec<u64>]) -> u64 {
    let mut mask = 0u64;
    let mut top = binom.len() - 1;
    for i in (1..=k).rev() {
        let mut c = top.min(binom.len() - 1);
        // largest c with C(c, i) <= rank
        while binomial_at(binom, c, i) > rank {
            c -= 1;
        }
        mask |= 1 << c;
        rank -= binomial_at(binom, c, i);
        top = c.saturating_sub(1);
    }
    mask
}

fn binomial_at(binom: &[Vec<u64>], a: usize, b: usize) -> u64 {
    if b > a {
        0
    } else {
        binom[a][b]
    }
}

/// Gosper's hack: the next larger integer with the same number of set bits.
fn next_same_popcount(v: u64) -> u64 {
    let c = v & v.wrapping_neg();
    let r = v + c;
    (((r ^ v) >> 2) / c) | r
}

impl ClosureResult {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn stats(&self) -> ClosureStats {
        self.stats
    }

    /// Whether the set with this mask is in 𝒳. The empty mask never is.
    pub fn rejects_mask(&self, mask: u64) -> bool {
        mask != 0 && self.rejected.get(mask)
    }

    pub fn rejects(&self, set: &IndexSet) -> bool {
        set.to_mask().is_some_and(|m| set.universe() == self.n && self.rejects_mask(m))
    }

    /// The raw local-test outcome for a set, when recorded.
    pub fn raw_rejects(&self, set: &IndexSet) -> Option<bool> {
        let raw = self.raw.as_ref()?;
        let m = set.to_mask()?;
        Some(m != 0 && raw.get(m))
    }

    pub fn has_raw(&self) -> bool {
        self.raw.is_some()
    }

    /// Number of sets in 𝒳.
    pub fn rejected_count(&self) -> u64 {
        self.rejected.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    fn check_query(&self, set: &IndexSet) -> Result<u64> {
        if set.universe() != self.n {
            return Err(Error::Dimension(format!(
                "set over {} hypotheses, closure over {}",
                set.universe(),
                self.n
            )));
        }
        if set.is_empty() {
            return Err(Error::Invalid("the query set is empty".into()));
        }
        Ok(set.to_mask().expect("n <= 25 fits one word"))
    }

    /// Size of the largest subset of `set` outside 𝒳, or 0 if none.
    pub fn t_alpha(&self, set: &IndexSet) -> Result<usize> {
        let mask = self.check_query(set)?;
        Ok(self.t_alpha_mask(mask))
    }

    pub(crate) fn t_alpha_mask(&self, mask: u64) -> usize {
        let size = mask.count_ones() as usize;
        if !self.rejects_mask(mask) {
            return size;
        }
        let mut members = [0usize; MAX_CLOSURE_N];
        fill_members(mask, &mut members);
        for k in (1..size).rev() {
            // position masks over the members of `mask`, in colex order
            let last = ((1u64 << k) - 1) << (size - k);
            let mut pos = (1u64 << k) - 1;
            loop {
                let mut sub = 0u64;
                let mut rest = pos;
                while rest != 0 {
                    sub |= 1 << members[rest.trailing_zeros() as usize];
                    rest &= rest - 1;
                }
                if !self.rejected.get(sub) {
                    return k;
                }
                if pos == last {
                    break;
                }
                pos = next_same_popcount(pos);
            }
        }
        0
    }

    pub fn confidence_set(&self, set: &IndexSet) -> Result<ConfidenceSet> {
        let t = self.t_alpha(set)?;
        Ok(ConfidenceSet::new(set.clone(), self.alpha, t, crate::shortcuts::Method::Closure))
    }

    /// `t_α(R)` for every mask `R` at once; entry 0 is 0.
    pub fn t_table(&self) -> Vec<u8> {
        let len = 1usize << self.n;
        let mut t = vec![0u8; len];
        for mask in 1..len as u64 {
            t[mask as usize] = if !self.rejected.get(mask) {
                mask.count_ones() as u8
            } else {
                let mut best = 0u8;
                let mut rest = mask;
                while rest != 0 {
                    let bit = rest & rest.wrapping_neg();
                    best = best.max(t[(mask ^ bit) as usize]);
                    rest ^= bit;
                }
                best
            };
        }
        t
    }

    /// Minimal elements of 𝒳, sorted by size and then in colex order.
    pub fn defining_rejections(&self) -> Vec<IndexSet> {
        let len = 1u64 << self.n;
        let mut out: Vec<u64> = (1..len)
            .filter(|&m| self.rejected.get(m))
            .filter(|&m| {
                let mut rest = m;
                while rest != 0 {
                    let bit = rest & rest.wrapping_neg();
                    if m ^ bit != 0 && self.rejected.get(m ^ bit) {
                        return false;
                    }
                    rest ^= bit;
                }
                true
            })
            .collect();
        // numeric order within a cardinality is colex order
        out.sort_by_key(|&m| (m.count_ones(), m));
        out.into_iter().map(|m| IndexSet::from_mask(self.n, m)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypotheses::HypothesisSet;
    use crate::localtests::TestSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("H{i}")).collect()
    }

    fn table_test(n: usize, rejected: &[&[usize]]) -> LocalTest {
        let hyps = HypothesisSet::new(names(n), Some(vec![0.5; n]), None).unwrap();
        let rejected = rejected
            .iter()
            .map(|s| s.iter().map(|i| format!("H{i}")).collect())
            .collect();
        LocalTest::new(hyps, TestSpec::Table { rejected }, 0.05).unwrap()
    }

    fn set(n: usize, one_based: &[usize]) -> IndexSet {
        IndexSet::from_indices(n, one_based.iter().map(|i| i - 1)).unwrap()
    }

    fn crosses() -> LocalTest {
        table_test(3, &[&[1], &[1, 2], &[1, 3], &[2, 3], &[1, 2, 3]])
    }

    fn fisher_test(ps: &[f64], alpha: f64) -> LocalTest {
        let hyps = HypothesisSet::new(names(ps.len()), Some(ps.to_vec()), None).unwrap();
        LocalTest::new(hyps, TestSpec::Fisher, alpha).unwrap()
    }

    /// Direct transcription of the definition: I ∈ 𝒳 iff every J ⊇ I is in 𝒰.
    fn brute_x(test: &LocalTest) -> Vec<bool> {
        let n = test.n();
        let len = 1u64 << n;
        let u: Vec<bool> = (0..len)
            .map(|m| m != 0 && test.rejects_set(&IndexSet::from_mask(n, m)).unwrap())
            .collect();
        (0..len)
            .map(|i| i != 0 && (0..len).filter(|j| j & i == i).all(|j| u[j as usize]))
            .collect()
    }

    fn brute_t(x: &[bool], r: u64) -> usize {
        (0..=r)
            .filter(|&i| i & r == i && i != 0 && !x[i as usize])
            .map(|i| i.count_ones() as usize)
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn gosper_and_unrank_agree() {
        let binom = binomials(10);
        for k in 1..=10 {
            let mut m = unrank_colex(0, k, &binom);
            assert_eq!(m, (1 << k) - 1);
            for r in 1..binom[10][k] {
                m = next_same_popcount(m);
                assert_eq!(unrank_colex(r, k, &binom), m, "k={k} r={r}");
            }
        }
    }

    #[test]
    fn crosses_closure_equals_raw() {
        let c = run_closure_with(&crosses(), &ClosureOptions::unpruned()).unwrap();
        for m in 1u64..8 {
            let s = IndexSet::from_mask(3, m);
            assert_eq!(c.rejects(&s), c.raw_rejects(&s).unwrap(), "{s}");
        }
        assert_eq!(c.rejected_count(), 5);
        assert_eq!(c.t_alpha(&set(3, &[2, 3])).unwrap(), 1);
        assert_eq!(c.t_alpha(&set(3, &[1])).unwrap(), 0);
        assert_eq!(c.t_alpha(&set(3, &[1, 2, 3])).unwrap(), 1);
        assert_eq!(c.defining_rejections(), vec![set(3, &[1]), set(3, &[2, 3])]);
    }

    #[test]
    fn nothing_rejected() {
        let c = run_closure(&table_test(4, &[])).unwrap();
        assert_eq!(c.rejected_count(), 0);
        assert!(c.defining_rejections().is_empty());
        for m in 1u64..16 {
            let s = IndexSet::from_mask(4, m);
            assert_eq!(c.t_alpha(&s).unwrap(), s.len());
        }
        // only the full set is ever evaluated
        assert_eq!(c.stats().evaluated, 1);
        assert_eq!(c.stats().pruned, 14);
    }

    #[test]
    fn everything_containing_one() {
        let sets: Vec<Vec<usize>> = (1u64..8)
            .filter(|m| m & 1 == 1)
            .map(|m| IndexSet::from_mask(3, m).iter().map(|i| i + 1).collect())
            .collect();
        let refs: Vec<&[usize]> = sets.iter().map(Vec::as_slice).collect();
        let c = run_closure(&table_test(3, &refs)).unwrap();
        assert_eq!(c.defining_rejections(), vec![set(3, &[1])]);
    }

    #[test]
    fn consonant_table_counts_unrejected_elements() {
        // 𝒰 = every set meeting {1, 3}: consonant, elementary rejections at 1 and 3
        let n = 5;
        let sets: Vec<Vec<usize>> = (1u64..32)
            .filter(|m| m & 0b101 != 0)
            .map(|m| IndexSet::from_mask(n, m).iter().map(|i| i + 1).collect())
            .collect();
        let refs: Vec<&[usize]> = sets.iter().map(Vec::as_slice).collect();
        let c = run_closure(&table_test(n, &refs)).unwrap();
        for m in 1u64..32 {
            let r = IndexSet::from_mask(n, m);
            let unrejected = r.iter().filter(|&i| !c.rejects(&IndexSet::from_indices(n, [i]).unwrap())).count();
            assert_eq!(c.t_alpha(&r).unwrap(), unrejected);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let t = fisher_test(&[0.5; 26], 0.05);
        assert!(matches!(run_closure(&t), Err(Error::CapExceeded { n: 26, cap: 25 })));
        let t = fisher_test(&[0.5; 6], 0.05);
        let opts = ClosureOptions {
            cap: 5,
            ..Default::default()
        };
        assert!(matches!(run_closure_with(&t, &opts), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn empty_query_is_rejected() {
        let c = run_closure(&crosses()).unwrap();
        assert!(c.t_alpha(&IndexSet::empty(3)).is_err());
        assert!(c.t_alpha(&IndexSet::full(4)).is_err());
    }

    #[test]
    fn pruned_equals_unpruned_n12() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..3 {
            let ps: Vec<f64> = (0..12).map(|_| rng.random::<f64>().powi(3).max(1e-9)).collect();
            let t = fisher_test(&ps, 0.05);
            let pruned = run_closure(&t).unwrap();
            let full = run_closure_with(&t, &ClosureOptions::unpruned()).unwrap();
            assert_eq!(pruned.rejected, full.rejected);
            assert_eq!(full.stats().evaluated, (1 << 12) - 1);
            assert!(pruned.stats().evaluated <= full.stats().evaluated);
            let seq = run_closure_with(&t, &ClosureOptions::default().sequential()).unwrap();
            assert_eq!(seq.rejected, pruned.rejected);
            assert_eq!(seq.stats(), pruned.stats());
        }
    }

    #[test]
    fn t_table_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ps: Vec<f64> = (0..10).map(|_| rng.random::<f64>().powi(2).max(1e-9)).collect();
        let c = run_closure(&fisher_test(&ps, 0.1)).unwrap();
        let table = c.t_table();
        for m in 1u64..1024 {
            assert_eq!(table[m as usize] as usize, c.t_alpha_mask(m));
        }
    }

    fn closure_strategy() -> impl Strategy<Value = (Vec<f64>, f64)> {
        (
            proptest::collection::vec(prop_oneof![0.0001f64..1.0, 0.0001f64..0.05], 2..=8),
            prop_oneof![Just(0.05), Just(0.2), Just(0.5)],
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_definition((ps, alpha) in closure_strategy()) {
            let t = fisher_test(&ps, alpha);
            let c = run_closure(&t).unwrap();
            let x = brute_x(&t);
            let n = ps.len();
            for m in 1u64..(1 << n) {
                prop_assert_eq!(c.rejects_mask(m), x[m as usize]);
                prop_assert_eq!(c.t_alpha_mask(m), brute_t(&x, m));
            }
        }

        #[test]
        fn random_tables_match_definition(n in 2usize..=6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sets: Vec<Vec<usize>> = (1u64..(1 << n))
                .filter(|_| rng.random::<f64>() < 0.6)
                .map(|m| IndexSet::from_mask(n, m).iter().map(|i| i + 1).collect())
                .collect();
            let refs: Vec<&[usize]> = sets.iter().map(Vec::as_slice).collect();
            let t = table_test(n, &refs);
            let c = run_closure_with(&t, &ClosureOptions::unpruned()).unwrap();
            let x = brute_x(&t);
            for m in 1u64..(1 << n) {
                let s = IndexSet::from_mask(n, m);
                prop_assert_eq!(c.rejects_mask(m), x[m as usize]);
                // 𝒳 ⊆ 𝒰
                if c.rejects(&s) {
                    prop_assert!(c.raw_rejects(&s).unwrap());
                }
            }
        }

        #[test]
        fn t_is_monotone((ps, alpha) in closure_strategy(), a in any::<u64>(), b in any::<u64>()) {
            let n = ps.len();
            let c = run_closure(&fisher_test(&ps, alpha)).unwrap();
            let full = (1u64 << n) - 1;
            let small = (a & b & full).max(1);
            let big = (a | small) & full;
            let (ts, tb) = (c.t_alpha_mask(small), c.t_alpha_mask(big));
            prop_assert!(ts <= tb);
            let fs = small.count_ones() as usize - ts;
            let fb = big.count_ones() as usize - tb;
            prop_assert!(fs <= fb);
        }
    }
}
