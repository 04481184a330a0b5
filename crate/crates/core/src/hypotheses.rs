//! Elementary hypotheses and index sets over them.

use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default floor applied to p-values so that `-2 log p` stays finite.
pub const DEFAULT_P_FLOOR: f64 = 1e-300;

/// Non-fatal issues noticed while building a [`HypothesisSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampWarning {
    pub name: String,
    pub original: f64,
    pub clamped: f64,
}

/// The elementary hypotheses `H_1..H_n` with their p-values and/or z-scores.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    names: Vec<String>,
    pvalues: Option<Vec<f64>>,
    zscores: Option<Vec<f64>>,
    warnings: Vec<ClampWarning>,
}

pub(crate) fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

impl HypothesisSet {
    pub fn new(
        names: Vec<String>,
        pvalues: Option<Vec<f64>>,
        zscores: Option<Vec<f64>>,
    ) -> Result<Self> {
        Self::with_floor(names, pvalues, zscores, DEFAULT_P_FLOOR)
    }

    /// Like [`HypothesisSet::new`] with a custom floor for tiny p-values.
    pub fn with_floor(
        names: Vec<String>,
        pvalues: Option<Vec<f64>>,
        zscores: Option<Vec<f64>>,
        p_floor: f64,
    ) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Invalid("at least one hypothesis is required".into()));
        }
        if pvalues.is_none() && zscores.is_none() {
            return Err(Error::Invalid("p-values or z-scores are required".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(names.len());
        for name in &names {
            if !valid_name(name) {
                return Err(Error::Invalid(format!(
                    "hypothesis name `{name}` must be non-empty and use only [A-Za-z0-9_-]"
                )));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateName(name.clone()));
            }
        }
        let mut warnings = Vec::new();
        let pvalues = match pvalues {
            Some(mut ps) => {
                if ps.len() != names.len() {
                    return Err(Error::Dimension(format!(
                        "{} names but {} p-values",
                        names.len(),
                        ps.len()
                    )));
                }
                for (i, p) in ps.iter_mut().enumerate() {
                    if !(0.0..=1.0).contains(p) {
                        return Err(Error::PValueRange {
                            line: i + 1,
                            value: *p,
                        });
                    }
                    if *p < p_floor {
                        warnings.push(ClampWarning {
                            name: names[i].clone(),
                            original: *p,
                            clamped: p_floor,
                        });
                        *p = p_floor;
                    }
                }
                Some(ps)
            }
            None => None,
        };
        if let Some(zs) = &zscores {
            if zs.len() != names.len() {
                return Err(Error::Dimension(format!(
                    "{} names but {} z-scores",
                    names.len(),
                    zs.len()
                )));
            }
            if let Some(z) = zs.iter().find(|z| !z.is_finite()) {
                return Err(Error::Invalid(format!("z-score {z} is not finite")));
            }
        }
        for w in &warnings {
            log::warn!(
                "p-value {} of `{}` clamped to {}",
                w.original,
                w.name,
                w.clamped
            );
        }
        Ok(Self {
            names,
            pvalues,
            zscores,
            warnings,
        })
    }

    pub fn from_pvalues<S: Into<String>>(entries: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let (names, ps): (Vec<String>, Vec<f64>) =
            entries.into_iter().map(|(n, p)| (n.into(), p)).unzip();
        Self::new(names, Some(ps), None)
    }

    pub fn from_zscores<S: Into<String>>(entries: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let (names, zs): (Vec<String>, Vec<f64>) =
            entries.into_iter().map(|(n, z)| (n.into(), z)).unzip();
        Self::new(names, None, Some(zs))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn pvalues(&self) -> Option<&[f64]> {
        self.pvalues.as_deref()
    }

    pub fn zscores(&self) -> Option<&[f64]> {
        self.zscores.as_deref()
    }

    pub fn warnings(&self) -> &[ClampWarning] {
        &self.warnings
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Indices ordered by increasing p-value, ties by input position.
    pub fn order_by_pvalue(&self) -> Option<Vec<usize>> {
        let ps = self.pvalues.as_ref()?;
        let mut idx: Vec<usize> = (0..ps.len()).collect();
        idx.sort_by(|&a, &b| ps[a].total_cmp(&ps[b]));
        Some(idx)
    }

    /// Indices ordered by decreasing z-score, ties by input position.
    pub fn order_by_zscore(&self) -> Option<Vec<usize>> {
        let zs = self.zscores.as_ref()?;
        let mut idx: Vec<usize> = (0..zs.len()).collect();
        idx.sort_by(|&a, &b| zs[b].total_cmp(&zs[a]));
        Some(idx)
    }

    /// The subset `{1..n}` restricted to `members`, keeping their order.
    pub fn restrict(&self, members: &IndexSet) -> Result<Self> {
        let keep: Vec<usize> = members.iter().collect();
        let pick = |v: &Vec<f64>| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self::new(
            keep.iter().map(|&i| self.names[i].clone()).collect(),
            self.pvalues.as_ref().map(pick),
            self.zscores.as_ref().map(pick),
        )
    }

    pub fn names_of(&self, set: &IndexSet) -> Vec<String> {
        set.iter().map(|i| self.names[i].clone()).collect()
    }
}

/// Parse the `name,p` / `name,z` (or `name,p,z`) CSV format.
pub fn parse_hypotheses<R: Read>(source: R) -> Result<HypothesisSet> {
    parse_hypotheses_with_floor(source, DEFAULT_P_FLOOR)
}

pub fn parse_hypotheses_with_floor<R: Read>(source: R, p_floor: f64) -> Result<HypothesisSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut records = reader.records();

    let header = match records.next() {
        Some(rec) => rec.map_err(|e| csv_error(&e))?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty input".into(),
            })
        }
    };
    let columns: Vec<&str> = header.iter().collect();
    if columns.first() != Some(&"name") {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with `name`".into(),
        });
    }
    let p_col = columns.iter().position(|c| *c == "p");
    let z_col = columns.iter().position(|c| *c == "z");
    if p_col.is_none() && z_col.is_none() {
        return Err(Error::Parse {
            line: 1,
            message: "header needs a `p` or `z` column".into(),
        });
    }
    if let Some(bad) = columns.iter().skip(1).find(|c| **c != "p" && **c != "z") {
        return Err(Error::Parse {
            line: 1,
            message: format!("unknown column `{bad}`"),
        });
    }

    let mut names = Vec::new();
    let mut ps = Vec::new();
    let mut zs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(&e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != columns.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", columns.len(), rec.len()),
            });
        }
        let name = rec[0].to_string();
        if !valid_name(&name) {
            return Err(Error::Parse {
                line,
                message: format!("invalid hypothesis name `{name}`"),
            });
        }
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateName(name));
        }
        let number = |col: usize| -> Result<f64> {
            rec[col].parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("`{}` is not a number", &rec[col]),
            })
        };
        if let Some(c) = p_col {
            let p = number(c)?;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::PValueRange { line, value: p });
            }
            ps.push(p);
        }
        if let Some(c) = z_col {
            zs.push(number(c)?);
        }
        names.push(name);
    }
    if names.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no hypotheses".into(),
        });
    }
    HypothesisSet::with_floor(
        names,
        p_col.map(|_| ps),
        z_col.map(|_| zs),
        p_floor,
    )
}

pub(crate) fn csv_error(e: &csv::Error) -> Error {
    Error::Parse {
        line: e.position().map(|p| p.line() as usize).unwrap_or(0),
        message: e.to_string(),
    }
}

/// A subset of `{0..n}` stored as a bit set. Index `i` stands for `H_{i+1}`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct IndexSet {
    words: Vec<u64>,
    n: usize,
}

impl IndexSet {
    pub fn empty(n: usize) -> Self {
        Self {
            words: vec![0; n.div_ceil(64)],
            n,
        }
    }

    pub fn full(n: usize) -> Self {
        let mut s = Self::empty(n);
        for w in s.words.iter_mut() {
            *w = u64::MAX;
        }
        s.trim();
        s
    }

    pub fn from_indices(n: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut s = Self::empty(n);
        for i in indices {
            if i >= n {
                return Err(Error::Invalid(format!("index {i} out of range for n = {n}")));
            }
            s.insert(i);
        }
        Ok(s)
    }

    /// Build from a bit mask; bits at or above `n` are dropped.
    pub fn from_mask(n: usize, mask: u64) -> Self {
        let mut s = Self::empty(n);
        if n > 0 {
            s.words[0] = mask;
            s.trim();
        }
        s
    }

    /// The bit mask, if the ambient size fits in one word.
    pub fn to_mask(&self) -> Option<u64> {
        match self.words.len() {
            0 => Some(0),
            1 => Some(self.words[0]),
            _ => None,
        }
    }

    fn trim(&mut self) {
        let rem = self.n % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn universe(&self) -> usize {
        self.n
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.n, "index {i} out of range for n = {}", self.n);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        if i < self.n {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.n && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn complement(&self) -> Self {
        let mut s = Self {
            words: self.words.iter().map(|w| !w).collect(),
            n: self.n,
        };
        s.trim();
        s
    }

    fn zip_with(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        assert_eq!(self.n, other.n, "index sets over different universes");
        Self {
            words: self
                .words
                .iter()
                .zip(&other.words)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            n: self.n,
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn difference(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a & !b)
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.n == other.n && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn is_superset(&self, other: &Self) -> bool {
        other.is_subset(self)
    }

    /// Members in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let bit = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * 64 + bit)
            })
        })
    }
}

impl fmt::Debug for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // 1-based, matching hypothesis numbering
        f.debug_set().entries(self.iter().map(|i| i + 1)).finish()
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", i + 1)?;
        }
        write!(f, "}}")
    }
}

/// Iterator over the `k`-subsets of a set in colexicographic order.
pub struct Subsets {
    members: Vec<usize>,
    positions: Vec<usize>,
    n: usize,
    done: bool,
}

/// All `C(#R, k)` subsets of `r` with `k` elements, in colex order.
///
/// `k = 0` yields the empty set once; `k > #R` yields nothing.
pub fn subsets_of_size(r: &IndexSet, k: usize) -> Subsets {
    let members: Vec<usize> = r.iter().collect();
    let done = k > members.len();
    Subsets {
        positions: (0..k).collect(),
        members,
        n: r.universe(),
        done,
    }
}

impl Iterator for Subsets {
    type Item = IndexSet;

    fn next(&mut self) -> Option<IndexSet> {
        if self.done {
            return None;
        }
        let mut out = IndexSet::empty(self.n);
        for &p in &self.positions {
            out.insert(self.members[p]);
        }
        // colex successor: bump the lowest position that can move up
        let k = self.positions.len();
        let m = self.members.len();
        let mut j = 0;
        loop {
            if j == k {
                self.done = true;
                break;
            }
            let limit = if j + 1 < k { self.positions[j + 1] } else { m };
            if self.positions[j] + 1 < limit {
                self.positions[j] += 1;
                for (t, pos) in self.positions.iter_mut().enumerate().take(j) {
                    *pos = t;
                }
                break;
            }
            j += 1;
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;


    fn set(n: usize, one_based: &[usize]) -> IndexSet {
        IndexSet::from_indices(n, one_based.iter().map(|i| i - 1)).unwrap()
    }

    #[test]
    fn parses_adverse_events() {
        let h = parse_hypotheses(crate::testdata::ADVERSE_EVENTS.as_bytes()).unwrap();
        assert_eq!(h.len(), 16);
        let order = h.order_by_pvalue().unwrap();
        let ps = h.pvalues().unwrap();
        assert_eq!(ps[order[0]], 0.02);
        assert_eq!(ps[order[15]], 0.50);
        // stable tie between Diarrhea and Nausea
        assert_eq!(order[2], 2);
        assert_eq!(order[3], 3);
        assert!(h.warnings().is_empty());
    }

    #[test]
    fn parses_single_row() {
        let h = parse_hypotheses("name,p\nH1,0.051\n".as_bytes()).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h.pvalues().unwrap(), &[0.051]);
    }

    #[test]
    fn zero_pvalue_is_clamped_with_warning() {
        let h = parse_hypotheses("name,p\nA,0\nB,0.5\n".as_bytes()).unwrap();
        assert_eq!(h.pvalues().unwrap()[0], 1e-300);
        assert_eq!(h.warnings().len(), 1);
        assert_eq!(h.warnings()[0].name, "A");
        assert!((-2.0 * h.pvalues().unwrap()[0].ln()).is_finite());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_hypotheses("name,p\nA,0.1\nB,abc\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse_hypotheses("name,p\nA,0.1\nB,1.5\n".as_bytes()) {
            Err(Error::PValueRange { line, value }) => {
                assert_eq!(line, 3);
                assert_eq!(value, 1.5);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_hypotheses("name,p\nA,-0.1\n".as_bytes()),
            Err(Error::PValueRange { .. })
        ));
        assert!(matches!(
            parse_hypotheses("name,p\nA,0.1\nA,0.2\n".as_bytes()),
            Err(Error::DuplicateName(_))
        ));
        assert!(matches!(
            parse_hypotheses("label,p\nA,0.1\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(parse_hypotheses("name,p\nbad name,0.1\n".as_bytes()).is_err());
    }

    #[test]
    fn parses_zscores() {
        let h = parse_hypotheses("name,z\nA,1.5\nB,-0.2\nC,3\n".as_bytes()).unwrap();
        assert!(h.pvalues().is_none());
        assert_eq!(h.order_by_zscore().unwrap(), vec![2, 0, 1]);
    }

    #[test]
    fn colex_enumeration_of_pairs() {
        let r = set(3, &[1, 2, 3]);
        let got: Vec<IndexSet> = subsets_of_size(&r, 2).collect();
        assert_eq!(got, vec![set(3, &[1, 2]), set(3, &[1, 3]), set(3, &[2, 3])]);
    }

    #[test]
    fn size_zero_yields_empty_sentinel() {
        let r = set(3, &[2, 3]);
        let got: Vec<IndexSet> = subsets_of_size(&r, 0).collect();
        assert_eq!(got.len(), 1);
        assert!(got[0].is_empty());
        assert_eq!(subsets_of_size(&r, 3).count(), 0);
    }

    #[test]
    fn twelve_choose_six() {
        let r = IndexSet::full(12);
        assert_eq!(subsets_of_size(&r, 6).count(), 924);
    }

    #[test]
    fn wide_sets_cross_word_boundaries() {
        let mut s = IndexSet::empty(130);
        s.insert(0);
        s.insert(64);
        s.insert(129);
        assert_eq!(s.len(), 3);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 64, 129]);
        assert_eq!(s.complement().len(), 127);
        assert_eq!(IndexSet::full(130).len(), 130);
        assert!(s.to_mask().is_none());
        assert_eq!(format!("{s}"), "{1,65,130}");
    }

    fn binomial(n: u64, k: u64) -> u64 {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    fn arb_set(n: usize) -> impl Strategy<Value = IndexSet> {
        proptest::collection::vec(any::<bool>(), n).prop_map(move |bits| {
            IndexSet::from_indices(n, bits.iter().enumerate().filter(|b| *b.1).map(|b| b.0))
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn enumeration_is_exhaustive_and_distinct(r in arb_set(16), k in 0usize..17) {
            let all: Vec<IndexSet> = subsets_of_size(&r, k).collect();
            let expected = if k <= r.len() { binomial(r.len() as u64, k as u64) } else { 0 };
            prop_assert_eq!(all.len() as u64, expected);
            let distinct: std::collections::HashSet<_> = all.iter().cloned().collect();
            prop_assert_eq!(distinct.len(), all.len());
            for s in &all {
                prop_assert!(s.is_subset(&r));
                prop_assert_eq!(s.len(), k);
            }
            // colex order is increasing in the bit mask
            let masks: Vec<u64> = all.iter().map(|s| s.to_mask().unwrap()).collect();
            prop_assert!(masks.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn boolean_algebra_laws(a in arb_set(70), b in arb_set(70), c in arb_set(70)) {
            prop_assert_eq!(a.union(&b).complement(), a.complement().intersection(&b.complement()));
            prop_assert_eq!(a.intersection(&b).complement(), a.complement().union(&b.complement()));
            prop_assert_eq!(a.union(&b.intersection(&c)), a.union(&b).intersection(&a.union(&c)));
            prop_assert_eq!(a.complement().complement(), a.clone());
            prop_assert_eq!(a.len() + a.complement().len(), 70);
            prop_assert!(a.intersection(&b).is_subset(&a));
            prop_assert!(a.union(&b).is_superset(&b));
            prop_assert_eq!(a.difference(&b), a.intersection(&b.complement()));
        }
    }
}
