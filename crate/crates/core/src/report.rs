//! Set selectors and the JSON / TSV output shared by the CLI and the service.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bounds::{ConfidenceSet, Estimate};
use crate::error::{Error, Result};
use crate::hypotheses::{HypothesisSet, IndexSet};
use crate::localtests::LocalTest;
use crate::shortcuts::{kfwer_frontier, FdpCurve};

/// How a user names a set of hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub enum SetSpec {
    Names(Vec<String>),
    /// The `K` most significant hypotheses.
    Top(usize),
    /// Every hypothesis with `p <= Q`.
    PMax(f64),
    All,
}

impl FromStr for SetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Invalid("the set is empty".into()));
        }
        if s == "all" {
            return Ok(SetSpec::All);
        }
        if let Some(k) = s.strip_prefix("top:") {
            let k: usize = k
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("`{s}`: top:K needs a positive integer")))?;
            if k == 0 {
                return Err(Error::Invalid("top:0 selects an empty set".into()));
            }
            return Ok(SetSpec::Top(k));
        }
        if let Some(q) = s.strip_prefix("pmax:") {
            let q: f64 = q
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("`{s}`: pmax:Q needs a number")))?;
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Invalid(format!("pmax threshold {q} is outside [0, 1]")));
            }
            return Ok(SetSpec::PMax(q));
        }
        let names: Vec<String> = s.split(',').map(|n| n.trim().to_string()).collect();
        if names.iter().any(String::is_empty) {
            return Err(Error::Invalid(format!("`{s}` contains an empty name")));
        }
        Ok(SetSpec::Names(names))
    }
}

impl SetSpec {
    /// Resolves against the test's hypotheses; an empty result is an error.
    pub fn resolve(&self, test: &LocalTest) -> Result<IndexSet> {
        let hyps = test.hypotheses();
        let n = hyps.len();
        let set = match self {
            SetSpec::All => IndexSet::full(n),
            SetSpec::Top(k) => {
                if *k > n {
                    return Err(Error::Invalid(format!("top:{k} exceeds the {n} hypotheses")));
                }
                IndexSet::from_indices(n, test.significance_order()[..*k].iter().copied())?
            }
            SetSpec::PMax(q) => {
                let ps = hyps
                    .pvalues()
                    .ok_or_else(|| Error::Invalid("pmax:Q needs p-values".into()))?;
                IndexSet::from_indices(n, (0..n).filter(|&i| ps[i] <= *q))?
            }
            SetSpec::Names(names) => {
                let mut set = IndexSet::empty(n);
                for name in names {
                    let i = hyps
                        .index_of(name)
                        .ok_or_else(|| Error::UnknownName(name.clone()))?;
                    set.insert(i);
                }
                set
            }
        };
        if set.is_empty() {
            return Err(Error::Invalid("the selected set is empty".into()));
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Json,
    Tsv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "tsv" => Ok(Format::Tsv),
            other => Err(Error::Invalid(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: usize,
    pub upper: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fraction {
    pub numerator: usize,
    pub denominator: usize,
    /// Four-decimal rendering.
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub set: Vec<String>,
    pub size: usize,
    pub alpha: f64,
    pub test: String,
    pub t_upper: usize,
    pub f_lower: usize,
    pub tau_set: Interval,
    pub phi_set: Interval,
    pub fdp_upper: Fraction,
    pub provenance: String,
    pub method: String,
}

impl ConfidenceReport {
    pub fn new(hyps: &HypothesisSet, test_label: &str, cs: &ConfidenceSet) -> Self {
        let (num, den) = cs.fdp_upper();
        Self {
            set: hyps.names_of(&cs.set),
            size: cs.size(),
            alpha: cs.alpha,
            test: test_label.to_string(),
            t_upper: cs.t_upper,
            f_lower: cs.f_lower,
            tau_set: Interval { lower: 0, upper: cs.t_upper },
            phi_set: Interval {
                lower: cs.f_lower,
                upper: cs.size(),
            },
            fdp_upper: Fraction {
                numerator: num,
                denominator: den,
                value: format!("{:.4}", cs.fdp_upper_value()),
            },
            provenance: cs.provenance().as_str().into(),
            method: cs.method.as_str().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub r: usize,
    pub f_lower: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KfweRow {
    pub k: usize,
    pub max_rejections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub alpha: f64,
    pub test: String,
    pub provenance: String,
    pub method: String,
    /// Hypotheses from most to least significant.
    pub order: Vec<String>,
    pub points: Vec<CurvePoint>,
    pub kfwer: Vec<KfweRow>,
}

impl CurveReport {
    pub fn new(test: &LocalTest, curve: &FdpCurve) -> Self {
        let names = test.hypotheses().names();
        let n = curve.len();
        Self {
            alpha: curve.alpha,
            test: test.spec().label(),
            provenance: curve.method.provenance().as_str().into(),
            method: curve.method.as_str().into(),
            order: test.significance_order().iter().map(|&i| names[i].clone()).collect(),
            points: curve.points().map(|(r, f_lower)| CurvePoint { r, f_lower }).collect(),
            kfwer: kfwer_frontier(curve, n.min(KFWER_ROWS))
                .into_iter()
                .map(|(k, max_rejections)| KfweRow { k, max_rejections })
                .collect(),
        }
    }
}

/// k-FWER rows included in curve reports.
const KFWER_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefiningReport {
    pub alpha: f64,
    pub test: String,
    pub defining: Vec<Vec<String>>,
}

impl DefiningReport {
    pub fn new(test: &LocalTest, sets: &[IndexSet]) -> Self {
        Self {
            alpha: test.alpha(),
            test: test.spec().label(),
            defining: sets.iter().map(|s| test.hypotheses().names_of(s)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub set: Vec<String>,
    pub size: usize,
    /// `t_{1/2}(R)`, below the true number of false rejections with probability at most 1/2.
    pub estimate: usize,
    pub estimate_provenance: String,
    pub estimate_method: String,
    pub interval: ConfidenceReport,
    pub caution: String,
}

impl EstimateReport {
    pub fn new(hyps: &HypothesisSet, test_label: &str, e: &Estimate) -> Self {
        let interval = ConfidenceReport::new(hyps, test_label, &e.interval);
        Self {
            set: interval.set.clone(),
            size: interval.size,
            estimate: e.estimate,
            estimate_provenance: e.estimate_method.provenance().as_str().into(),
            estimate_method: e.estimate_method.as_str().into(),
            caution: format!(
                "point estimate at level 1/2; read it with the {:.0}% interval",
                (1.0 - interval.alpha) * 100.0
            ),
            interval,
        }
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

pub fn render_bound(report: &ConfidenceReport, format: Format) -> String {
    match format {
        Format::Json => json(report),
        Format::Tsv => {
            let mut s = String::from(
                "set\tsize\talpha\tt_upper\tf_lower\ttau_set\tphi_set\tfdp_upper\tprovenance\tmethod\n",
            );
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}..{}\t{}..{}\t{}\t{}\t{}",
                report.set.join(","),
                report.size,
                report.alpha,
                report.t_upper,
                report.f_lower,
                report.tau_set.lower,
                report.tau_set.upper,
                report.phi_set.lower,
                report.phi_set.upper,
                report.fdp_upper.value,
                report.provenance,
                report.method
            );
            s
        }
    }
}

pub fn render_curve(report: &CurveReport, format: Format) -> String {
    match format {
        Format::Json => json(report),
        Format::Tsv => {
            let mut s = String::from("r\tf_lower\n");
            for p in &report.points {
                let _ = writeln!(s, "{}\t{}", p.r, p.f_lower);
            }
            s
        }
    }
}

pub fn render_defining(report: &DefiningReport, format: Format) -> String {
    match format {
        Format::Json => json(report),
        Format::Tsv => {
            let mut s = String::from("size\tset\n");
            for d in &report.defining {
                let _ = writeln!(s, "{}\t{}", d.len(), d.join(","));
            }
            s
        }
    }
}

pub fn render_estimate(report: &EstimateReport, format: Format) -> String {
    match format {
        Format::Json => json(report),
        Format::Tsv => {
            let i = &report.interval;
            let mut s = String::from("set\tsize\testimate\talpha\ttau_set\tphi_set\tprovenance\n");
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}..{}\t{}..{}\t{}",
                report.set.join(","),
                report.size,
                report.estimate,
                i.alpha,
                i.tau_set.lower,
                i.tau_set.upper,
                i.phi_set.lower,
                i.phi_set.upper,
                i.provenance
            );
            s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localtests::TestSpec;
    use crate::shortcuts::Method;

    fn adverse() -> LocalTest {
        let h = crate::hypotheses::parse_hypotheses(crate::testdata::ADVERSE_EVENTS.as_bytes()).unwrap();
        LocalTest::new(h, TestSpec::Fisher, 0.05).unwrap()
    }

    #[test]
    fn set_specs() {
        let t = adverse();
        let by_name: SetSpec = "Anemia,Myocardial-infarct,Diarrhea".parse().unwrap();
        let top3: SetSpec = "top:3".parse().unwrap();
        assert_eq!(by_name.resolve(&t).unwrap(), top3.resolve(&t).unwrap());
        let pmax: SetSpec = "pmax:0.04".parse().unwrap();
        assert_eq!(pmax.resolve(&t).unwrap().len(), 4);
        assert_eq!("all".parse::<SetSpec>().unwrap().resolve(&t).unwrap().len(), 16);
        assert!("".parse::<SetSpec>().is_err());
        assert!("top:0".parse::<SetSpec>().is_err());
        assert!("A,,B".parse::<SetSpec>().is_err());
        assert!("pmax:0.001".parse::<SetSpec>().unwrap().resolve(&t).is_err());
        assert!(matches!(
            "Nope".parse::<SetSpec>().unwrap().resolve(&t),
            Err(Error::UnknownName(_))
        ));
        assert!("top:17".parse::<SetSpec>().unwrap().resolve(&t).is_err());
    }

    #[test]
    fn bound_report_round_trips() {
        let t = adverse();
        let set = IndexSet::from_indices(16, [2, 3, 4]).unwrap();
        let cs = ConfidenceSet::new(set, 0.05, 2, Method::Closure);
        let r = ConfidenceReport::new(t.hypotheses(), "fisher", &cs);
        assert_eq!(r.fdp_upper.value, "0.6667");
        let text = render_bound(&r, Format::Json);
        let back: ConfidenceReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        let tsv = render_bound(&r, Format::Tsv);
        assert!(tsv.ends_with("Diarrhea,Nausea-and-vomiting,Stomatitis\t3\t0.05\t2\t1\t0..2\t1..3\t0.6667\texact\tclosure\n"));
    }

    #[test]
    fn curve_tsv() {
        let t = adverse();
        let curve = FdpCurve::from_bounds(0.05, "fisher".into(), Method::Closure, vec![0, 1, 2]);
        let short = LocalTest::new(
            t.hypotheses().restrict(&IndexSet::from_indices(16, 0..3).unwrap()).unwrap(),
            TestSpec::Fisher,
            0.05,
        )
        .unwrap();
        let r = CurveReport::new(&short, &curve);
        assert_eq!(render_curve(&r, Format::Tsv), "r\tf_lower\n1\t0\n2\t1\n3\t2\n");
        let back: CurveReport = serde_json::from_str(&render_curve(&r, Format::Json)).unwrap();
        assert_eq!(back, r);
    }
}
