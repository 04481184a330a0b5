use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use cherrypick::bounds::Analysis;
use cherrypick::closure::MAX_CLOSURE_N;
use cherrypick::report::{
    render_bound, render_curve, render_defining, render_estimate, ConfidenceReport, CurveReport,
    DefiningReport, EstimateReport, Format, SetSpec,
};
use cherrypick::shortcuts::{MethodChoice, MethodPolicy};
use cherrypick::{Error, HypothesisSet, IndexSet, LocalTest, Result, TestSpec};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisInput {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

fn default_alpha() -> f64 {
    0.05
}

/// Body of `POST /sessions`; also the payload of a snapshot file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRequest {
    pub hypotheses: Vec<HypothesisInput>,
    pub test: TestSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// `auto`, `closure` or `shortcut`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
}

fn column(hyps: &[HypothesisInput], pick: fn(&HypothesisInput) -> Option<f64>, what: &str) -> Result<Option<Vec<f64>>> {
    let values: Vec<Option<f64>> = hyps.iter().map(pick).collect();
    if values.iter().all(Option::is_none) {
        return Ok(None);
    }
    values
        .into_iter()
        .zip(hyps)
        .map(|(v, h)| v.ok_or_else(|| Error::Invalid(format!("hypothesis `{}` has no {what}", h.name))))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

impl SessionRequest {
    pub fn method_choice(&self) -> Result<MethodChoice> {
        self.method.as_deref().map_or(Ok(MethodChoice::Auto), str::parse)
    }

    pub fn local_test(&self) -> Result<LocalTest> {
        let names: Vec<String> = self.hypotheses.iter().map(|h| h.name.clone()).collect();
        let mut p = column(&self.hypotheses, |h| h.p, "p-value")?;
        let z = column(&self.hypotheses, |h| h.z, "z-score")?;
        if let (None, None, TestSpec::RegressionF { data }) = (&p, &z, &self.test) {
            p = Some(data.marginal_pvalues()?);
        }
        let hyps = HypothesisSet::new(names, p, z)?;
        LocalTest::new(hyps, self.test.clone(), self.alpha)
    }

    pub fn analysis(&self, base: MethodPolicy) -> Result<Analysis> {
        let policy = MethodPolicy {
            choice: self.method_choice()?,
            ..base
        };
        Ok(Analysis::new(self.local_test()?, policy))
    }
}

/// Snapshot file contents; the flattened request can be posted back to `/sessions`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: String,
    pub created_unix: u64,
    #[serde(flatten)]
    pub request: SessionRequest,
}

#[derive(Debug, Serialize)]
pub struct SessionSummary {
    pub id: String,
    pub n: usize,
    pub alpha: f64,
    pub test: String,
    pub method: String,
    pub created_unix: u64,
}

/// Immutable analysis state plus a memo of rendered responses.
#[derive(Debug)]
pub struct Session {
    id: String,
    created_unix: u64,
    request: SessionRequest,
    analysis: Analysis,
    memo: Mutex<HashMap<String, String>>,
}

impl Session {
    pub fn new(id: String, request: SessionRequest, base: MethodPolicy) -> Result<Self> {
        let analysis = request.analysis(base)?;
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Ok(Self {
            id,
            created_unix,
            request,
            analysis,
            memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn analysis(&self) -> &Analysis {
        &self.analysis
    }

    pub fn summary(&self) -> SessionSummary {
        let method = match self.analysis.policy().choice {
            MethodChoice::Auto => "auto",
            MethodChoice::Closure => "closure",
            MethodChoice::Shortcut => "shortcut",
        };
        SessionSummary {
            id: self.id.clone(),
            n: self.analysis.n(),
            alpha: self.analysis.alpha(),
            test: self.analysis.test().spec().label(),
            method: method.into(),
            created_unix: self.created_unix,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            id: self.id.clone(),
            created_unix: self.created_unix,
            request: self.request.clone(),
        }
    }

    fn memoized(&self, key: String, compute: impl FnOnce() -> Result<String, ApiError>) -> Result<String, ApiError> {
        if let Some(hit) = self.memo.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let body = compute()?;
        Ok(self.memo.lock().unwrap().entry(key).or_insert(body).clone())
    }

    #[cfg(test)]
    fn memo_len(&self) -> usize {
        self.memo.lock().unwrap().len()
    }

    fn resolve(&self, set: Option<&str>) -> Result<IndexSet, ApiError> {
        let set = set.ok_or_else(|| ApiError::bad_request("missing `set` query parameter"))?;
        Ok(set.parse::<SetSpec>()?.resolve(self.analysis.test())?)
    }

    fn set_key(kind: &str, set: &IndexSet) -> String {
        let members: Vec<String> = set.iter().map(|i| i.to_string()).collect();
        format!("{kind}:{}", members.join(","))
    }

    pub fn bound(&self, set: Option<&str>) -> Result<String, ApiError> {
        let set = self.resolve(set)?;
        self.memoized(Self::set_key("bound", &set), || {
            let cs = self.analysis.bound(&set)?;
            let test = self.analysis.test();
            let report = ConfidenceReport::new(test.hypotheses(), &test.spec().label(), &cs);
            Ok(render_bound(&report, Format::Json))
        })
    }

    pub fn estimate(&self, set: Option<&str>) -> Result<String, ApiError> {
        let set = self.resolve(set)?;
        self.memoized(Self::set_key("estimate", &set), || {
            let e = self.analysis.estimate(&set)?;
            let test = self.analysis.test();
            let report = EstimateReport::new(test.hypotheses(), &test.spec().label(), &e);
            Ok(render_estimate(&report, Format::Json))
        })
    }

    pub fn curve(&self) -> Result<String, ApiError> {
        self.memoized("curve".into(), || {
            let curve = self.analysis.curve()?;
            Ok(render_curve(&CurveReport::new(self.analysis.test(), &curve), Format::Json))
        })
    }

    pub fn defining(&self) -> Result<String, ApiError> {
        let n = self.analysis.n();
        if n > MAX_CLOSURE_N {
            return Err(ApiError::not_found(format!(
                "defining rejections need the full closure, limited to n <= {MAX_CLOSURE_N} (n = {n})"
            )));
        }
        self.memoized("defining".into(), || {
            let sets = self.analysis.defining()?;
            Ok(render_defining(&DefiningReport::new(self.analysis.test(), &sets), Format::Json))
        })
    }
}
