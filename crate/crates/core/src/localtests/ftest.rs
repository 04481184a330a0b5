use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypotheses::{csv_error, IndexSet};
use crate::statfun::f_sf;

/// Residual sums of squares below this fraction of `y'y` count as an exact fit.
const EXACT_FIT_RATIO: f64 = 1e-20;
const RANK_TOL: f64 = 1e-10;

/// Linear model data: one response and `k` covariates. An intercept is
/// always included and never tested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionData {
    pub response: Vec<f64>,
    /// Covariates stored by column.
    pub covariates: Vec<Vec<f64>>,
}

impl RegressionData {
    pub fn new(response: Vec<f64>, covariates: Vec<Vec<f64>>) -> Result<Self> {
        let data = Self {
            response,
            covariates,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn observations(&self) -> usize {
        self.response.len()
    }

    pub fn num_covariates(&self) -> usize {
        self.covariates.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.response.len();
        let k = self.covariates.len();
        if k == 0 {
            return Err(Error::Dimension("at least one covariate is required".into()));
        }
        if let Some((j, _)) = self.covariates.iter().enumerate().find(|(_, c)| c.len() != n) {
            return Err(Error::Dimension(format!(
                "covariate {} has {} rows, response has {n}",
                j + 1,
                self.covariates[j].len()
            )));
        }
        if n <= k + 1 {
            return Err(Error::Dimension(format!(
                "need more than k + 1 = {} observations, got {n}",
                k + 1
            )));
        }
        let finite = self.response.iter().chain(self.covariates.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Invalid("regression data must be finite".into()));
        }
        Ok(())
    }

    /// Reads a CSV whose first column is the response and whose remaining
    /// columns are covariates; the header names the covariates.
    pub fn parse_csv<R: Read>(source: R) -> Result<(Vec<String>, Self)> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let header = reader.headers().map_err(|e| csv_error(&e))?.clone();
        if header.len() < 2 {
            return Err(Error::Parse {
                line: 1,
                message: "design header needs a response and at least one covariate".into(),
            });
        }
        let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut response = Vec::new();
        let mut covariates = vec![Vec::new(); names.len()];
        for rec in reader.records() {
            let rec = rec.map_err(|e| csv_error(&e))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let mut values = rec.iter().map(|v| {
                v.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("`{v}` is not a number"),
                })
            });
            response.push(values.next().transpose()?.unwrap_or(f64::NAN));
            for col in covariates.iter_mut() {
                col.push(values.next().transpose()?.unwrap_or(f64::NAN));
            }
        }
        Ok((names, Self::new(response, covariates)?))
    }

    /// Individual p-values for `β_j = 0`, one per covariate.
    pub fn marginal_pvalues(&self) -> Result<Vec<f64>> {
        let model = RegressionModel::new(self)?;
        (0..self.num_covariates())
            .map(|j| model.pvalue(&[j]))
            .collect()
    }
}

/// Prepared regression: design with intercept and the full-model fit.
#[derive(Debug, Clone)]
pub struct RegressionModel {
    design: DMatrix<f64>,
    response: DVector<f64>,
    rss_full: f64,
    resid_df: usize,
    exact_fit: bool,
}

impl RegressionModel {
    pub fn new(data: &RegressionData) -> Result<Self> {
        data.validate()?;
        let n = data.observations();
        let k = data.num_covariates();
        let design = DMatrix::from_fn(n, k + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                data.covariates[j - 1][i]
            }
        });
        let response = DVector::from_column_slice(&data.response);
        let rss_full = residual_ss(&design, &response, true)?;
        let scale = response.norm_squared().max(f64::MIN_POSITIVE);
        Ok(Self {
            exact_fit: rss_full <= EXACT_FIT_RATIO * scale,
            design,
            response,
            rss_full,
            resid_df: n - k - 1,
        })
    }

    pub fn num_covariates(&self) -> usize {
        self.design.ncols() - 1
    }

    /// F-test p-value of `β_j = 0` for all `j` in `tested` (0-based covariates).
    pub fn pvalue(&self, tested: &[usize]) -> Result<f64> {
        let k = self.num_covariates();
        if tested.is_empty() {
            return Err(Error::Invalid("the tested coefficient set is empty".into()));
        }
        if let Some(j) = tested.iter().find(|&&j| j >= k) {
            return Err(Error::Dimension(format!("coefficient {} out of range", j + 1)));
        }
        if self.exact_fit {
            // no residual variance to compare against
            return Ok(1.0);
        }
        let keep: Vec<usize> = std::iter::once(0)
            .chain((1..=k).filter(|c| !tested.contains(&(c - 1))))
            .collect();
        let reduced = self.design.select_columns(keep.iter());
        let rss_null = residual_ss(&reduced, &self.response, false)?;
        let q = tested.len();
        let numerator = (rss_null - self.rss_full).max(0.0) / q as f64;
        let denom = self.rss_full / self.resid_df as f64;
        let f = numerator / denom;
        f_sf(f, q, self.resid_df)
    }
}

/// Residual sum of squares of the least-squares fit via Householder QR.
fn residual_ss(x: &DMatrix<f64>, y: &DVector<f64>, check_rank: bool) -> Result<f64> {
    let qr = x.clone().qr();
    if check_rank {
        let r = qr.r();
        let diag: Vec<f64> = (0..r.ncols()).map(|i| r[(i, i)].abs()).collect();
        let largest = diag.iter().cloned().fold(0.0, f64::max);
        if largest == 0.0 || diag.iter().any(|&d| d <= RANK_TOL * largest) {
            return Err(Error::RankDeficient);
        }
    }
    let q = qr.q();
    let fitted = &q * (q.transpose() * y);
    Ok((y - fitted).norm_squared())
}

pub fn ftest_pvalue(data: &RegressionData, tested: &IndexSet) -> Result<f64> {
    if tested.universe() != data.num_covariates() {
        return Err(Error::Dimension(format!(
            "index set over {} covariates, model has {}",
            tested.universe(),
            data.num_covariates()
        )));
    }
    let members: Vec<usize> = tested.iter().collect();
    RegressionModel::new(data)?.pvalue(&members)
}

/// F-test of the model without the `tested` coefficients against the full model.
pub fn ftest_reject(data: &RegressionData, tested: &IndexSet, alpha: f64) -> Result<bool> {
    Ok(ftest_pvalue(data, tested)? <= alpha)
}
