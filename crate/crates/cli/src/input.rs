use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use cherrypick::localtests::{parse_table, Dependence, RegressionData};
use cherrypick::permutation::{calibrate_critvals, parse_matrix, parse_names, Calibration, PermutationPValues};
use cherrypick::{parse_hypotheses, Error, HypothesisSet, LocalTest, Result, TestSpec};

use crate::TestChoice;

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str, test: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Invalid(format!("--test {test} needs {flag}")))
}

/// Everything needed to build the local test from files.
#[derive(Debug, Default)]
pub struct Sources {
    pub input: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub design: Option<PathBuf>,
    pub perm_matrix: Option<PathBuf>,
    pub perm_names: Option<PathBuf>,
}

impl Sources {
    fn hypotheses(&self) -> Result<HypothesisSet> {
        let path = self
            .input
            .as_deref()
            .ok_or_else(|| Error::Invalid("an input CSV is required".into()))?;
        with_path(path, parse_hypotheses(open(path)?))
    }

    pub fn local_test(&self, choice: TestChoice, alpha: f64) -> Result<LocalTest> {
        let (hyps, spec) = match choice {
            TestChoice::Fisher => (self.hypotheses()?, TestSpec::Fisher),
            TestChoice::Simes => (self.hypotheses()?, TestSpec::simes()),
            TestChoice::Hommel => (self.hypotheses()?, TestSpec::hommel()),
            TestChoice::NormalIndependent => (
                self.hypotheses()?,
                TestSpec::NormalSum {
                    dependence: Dependence::Independent,
                },
            ),
            TestChoice::NormalGeneral => (
                self.hypotheses()?,
                TestSpec::NormalSum {
                    dependence: Dependence::General,
                },
            ),
            TestChoice::Table => {
                let path = required(&self.table, "--table", "table")?;
                let rejected = with_path(path, parse_table(open(path)?))?;
                (self.hypotheses()?, TestSpec::Table { rejected })
            }
            TestChoice::Ftest => {
                let path = required(&self.design, "--design", "ftest")?;
                let (names, data) = with_path(path, RegressionData::parse_csv(open(path)?))?;
                let hyps = HypothesisSet::new(names, Some(data.marginal_pvalues()?), None)?;
                (hyps, TestSpec::RegressionF { data })
            }
            TestChoice::Permutation => {
                let perms = self.permutations()?;
                let hyps = match &self.input {
                    Some(_) => self.hypotheses()?,
                    None => {
                        let path = required(&self.perm_names, "--perm-names or an input CSV", "permutation")?;
                        let names = parse_names(open(path)?)?;
                        HypothesisSet::new(names, Some(perms.observed().to_vec()), None)?
                    }
                };
                if hyps.len() != perms.num_hypotheses() {
                    return Err(Error::Dimension(format!(
                        "{} hypotheses but {} permutation columns",
                        hyps.len(),
                        perms.num_hypotheses()
                    )));
                }
                let cal = calibrate_critvals(&perms, alpha)?;
                (hyps, TestSpec::constant(critical_values(&cal)))
            }
        };
        LocalTest::new(hyps, spec, alpha)
    }

    pub fn permutations(&self) -> Result<PermutationPValues> {
        let path = required(&self.perm_matrix, "--perm-matrix", "permutation")?;
        PermutationPValues::new(with_path(path, parse_matrix(open(path)?))?)
    }

    pub fn permutation_names(&self, n: usize) -> Result<Vec<String>> {
        match &self.perm_names {
            Some(path) => {
                let names = parse_names(open(path)?)?;
                if names.len() != n {
                    return Err(Error::Dimension(format!(
                        "{} names for {n} permutation columns",
                        names.len()
                    )));
                }
                Ok(names)
            }
            None => Ok((1..=n).map(|i| format!("H{i}")).collect()),
        }
    }
}

pub fn critical_values(cal: &Calibration) -> Vec<f64> {
    let n = cal.family.max_size();
    (1..=n).map(|i| cal.family.critical(i, n)).collect()
}
