//! Observed dataset: instruments, covariates, exposure, outcome.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome distribution family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Family::Gaussian => write!(f, "gaussian"),
            Family::Binomial => write!(f, "binomial"),
        }
    }
}

/// A rectangular dataset with named instrument and covariate columns.
///
/// All values must be finite; for a binomial outcome every `y` must be
/// exactly 0 or 1. The covariate block may be empty.
#[derive(Clone, Debug)]
pub struct DataSet {
    pub instruments: DMatrix<f64>,
    pub covariates: DMatrix<f64>,
    pub exposure: DVector<f64>,
    pub outcome: DVector<f64>,
    pub family: Family,
    pub instrument_names: Vec<String>,
    pub covariate_names: Vec<String>,
    pub exposure_name: String,
    pub outcome_name: String,
}

impl DataSet {
    pub fn new(
        instruments: DMatrix<f64>,
        covariates: DMatrix<f64>,
        exposure: DVector<f64>,
        outcome: DVector<f64>,
        family: Family,
    ) -> Result<Self> {
        let instrument_names = (1..=instruments.ncols()).map(|j| format!("z{j}")).collect();
        let covariate_names = (1..=covariates.ncols()).map(|j| format!("c{j}")).collect();
        Self::with_names(
            instruments,
            covariates,
            exposure,
            outcome,
            family,
            instrument_names,
            covariate_names,
            "x".to_string(),
            "y".to_string(),
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_names(
        instruments: DMatrix<f64>,
        covariates: DMatrix<f64>,
        exposure: DVector<f64>,
        outcome: DVector<f64>,
        family: Family,
        instrument_names: Vec<String>,
        covariate_names: Vec<String>,
        exposure_name: String,
        outcome_name: String,
    ) -> Result<Self> {
        let n = exposure.len();
        if n == 0 {
            return Err(Error::Invalid("dataset has no rows".into()));
        }
        if instruments.ncols() == 0 {
            return Err(Error::Invalid("at least one instrument column is required".into()));
        }
        for (len, what) in [
            (instruments.nrows(), "instruments"),
            (covariates.nrows(), "covariates"),
            (outcome.len(), "outcome"),
        ] {
            if len != n && !(what == "covariates" && covariates.ncols() == 0) {
                return Err(Error::Invalid(format!(
                    "{what} has {len} rows but exposure has {n}"
                )));
            }
        }
        if instrument_names.len() != instruments.ncols()
            || covariate_names.len() != covariates.ncols()
        {
            return Err(Error::Invalid("column name count mismatch".into()));
        }
        for (mat, what) in [(&instruments, "instruments"), (&covariates, "covariates")] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(what.into()));
            }
        }
        if exposure.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("exposure".into()));
        }
        if outcome.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("outcome".into()));
        }
        if family == Family::Binomial && outcome.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Invalid(
                "binomial outcome must contain only 0 and 1".into(),
            ));
        }
        Ok(DataSet {
            instruments,
            covariates,
            exposure,
            outcome,
            family,
            instrument_names,
            covariate_names,
            exposure_name,
            outcome_name,
        })
    }

    pub fn n(&self) -> usize {
        self.exposure.len()
    }

    pub fn n_instruments(&self) -> usize {
        self.instruments.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    /// Number of distinct exposure values (exact comparison after sorting).
    pub fn distinct_exposures(&self) -> usize {
        let mut xs: Vec<f64> = self.exposure.iter().copied().collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.windows(2).filter(|w| w[0] != w[1]).count() + 1
    }
}
