//! Declarative TOML configuration for the command-line tool.
//!
//! A config file has a mandatory `schema_version` plus up to four sections:
//! `[data]` (CSV source and column mapping), `[model]` (estimator choice and
//! knobs), `[simulate]` (Monte Carlo grid), and `[output]` (artifact paths).
//! `fit` and `curve` need `[data]` + `[model]`; `simulate` needs
//! `[simulate]`. Validation reports the offending field path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::KnotRule;
use crate::data::Family;
use crate::error::{Error, Result};
use crate::estimators::ModelSpec;
use crate::simkit::{CausalForm, Pleiotropy, Scenario};
use crate::spmr::{LambdaChoice, SpmrOptions};
use crate::transform::Transform;

/// The one schema version this build understands.
pub const SCHEMA_VERSION: u32 = 1;

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::ConfigInvalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Estimator selected by `model.method` / `simulate.method`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodId {
    TwoStagePrediction,
    ControlFunction,
    Spmr,
}

impl MethodId {
    pub fn as_str(&self) -> &'static str {
        match self {
            MethodId::TwoStagePrediction => "two_stage_prediction",
            MethodId::ControlFunction => "control_function",
            MethodId::Spmr => "spmr",
        }
    }
}

/// `model.lambda`: either the literal string `"select"` or a fixed value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaConfig {
    Fixed(f64),
    Named(String),
}

impl Default for LambdaConfig {
    fn default() -> Self {
        LambdaConfig::Named("select".to_string())
    }
}

impl LambdaConfig {
    fn to_choice(&self, field: &str) -> Result<LambdaChoice> {
        match self {
            LambdaConfig::Fixed(v) if v.is_finite() && *v >= 0.0 => Ok(LambdaChoice::Fixed(*v)),
            LambdaConfig::Fixed(v) => Err(invalid(
                field,
                format!("fixed lambda must be finite and non-negative, got {v}"),
            )),
            LambdaConfig::Named(s) if s == "select" => Ok(LambdaChoice::Select),
            LambdaConfig::Named(s) => Err(invalid(
                field,
                format!("expected a number or the string \"select\", got \"{s}\""),
            )),
        }
    }
}

/// `[data]`: CSV path and column mapping.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub file: PathBuf,
    pub instruments: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
    pub exposure: String,
    pub outcome: String,
    #[serde(default = "default_family")]
    pub family: Family,
}

fn default_family() -> Family {
    Family::Gaussian
}

impl DataConfig {
    fn validate(&self) -> Result<()> {
        if self.instruments.is_empty() {
            return Err(invalid("data.instruments", "at least one instrument column is required"));
        }
        let mut seen: Vec<&str> = Vec::new();
        let all = self
            .instruments
            .iter()
            .chain(self.covariates.iter())
            .chain(std::iter::once(&self.exposure))
            .chain(std::iter::once(&self.outcome));
        for name in all {
            if name.is_empty() {
                return Err(invalid("data", "column names must be non-empty"));
            }
            if seen.contains(&name.as_str()) {
                return Err(invalid("data", format!("column `{name}` is mapped more than once")));
            }
            seen.push(name);
        }
        Ok(())
    }
}

/// `[model]`: estimator id plus parametric terms and smoothing knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_method")]
    pub method: MethodId,
    /// Exposure transforms for the parametric estimators.
    #[serde(default = "default_terms")]
    pub f: Vec<String>,
    /// Covariate transforms, applied to every covariate column.
    #[serde(default = "default_terms")]
    pub g: Vec<String>,
    /// Residual transform entering the second stage (control function only).
    #[serde(default = "default_identity")]
    pub h: String,
    /// Add the instrument columns to the second stage.
    #[serde(default)]
    pub adjust_pleiotropy: bool,
    // Smoothing knobs (method = "spmr").
    #[serde(default = "default_num_basis")]
    pub num_basis: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_knot_rule")]
    pub knot_rule: KnotRule,
    #[serde(default = "default_penalty_order")]
    pub penalty_order: usize,
    #[serde(default)]
    pub lambda: LambdaConfig,
    #[serde(default)]
    pub smooth_covariates: bool,
    #[serde(default)]
    pub smooth_residual: bool,
    /// Rank of the no-effect test; defaults to the smooth's effective
    /// degrees of freedom.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_rank: Option<f64>,
}

fn default_method() -> MethodId {
    MethodId::ControlFunction
}

fn default_terms() -> Vec<String> {
    vec!["identity".to_string()]
}

fn default_identity() -> String {
    "identity".to_string()
}

fn default_num_basis() -> usize {
    10
}

fn default_degree() -> usize {
    3
}

fn default_knot_rule() -> KnotRule {
    KnotRule::Quantile
}

fn default_penalty_order() -> usize {
    2
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            method: default_method(),
            f: default_terms(),
            g: default_terms(),
            h: default_identity(),
            adjust_pleiotropy: false,
            num_basis: default_num_basis(),
            degree: default_degree(),
            knot_rule: default_knot_rule(),
            penalty_order: default_penalty_order(),
            lambda: LambdaConfig::default(),
            smooth_covariates: false,
            smooth_residual: false,
            test_rank: None,
        }
    }
}

fn resolve_terms(names: &[String], field: &str) -> Result<Vec<Transform>> {
    names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            Transform::by_name(name)
                .map_err(|_| invalid(&format!("{field}[{i}]"), format!("unknown transform `{name}`")))
        })
        .collect()
}

impl ModelConfig {
    fn validate(&self) -> Result<()> {
        match self.method {
            MethodId::Spmr => {
                // Build and pre-validate the smoothing options so problems
                // surface as config errors with a field path.
                self.to_spmr_options()?;
                if let Some(r) = self.test_rank {
                    if !r.is_finite() || r < 1.0 {
                        return Err(invalid("model.test_rank", format!("must be >= 1, got {r}")));
                    }
                }
            }
            MethodId::TwoStagePrediction | MethodId::ControlFunction => {
                if self.f.is_empty() {
                    return Err(invalid("model.f", "at least one exposure transform is required"));
                }
                resolve_terms(&self.f, "model.f")?;
                resolve_terms(&self.g, "model.g")?;
                Transform::by_name(&self.h)
                    .map_err(|_| invalid("model.h", format!("unknown transform `{}`", self.h)))?;
            }
        }
        Ok(())
    }

    /// Parametric model spec for the given outcome family.
    pub fn to_model_spec(&self, family: Family) -> Result<ModelSpec> {
        let f_terms = resolve_terms(&self.f, "model.f")?;
        let g_terms = resolve_terms(&self.g, "model.g")?;
        let h_form = Transform::by_name(&self.h)
            .map_err(|_| invalid("model.h", format!("unknown transform `{}`", self.h)))?;
        Ok(ModelSpec {
            f_terms,
            g_terms,
            h_form,
            include_iv_stage2: self.adjust_pleiotropy,
            family,
        })
    }

    /// Smoothing options for `method = "spmr"`, pre-validated.
    pub fn to_spmr_options(&self) -> Result<SpmrOptions> {
        let options = SpmrOptions {
            num_basis: self.num_basis,
            degree: self.degree,
            knot_rule: self.knot_rule,
            penalty_order: self.penalty_order,
            lambda: self.lambda.to_choice("model.lambda")?,
            smooth_covariates: self.smooth_covariates,
            smooth_residual: self.smooth_residual,
        };
        options
            .validate()
            .map_err(|e| invalid("model", e.to_string()))?;
        Ok(options)
    }
}

/// `[simulate]`: Monte Carlo grid axes and per-replicate estimator.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub causal: Vec<CausalForm>,
    pub n: Vec<usize>,
    pub pve: Vec<f64>,
    #[serde(default = "default_pleiotropy")]
    pub pleiotropy: Vec<Pleiotropy>,
    #[serde(default = "default_identity")]
    pub h: String,
    #[serde(default = "default_family")]
    pub family: Family,
    #[serde(default = "default_one")]
    pub exposure_intercept: f64,
    #[serde(default = "default_one")]
    pub beta_zu: f64,
    #[serde(default = "default_one")]
    pub beta_zy: f64,
    pub replicates: usize,
    #[serde(default = "default_method")]
    pub method: MethodId,
}

fn default_pleiotropy() -> Vec<Pleiotropy> {
    vec![Pleiotropy::None]
}

fn default_one() -> f64 {
    1.0
}

impl SimulateConfig {
    fn validate(&self) -> Result<()> {
        if self.causal.is_empty() {
            return Err(invalid("simulate.causal", "at least one causal form is required"));
        }
        if self.n.is_empty() {
            return Err(invalid("simulate.n", "at least one sample size is required"));
        }
        for (i, &n) in self.n.iter().enumerate() {
            if n < 10 {
                return Err(invalid(&format!("simulate.n[{i}]"), format!("sample size {n} is too small")));
            }
        }
        if self.pve.is_empty() {
            return Err(invalid("simulate.pve", "at least one instrument strength is required"));
        }
        for (i, &pve) in self.pve.iter().enumerate() {
            if !(pve > 0.0 && pve < 1.0) {
                return Err(invalid(
                    &format!("simulate.pve[{i}]"),
                    format!("pve must lie strictly in (0, 1), got {pve}"),
                ));
            }
        }
        if self.pleiotropy.is_empty() {
            return Err(invalid("simulate.pleiotropy", "at least one pleiotropy setting is required"));
        }
        if self.replicates == 0 {
            return Err(invalid("simulate.replicates", "at least one replicate is required"));
        }
        Transform::by_name(&self.h)
            .map_err(|_| invalid("simulate.h", format!("unknown transform `{}`", self.h)))?;
        for (i, &v) in [self.exposure_intercept, self.beta_zu, self.beta_zy].iter().enumerate() {
            if !v.is_finite() {
                let field = ["simulate.exposure_intercept", "simulate.beta_zu", "simulate.beta_zy"][i];
                return Err(invalid(field, "must be finite"));
            }
        }
        if self.method == MethodId::TwoStagePrediction && self.family == Family::Binomial {
            return Err(invalid(
                "simulate.method",
                "two_stage_prediction requires a gaussian outcome",
            ));
        }
        Ok(())
    }

    /// The grid cells in row order: causal (outer), then pve, then n, then
    /// pleiotropy (inner).
    pub fn grid(&self) -> Result<Vec<Scenario>> {
        let h = Transform::by_name(&self.h)
            .map_err(|_| invalid("simulate.h", format!("unknown transform `{}`", self.h)))?;
        let mut cells = Vec::new();
        for &causal in &self.causal {
            for &pve in &self.pve {
                for &n in &self.n {
                    for &pl in &self.pleiotropy {
                        let mut scenario = Scenario::new(causal, n, pve)
                            .with_pleiotropy(pl)
                            .with_h(h.clone())
                            .with_family(self.family)
                            .with_exposure_intercept(self.exposure_intercept);
                        scenario.beta_zu = self.beta_zu;
                        scenario.beta_zy = self.beta_zy;
                        cells.push(scenario);
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// `[output]`: artifact directory and file names.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_report")]
    pub report: String,
    #[serde(default = "default_curve")]
    pub curve: String,
    #[serde(default = "default_summary")]
    pub summary: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from(".")
}

fn default_report() -> String {
    "report.json".to_string()
}

fn default_curve() -> String {
    "curve.csv".to_string()
}

fn default_summary() -> String {
    "summary.csv".to_string()
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_dir(),
            report: default_report(),
            curve: default_curve(),
            summary: default_summary(),
        }
    }
}

/// A parsed and validated configuration file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub schema_version: u32,
    /// Base seed; overridable from the command line. Defaults to 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl AnalysisConfig {
    /// Parse a TOML file and validate every present section.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: AnalysisConfig = toml::from_str(&text)
            .map_err(|e| invalid("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if let Some(data) = &self.data {
            data.validate()?;
        }
        if let Some(model) = &self.model {
            model.validate()?;
            if let (Some(data), MethodId::Spmr) = (&self.data, model.method) {
                if data.family == Family::Binomial && model.smooth_residual {
                    return Err(invalid(
                        "model.smooth_residual",
                        "smooth residual blocks require a gaussian outcome",
                    ));
                }
            }
        }
        if let Some(simulate) = &self.simulate {
            simulate.validate()?;
        }
        Ok(())
    }

    /// Effective base seed after an optional command-line override.
    pub fn effective_seed(&self, cli_seed: Option<u64>) -> u64 {
        cli_seed.or(self.seed).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_fit_config_parses_with_defaults() {
        let f = write_temp(
            r#"
schema_version = 1

[data]
file = "d.csv"
instruments = ["z"]
exposure = "x"
outcome = "y"

[model]
method = "control_function"
f = ["quad3"]
"#,
        );
        let cfg = AnalysisConfig::from_path(f.path()).unwrap();
        let data = cfg.data.as_ref().unwrap();
        assert_eq!(data.family, Family::Gaussian);
        assert!(data.covariates.is_empty());
        let model = cfg.model.as_ref().unwrap();
        assert_eq!(model.method, MethodId::ControlFunction);
        assert_eq!(model.g, vec!["identity"]);
        assert_eq!(model.num_basis, 10);
        assert_eq!(cfg.effective_seed(None), 0);
        assert_eq!(cfg.effective_seed(Some(7)), 7);
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let f = write_temp("schema_version = 2\n");
        let err = AnalysisConfig::from_path(f.path()).unwrap_err();
        match err {
            Error::ConfigInvalid { field, .. } => assert_eq!(field, "schema_version"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = write_temp("schema_version = 1\nbogus = true\n");
        let err = AnalysisConfig::from_path(f.path()).unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid { .. }), "{err}");
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn unknown_transform_reports_field_path() {
        let f = write_temp(
            r#"
schema_version = 1

[data]
file = "d.csv"
instruments = ["z"]
exposure = "x"
outcome = "y"

[model]
f = ["cubic-nope"]
"#,
        );
        let err = AnalysisConfig::from_path(f.path()).unwrap_err();
        match err {
            Error::ConfigInvalid { field, reason } => {
                assert_eq!(field, "model.f[0]");
                assert!(reason.contains("cubic-nope"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn lambda_accepts_number_or_select() {
        let base = r#"
schema_version = 1

[data]
file = "d.csv"
instruments = ["z"]
exposure = "x"
outcome = "y"

[model]
method = "spmr"
"#;
        let f = write_temp(&format!("{base}lambda = 0.5\n"));
        let cfg = AnalysisConfig::from_path(f.path()).unwrap();
        let opts = cfg.model.unwrap().to_spmr_options().unwrap();
        assert_eq!(opts.lambda, LambdaChoice::Fixed(0.5));

        let f = write_temp(&format!("{base}lambda = \"select\"\n"));
        let cfg = AnalysisConfig::from_path(f.path()).unwrap();
        let opts = cfg.model.unwrap().to_spmr_options().unwrap();
        assert_eq!(opts.lambda, LambdaChoice::Select);

        let f = write_temp(&format!("{base}lambda = \"auto\"\n"));
        let err = AnalysisConfig::from_path(f.path()).unwrap_err();
        match err {
            Error::ConfigInvalid { field, .. } => assert_eq!(field, "model.lambda"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn duplicate_column_mapping_is_rejected() {
        let f = write_temp(
            r#"
schema_version = 1

[data]
file = "d.csv"
instruments = ["z"]
covariates = ["z"]
exposure = "x"
outcome = "y"
"#,
        );
        let err = AnalysisConfig::from_path(f.path()).unwrap_err();
        assert!(err.to_string().contains("mapped more than once"), "{err}");
    }

    #[test]
    fn simulate_grid_order_is_causal_pve_n_pleiotropy() {
        let f = write_temp(
            r#"
schema_version = 1

[simulate]
causal = ["quad3", "sin"]
n = [100, 200]
pve = [0.01]
replicates = 10
"#,
        );
        let cfg = AnalysisConfig::from_path(f.path()).unwrap();
        let grid = cfg.simulate.as_ref().unwrap().grid().unwrap();
        assert_eq!(grid.len(), 4);
        assert_eq!(grid[0].causal, CausalForm::Quad3);
        assert_eq!(grid[0].n, 100);
        assert_eq!(grid[1].causal, CausalForm::Quad3);
        assert_eq!(grid[1].n, 200);
        assert_eq!(grid[2].causal, CausalForm::Sin);
        assert_eq!(grid[3].causal, CausalForm::Sin);
    }

    #[test]
    fn simulate_rejects_binomial_two_stage() {
        let f = write_temp(
            r#"
schema_version = 1

[simulate]
causal = ["sin"]
n = [100]
pve = [0.1]
replicates = 10
family = "binomial"
method = "two_stage_prediction"
"#,
        );
        let err = AnalysisConfig::from_path(f.path()).unwrap_err();
        match err {
            Error::ConfigInvalid { field, .. } => assert_eq!(field, "simulate.method"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn invalid_pve_reports_index() {
        let f = write_temp(
            r#"
schema_version = 1

[simulate]
causal = ["sin"]
n = [100]
pve = [0.1, 1.5]
replicates = 10
"#,
        );
        let err = AnalysisConfig::from_path(f.path()).unwrap_err();
        match err {
            Error::ConfigInvalid { field, .. } => assert_eq!(field, "simulate.pve[1]"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let f = write_temp(
            r#"
schema_version = 1
seed = 42

[data]
file = "d.csv"
instruments = ["z1", "z2"]
covariates = ["c"]
exposure = "x"
outcome = "y"
family = "binomial"

[model]
method = "spmr"
num_basis = 12
lambda = 2.5

[output]
dir = "out"
"#,
        );
        let cfg = AnalysisConfig::from_path(f.path()).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: AnalysisConfig = toml::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.seed, Some(42));
        assert_eq!(back.data.as_ref().unwrap().instruments, vec!["z1", "z2"]);
        assert_eq!(back.model.as_ref().unwrap().num_basis, 12);
        assert_eq!(back.model.as_ref().unwrap().lambda, LambdaConfig::Fixed(2.5));
        assert_eq!(back.output.dir, PathBuf::from("out"));
    }
}
