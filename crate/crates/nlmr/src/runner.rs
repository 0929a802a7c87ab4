//! Command dispatch: load a config, run `fit`, `simulate`, or `curve`, and
//! write the JSON report plus any CSV artifacts.
//!
//! Runs are deterministic: the same config and seed produce byte-identical
//! reports and artifacts, except for the report's `timing` block.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{AnalysisConfig, DataConfig, MethodId, ModelConfig};
use crate::data::Family;
use crate::error::{Error, Result};
use crate::estimators::{
    fit_control_function, fit_control_function_binary, fit_two_stage_prediction, FitResult,
};
use crate::io::{
    self, Coefficient, FitReport, RunReport, SpmrReport, SummaryRow, TimingReport,
};
use crate::inference::{TailMethod, TestResult};
use crate::simkit::{run_mc, McMethod};
use crate::spmr::{causal_curve, fit_spmr, spmr_test, SpmrFit};

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::ConfigInvalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Evaluation grid `lo:hi:steps` for the `curve` command.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl GridSpec {
    /// Parse `"lo:hi:steps"`, requiring `lo < hi` and at least two steps.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |reason: String| invalid("--grid", reason);
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad(format!("expected lo:hi:steps, got `{text}`")));
        }
        let lo: f64 = parts[0]
            .parse()
            .map_err(|_| bad(format!("`{}` is not a number", parts[0])))?;
        let hi: f64 = parts[1]
            .parse()
            .map_err(|_| bad(format!("`{}` is not a number", parts[1])))?;
        let steps: usize = parts[2]
            .parse()
            .map_err(|_| bad(format!("`{}` is not a positive integer", parts[2])))?;
        if !lo.is_finite() || !hi.is_finite() {
            return Err(bad("grid endpoints must be finite".to_string()));
        }
        if lo >= hi {
            return Err(bad(format!("need lo < hi, got {lo} >= {hi}")));
        }
        if steps < 2 {
            return Err(bad(format!("need at least 2 steps, got {steps}")));
        }
        Ok(GridSpec { lo, hi, steps })
    }

    /// Evenly spaced points from `lo` to `hi` inclusive.
    pub fn points(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.steps - 1) as f64;
        (0..self.steps)
            .map(|i| {
                if i == self.steps - 1 {
                    self.hi
                } else {
                    self.lo + step * i as f64
                }
            })
            .collect()
    }
}

/// What to run, with command-specific arguments already resolved (the
/// worker count already reflects both the flag and `NLMR_WORKERS`).
#[derive(Clone, Debug)]
pub enum Command {
    Fit,
    Simulate { workers: Option<usize> },
    Curve { grid: GridSpec },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Simulate { .. } => "simulate",
            Command::Curve { .. } => "curve",
        }
    }
}

/// A finished run: the report and where it was written.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub report_path: PathBuf,
}

/// Push a warning unless an identical one is already recorded.
fn push_warning(warnings: &mut Vec<String>, message: String) {
    if !warnings.iter().any(|w| w == &message) {
        warnings.push(message);
    }
}

fn require_data(config: &AnalysisConfig) -> Result<&DataConfig> {
    config
        .data
        .as_ref()
        .ok_or_else(|| invalid("data", "section is required for this command"))
}

fn require_model(config: &AnalysisConfig) -> Result<&ModelConfig> {
    config
        .model
        .as_ref()
        .ok_or_else(|| invalid("model", "section is required for this command"))
}

fn fit_report(fit: &FitResult) -> FitReport {
    let se = fit.se();
    let coefficients = fit
        .w
        .labels()
        .iter()
        .zip(fit.b_hat.iter())
        .zip(se.iter())
        .map(|((name, &estimate), &se)| Coefficient {
            name: name.clone(),
            estimate,
            se,
        })
        .collect();
    FitReport {
        method: fit.method.as_str().to_string(),
        family: fit.family,
        n: fit.n,
        coefficients,
        theta_index: fit.theta_index.clone(),
        rho_hat: fit.rho_hat,
        var_e: fit.var_e,
        cov_method: fit.cov_method.as_str().to_string(),
    }
}

fn spmr_report(fit: &SpmrFit) -> SpmrReport {
    let coefficients = fit
        .w
        .labels()
        .iter()
        .enumerate()
        .map(|(j, name)| Coefficient {
            name: name.clone(),
            estimate: fit.beta[j],
            se: fit.cov_b[(j, j)].max(0.0).sqrt(),
        })
        .collect();
    SpmrReport {
        family: fit.family,
        n: fit.n,
        lambda: fit.lambda,
        gcv: fit.gcv,
        lambda_at_boundary: fit.lambda_at_boundary,
        edf_x: fit.edf_x,
        edf_total: fit.edf_total,
        rho_hat: fit.rho_hat,
        var_e: fit.var_e,
        coefficients,
        cov_method: fit.cov_method.as_str().to_string(),
    }
}

fn note_test_warnings(test: &TestResult, warnings: &mut Vec<String>) {
    if test.tail_method == Some(TailMethod::Satterthwaite) {
        push_warning(
            warnings,
            "smooth-test tail probability used the moment-matching approximation".to_string(),
        );
    }
}

struct SpmrRun {
    report: SpmrReport,
    test: TestResult,
    curve_file: String,
}

fn run_spmr(
    config: &AnalysisConfig,
    model: &ModelConfig,
    data: &crate::data::DataSet,
    grid: Option<&GridSpec>,
    out_dir: &Path,
    warnings: &mut Vec<String>,
) -> Result<SpmrRun> {
    let options = model.to_spmr_options()?;
    let fit = fit_spmr(data, &options)?;
    if fit.lambda_at_boundary {
        push_warning(
            warnings,
            "smoothing selection stopped at the lambda grid boundary".to_string(),
        );
    }
    let test = spmr_test(&fit, model.test_rank)?;
    note_test_warnings(&test, warnings);

    // Default curve grid: 200 evenly spaced points over the training range.
    let xs = match grid {
        Some(g) => g.points(),
        None => {
            let lo = *fit.x_train_sorted.first().expect("nonempty training data");
            let hi = *fit.x_train_sorted.last().expect("nonempty training data");
            GridSpec { lo, hi, steps: 200 }.points()
        }
    };
    let curve = causal_curve(&fit, &xs)?;
    if curve.n_clamped > 0 {
        push_warning(
            warnings,
            format!(
                "{} curve evaluation point(s) outside the training range were clamped",
                curve.n_clamped
            ),
        );
    }
    let curve_path = out_dir.join(&config.output.curve);
    io::write_curve_csv(&curve_path, &curve)?;
    Ok(SpmrRun {
        report: spmr_report(&fit),
        test,
        curve_file: curve_path.display().to_string(),
    })
}

fn run_simulate(
    config: &AnalysisConfig,
    seed: u64,
    workers: Option<usize>,
    out_dir: &Path,
    warnings: &mut Vec<String>,
) -> Result<String> {
    let simulate = config
        .simulate
        .as_ref()
        .ok_or_else(|| invalid("simulate", "section is required for this command"))?;
    let spmr_options = match &config.model {
        Some(model) => model.to_spmr_options()?,
        None => crate::spmr::SpmrOptions::default(),
    };
    let mut rows = Vec::new();
    for scenario in simulate.grid()? {
        let method = match simulate.method {
            MethodId::TwoStagePrediction => McMethod::TwoStage(scenario.recommended_spec()),
            MethodId::ControlFunction => McMethod::ControlFunction(scenario.recommended_spec()),
            MethodId::Spmr => McMethod::Spmr(spmr_options.clone()),
        };
        let summary = run_mc(&scenario, &method, simulate.replicates, seed, workers)?;
        if summary.n_failed > 0 {
            push_warning(
                warnings,
                format!(
                    "cell (causal={}, pve={}, n={}, pleiotropy={}): {} replicate(s) failed; first: {}",
                    scenario.causal.name(),
                    scenario.pve,
                    scenario.n,
                    scenario.pleiotropy.as_str(),
                    summary.n_failed,
                    summary.first_failure.as_deref().unwrap_or("unknown"),
                ),
            );
        }
        rows.push(SummaryRow {
            causal: scenario.causal.name().to_string(),
            n: scenario.n,
            pve: scenario.pve,
            pleiotropy: scenario.pleiotropy.as_str().to_string(),
            replicates: simulate.replicates,
            n_success: summary.n_success,
            n_failed: summary.n_failed,
            mean_estimate: summary.mean_estimate,
            mc_sd: summary.mc_sd,
            mean_model_se: summary.mean_model_se,
            coverage95: summary.coverage95,
            rejection_rate: summary.rejection_rate,
        });
    }
    let summary_path = out_dir.join(&config.output.summary);
    io::write_summary_csv(&summary_path, &rows)?;
    Ok(summary_path.display().to_string())
}

/// Run a command against a config file and write the report. The optional
/// seed overrides the config's; the echoed config carries the effective one.
pub fn run(config_path: &Path, command: &Command, seed: Option<u64>) -> Result<RunOutcome> {
    let start = Instant::now();
    let mut config = AnalysisConfig::from_path(config_path)?;
    let seed = config.effective_seed(seed);
    config.seed = Some(seed);

    let out_dir = config.output.dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(|source| Error::Io {
        path: out_dir.display().to_string(),
        source,
    })?;

    let mut warnings = Vec::new();
    let mut fit_block = None;
    let mut spmr_block = None;
    let mut test_block = None;
    let mut curve_file = None;
    let mut summary_file = None;

    match command {
        Command::Fit | Command::Curve { .. } => {
            let data_cfg = require_data(&config)?;
            let model = require_model(&config)?;
            let (data, load_warnings) = io::load_csv(&data_cfg.file, data_cfg)?;
            for w in load_warnings {
                push_warning(&mut warnings, w);
            }
            let grid = match command {
                Command::Curve { grid } => {
                    if model.method != MethodId::Spmr {
                        return Err(invalid(
                            "model.method",
                            "the curve command requires method = \"spmr\"",
                        ));
                    }
                    Some(grid)
                }
                _ => None,
            };
            match model.method {
                MethodId::Spmr => {
                    let run = run_spmr(&config, model, &data, grid, &out_dir, &mut warnings)?;
                    spmr_block = Some(run.report);
                    test_block = Some(run.test);
                    curve_file = Some(run.curve_file);
                }
                MethodId::TwoStagePrediction | MethodId::ControlFunction => {
                    let spec = model.to_model_spec(data_cfg.family)?;
                    let fit = match (model.method, data_cfg.family) {
                        (MethodId::TwoStagePrediction, _) => {
                            fit_two_stage_prediction(&data, &spec)?
                        }
                        (MethodId::ControlFunction, Family::Gaussian) => {
                            fit_control_function(&data, &spec)?
                        }
                        (MethodId::ControlFunction, Family::Binomial) => {
                            fit_control_function_binary(&data, &spec)?
                        }
                        (MethodId::Spmr, _) => unreachable!(),
                    };
                    let test = fit.f_test()?;
                    fit_block = Some(fit_report(&fit));
                    test_block = Some(test);
                }
            }
        }
        Command::Simulate { workers } => {
            summary_file = Some(run_simulate(&config, seed, *workers, &out_dir, &mut warnings)?);
        }
    }

    let report = RunReport {
        software: "nlmr".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.name().to_string(),
        seed,
        config,
        fit: fit_block,
        spmr: spmr_block,
        test: test_block,
        curve_file,
        summary_file,
        warnings,
        timing: TimingReport {
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    };
    let report_path = out_dir.join(&report.config.output.report);
    io::write_report(&report_path, &report)?;
    Ok(RunOutcome {
        report,
        report_path,
    })
}
