//! CSV ingestion and artifact serialization.
//!
//! Input CSVs are comma-separated UTF-8 with a header row. Rows with a
//! missing (empty) value in any mapped column are dropped and counted in a
//! single warning; any other unparsable cell is an error that names the row
//! and column. All numeric CSV output is written with 17 significant digits
//! so a double round-trips losslessly.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::{AnalysisConfig, DataConfig};
use crate::data::{DataSet, Family};
use crate::error::{Error, Result};
use crate::inference::TestResult;
use crate::spmr::CurveEstimate;

/// Format a float with 17 significant digits (lossless for `f64`).
pub fn fmt_g17(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Read a CSV file under the given column mapping.
///
/// Returns the data set and any warnings (currently at most one: the count
/// of dropped incomplete rows). Row numbers in errors are 1-based data rows,
/// not counting the header.
pub fn load_csv(path: &Path, mapping: &DataConfig) -> Result<(DataSet, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();

    let column_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let mut names: Vec<&str> = Vec::new();
    names.extend(mapping.instruments.iter().map(String::as_str));
    names.extend(mapping.covariates.iter().map(String::as_str));
    names.push(&mapping.exposure);
    names.push(&mapping.outcome);
    let indices: Vec<usize> = names.iter().map(|n| column_index(n)).collect::<Result<_>>()?;
    let outcome_slot = indices.len() - 1;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let row_number = i + 1;
        let cells: Vec<&str> = indices
            .iter()
            .map(|&j| record.get(j).unwrap_or(""))
            .collect();
        if cells.iter().any(|c| c.is_empty()) {
            dropped += 1;
            continue;
        }
        let mut parsed = Vec::with_capacity(cells.len());
        for (slot, cell) in cells.iter().enumerate() {
            let bad = || Error::NonNumericCell {
                row: row_number,
                column: names[slot].to_string(),
                value: cell.to_string(),
            };
            let value: f64 = cell.parse().map_err(|_| bad())?;
            if !value.is_finite() {
                return Err(bad());
            }
            if slot == outcome_slot
                && mapping.family == Family::Binomial
                && value != 0.0
                && value != 1.0
            {
                return Err(bad());
            }
            parsed.push(value);
        }
        rows.push(parsed);
    }
    if rows.is_empty() {
        return Err(Error::EmptyAfterFiltering);
    }

    let n = rows.len();
    let n_iv = mapping.instruments.len();
    let n_cov = mapping.covariates.len();
    let instruments = DMatrix::from_fn(n, n_iv, |r, c| rows[r][c]);
    let covariates = DMatrix::from_fn(n, n_cov, |r, c| rows[r][n_iv + c]);
    let exposure = DVector::from_fn(n, |r, _| rows[r][n_iv + n_cov]);
    let outcome = DVector::from_fn(n, |r, _| rows[r][n_iv + n_cov + 1]);
    let data = DataSet::with_names(
        instruments,
        covariates,
        exposure,
        outcome,
        mapping.family,
        mapping.instruments.clone(),
        mapping.covariates.clone(),
        mapping.exposure.clone(),
        mapping.outcome.clone(),
    )?;

    let mut warnings = Vec::new();
    if dropped > 0 {
        warnings.push(format!(
            "dropped {dropped} row(s) with missing values in mapped columns"
        ));
    }
    Ok((data, warnings))
}

/// Write a data set as CSV with its column names as the header.
pub fn write_dataset_csv(path: &Path, data: &DataSet) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<&str> = Vec::new();
    header.extend(data.instrument_names.iter().map(String::as_str));
    header.extend(data.covariate_names.iter().map(String::as_str));
    header.push(&data.exposure_name);
    header.push(&data.outcome_name);
    writer.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..data.n() {
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for j in 0..data.n_instruments() {
            record.push(fmt_g17(data.instruments[(i, j)]));
        }
        for j in 0..data.n_covariates() {
            record.push(fmt_g17(data.covariates[(i, j)]));
        }
        record.push(fmt_g17(data.exposure[i]));
        record.push(fmt_g17(data.outcome[i]));
        writer.write_record(&record).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Write a fitted curve as CSV with columns `x,f_hat,se,lo95,hi95`.
pub fn write_curve_csv(path: &Path, curve: &CurveEstimate) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer
        .write_record(["x", "f_hat", "se", "lo95", "hi95"])
        .map_err(|e| csv_err(path, e))?;
    for i in 0..curve.x.len() {
        writer
            .write_record([
                fmt_g17(curve.x[i]),
                fmt_g17(curve.f_hat[i]),
                fmt_g17(curve.se[i]),
                fmt_g17(curve.lo95[i]),
                fmt_g17(curve.hi95[i]),
            ])
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// One Monte Carlo grid cell in a simulation summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub causal: String,
    pub n: usize,
    pub pve: f64,
    pub pleiotropy: String,
    pub replicates: usize,
    pub n_success: usize,
    pub n_failed: usize,
    pub mean_estimate: Option<f64>,
    pub mc_sd: Option<f64>,
    pub mean_model_se: Option<f64>,
    pub coverage95: Option<f64>,
    pub rejection_rate: f64,
}

/// Write the simulation summary, one row per grid cell. Statistics that do
/// not apply to the chosen method (curve estimators have no scalar estimate)
/// are left empty.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    writer
        .write_record([
            "causal",
            "n",
            "pve",
            "pleiotropy",
            "replicates",
            "n_success",
            "n_failed",
            "mean_estimate",
            "mc_sd",
            "mean_model_se",
            "coverage95",
            "rejection_rate",
        ])
        .map_err(|e| csv_err(path, e))?;
    let opt = |v: Option<f64>| v.map(fmt_g17).unwrap_or_default();
    for row in rows {
        writer
            .write_record([
                row.causal.clone(),
                row.n.to_string(),
                fmt_g17(row.pve),
                row.pleiotropy.clone(),
                row.replicates.to_string(),
                row.n_success.to_string(),
                row.n_failed.to_string(),
                opt(row.mean_estimate),
                opt(row.mc_sd),
                opt(row.mean_model_se),
                opt(row.coverage95),
                fmt_g17(row.rejection_rate),
            ])
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// One named coefficient with its standard error.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

/// Parametric fit results for the run report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    pub family: Family,
    pub n: usize,
    pub coefficients: Vec<Coefficient>,
    /// Indices of the exposure-transform coefficients.
    pub theta_index: Vec<usize>,
    pub rho_hat: Option<f64>,
    pub var_e: Option<f64>,
    pub cov_method: String,
}

/// Semiparametric fit results for the run report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpmrReport {
    pub family: Family,
    pub n: usize,
    pub lambda: f64,
    pub gcv: Option<f64>,
    pub lambda_at_boundary: bool,
    pub edf_x: f64,
    pub edf_total: f64,
    pub rho_hat: f64,
    pub var_e: Option<f64>,
    pub coefficients: Vec<Coefficient>,
    pub cov_method: String,
}

/// Wall-clock timing, reported separately so byte-level comparisons can
/// exclude it.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TimingReport {
    pub wall_time_s: f64,
}

/// The JSON report written by every command. Two runs of the same config
/// and seed produce byte-identical reports except for `timing`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub software: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Echo of the validated configuration; re-running it reproduces this
    /// report (timing aside).
    pub config: AnalysisConfig,
    pub fit: Option<FitReport>,
    pub spmr: Option<SpmrReport>,
    pub test: Option<TestResult>,
    pub curve_file: Option<String>,
    pub summary_file: Option<String>,
    /// Each warning raised during the run, deduplicated, in first-seen order.
    pub warnings: Vec<String>,
    pub timing: TimingReport,
}

/// Serialize a report as pretty JSON with a trailing newline.
pub fn report_to_json(report: &RunReport) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    let text = report_to_json(report)?;
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
