//! File-based pipeline: export a dataset to CSV, read it back through the
//! column-mapping loader, and drive a full declarative run from a TOML config
//! — the same path the `nlmr` binary takes. The run writes a JSON report
//! whose config echo reproduces the run exactly.
//!
//! Run with: `cargo run --example csv_workflow`

use std::fs;

use nlmr::config::DataConfig;
use nlmr::estimators::{fit_control_function, ModelSpec};
use nlmr::io::{load_csv, write_dataset_csv};
use nlmr::runner::{run, Command, GridSpec};
use nlmr::simkit::{gen_dataset, CausalForm, Scenario};
use nlmr::{Family, Transform};

fn main() -> nlmr::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let csv_path = dir.path().join("exposure_outcome.csv");

    // Export a synthetic dataset: columns z1, c1, x, y.
    let scenario = Scenario::new(CausalForm::Quad3, 2000, 0.10);
    let data = gen_dataset(&scenario, 99, 0)?;
    write_dataset_csv(&csv_path, &data)?;
    println!("wrote {} rows to {}", data.outcome.len(), csv_path.display());

    // Read it back with an explicit column mapping and fit in memory.
    let mapping = DataConfig {
        file: csv_path.clone(),
        instruments: vec!["z1".into()],
        covariates: vec!["c1".into()],
        exposure: "x".into(),
        outcome: "y".into(),
        family: Family::Gaussian,
    };
    let (reloaded, warnings) = load_csv(&csv_path, &mapping)?;
    assert!(warnings.is_empty());
    let fit = fit_control_function(&reloaded, &ModelSpec::gaussian(vec![Transform::quad3()]))?;
    println!(
        "in-memory fit from the reloaded CSV: theta = {:.4}",
        fit.b_hat[fit.theta_index[0]]
    );

    // The same analysis as a declarative config, as the CLI would run it.
    let config_path = dir.path().join("analysis.toml");
    fs::write(
        &config_path,
        format!(
            r#"
schema_version = 1
seed = 1

[data]
file = "{csv}"
instruments = ["z1"]
covariates = ["c1"]
exposure = "x"
outcome = "y"

[model]
method = "control_function"
f = ["quad3"]

[output]
dir = "{out}"
"#,
            csv = csv_path.display(),
            out = dir.path().join("out").display(),
        ),
    )
    .expect("write config");

    let outcome = run(&config_path, &Command::Fit, None)?;
    println!("report written to {}", outcome.report_path.display());
    for c in &outcome.report.fit.as_ref().unwrap().coefficients {
        println!("  {:12} {:8.4}  (se {:.4})", c.name, c.estimate, c.se);
    }

    // A semiparametric run of the same file tabulates the curve as CSV.
    let curve_config = dir.path().join("curve.toml");
    fs::write(
        &curve_config,
        format!(
            r#"
schema_version = 1
seed = 1

[data]
file = "{csv}"
instruments = ["z1"]
covariates = ["c1"]
exposure = "x"
outcome = "y"

[model]
method = "spmr"

[output]
dir = "{out}"
"#,
            csv = csv_path.display(),
            out = dir.path().join("out").display(),
        ),
    )
    .expect("write config");
    let outcome = run(&curve_config, &Command::Curve { grid: GridSpec::parse("-4:6:50")? }, None)?;
    println!(
        "curve table written to {}",
        outcome.report.curve_file.as_deref().unwrap()
    );
    Ok(())
}
