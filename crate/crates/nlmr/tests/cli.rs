//! End-to-end checks of the command-line surface: config parsing, CSV
//! ingestion, report/artifact determinism, and exit-code classes.

use std::path::{Path, PathBuf};
use std::process::Output;

use nlmr::config::AnalysisConfig;
use nlmr::estimators::fit_control_function;
use nlmr::io::{load_csv, write_dataset_csv};
use nlmr::simkit::{gen_dataset, CausalForm, Scenario};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nlmr")
}

fn run_cli(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = std::process::Command::new(bin());
    cmd.args(args);
    cmd.env_remove("NLMR_WORKERS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn nlmr")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

/// Report text with the wall-clock line removed, for byte comparisons.
fn strip_timing(report: &str) -> String {
    report
        .lines()
        .filter(|line| !line.contains("wall_time_s"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn export_dataset(dir: &Path, scenario: &Scenario, seed: u64) -> PathBuf {
    let data = gen_dataset(scenario, seed, 0).unwrap();
    let path = dir.join("data.csv");
    write_dataset_csv(&path, &data).unwrap();
    path
}

fn fit_config(dir: &Path, data_file: &Path, model_lines: &str) -> PathBuf {
    let text = format!(
        r#"
schema_version = 1
seed = 3

[data]
file = "{data}"
instruments = ["z1"]
covariates = ["c1"]
exposure = "x"
outcome = "y"

[model]
{model_lines}

[output]
dir = "{out}"
"#,
        data = data_file.display(),
        out = dir.join("out").display(),
    );
    let path = dir.join("config.toml");
    write(&path, &text);
    path
}

#[test]
fn csv_round_trip_reproduces_the_in_memory_fit_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = Scenario::new(CausalForm::Quad3, 2000, 0.1);
    let data = gen_dataset(&scenario, 5, 0).unwrap();
    let spec = scenario.recommended_spec();
    let direct = fit_control_function(&data, &spec).unwrap();

    let path = dir.path().join("rt.csv");
    write_dataset_csv(&path, &data).unwrap();
    let mapping = nlmr::config::DataConfig {
        file: path.clone(),
        instruments: vec!["z1".into()],
        covariates: vec!["c1".into()],
        exposure: "x".into(),
        outcome: "y".into(),
        family: nlmr::Family::Gaussian,
    };
    let (loaded, warnings) = load_csv(&path, &mapping).unwrap();
    assert!(warnings.is_empty());
    let reloaded = fit_control_function(&loaded, &spec).unwrap();

    assert_eq!(direct.b_hat.len(), reloaded.b_hat.len());
    for j in 0..direct.b_hat.len() {
        assert_eq!(direct.b_hat[j].to_bits(), reloaded.b_hat[j].to_bits(), "coef {j}");
    }
    let (se_a, se_b) = (direct.se(), reloaded.se());
    for j in 0..se_a.len() {
        assert_eq!(se_a[j].to_bits(), se_b[j].to_bits(), "se {j}");
    }
}

#[test]
fn fit_on_exported_data_recovers_the_coefficient_within_3_se() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = Scenario::new(CausalForm::Quad3, 10_000, 0.1);
    let data_file = export_dataset(dir.path(), &scenario, 11);
    let config = fit_config(
        dir.path(),
        &data_file,
        "method = \"control_function\"\nf = [\"quad3\"]",
    );

    let out = run_cli(&["fit", "--config", config.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("out/report.json"))).unwrap();
    let fit = &report["fit"];
    let idx = fit["theta_index"][0].as_u64().unwrap() as usize;
    let coef = &fit["coefficients"][idx];
    assert_eq!(coef["name"], "f:quad3(x)");
    let estimate = coef["estimate"].as_f64().unwrap();
    let se = coef["se"].as_f64().unwrap();
    assert!(
        (estimate - 1.0).abs() <= 3.0 * se,
        "estimate {estimate} se {se}"
    );
    assert_eq!(report["seed"], 3);
    assert!(report["test"]["p_value"].as_f64().unwrap() < 0.05);
}

#[test]
fn fit_reruns_are_byte_identical_except_timing() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = Scenario::new(CausalForm::Sin, 1500, 0.1);
    let data_file = export_dataset(dir.path(), &scenario, 2);
    let config = fit_config(
        dir.path(),
        &data_file,
        "method = \"control_function\"\nf = [\"sin\"]",
    );

    let report_path = dir.path().join("out/report.json");
    assert!(run_cli(&["fit", "--config", config.to_str().unwrap()], &[]).status.success());
    let first = read(&report_path);
    assert!(run_cli(&["fit", "--config", config.to_str().unwrap()], &[]).status.success());
    let second = read(&report_path);

    assert_ne!(first, second, "timing should differ between runs");
    assert_eq!(strip_timing(&first), strip_timing(&second));
}

#[test]
fn config_echo_reruns_to_identical_results() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = Scenario::new(CausalForm::Exp3, 1200, 0.15);
    let data_file = export_dataset(dir.path(), &scenario, 8);
    let config = fit_config(
        dir.path(),
        &data_file,
        "method = \"control_function\"\nf = [\"exp3\"]",
    );

    assert!(
        run_cli(&["fit", "--config", config.to_str().unwrap(), "--seed", "99"], &[])
            .status
            .success()
    );
    let report_path = dir.path().join("out/report.json");
    let first: serde_json::Value = serde_json::from_str(&read(&report_path)).unwrap();
    assert_eq!(first["seed"], 99, "seed override recorded in the echo");

    // Re-run from the echoed config alone; fit and test must match exactly.
    let echoed: AnalysisConfig = serde_json::from_value(first["config"].clone()).unwrap();
    let echo_path = dir.path().join("echo.toml");
    write(&echo_path, &toml::to_string(&echoed).unwrap());
    assert!(run_cli(&["fit", "--config", echo_path.to_str().unwrap()], &[]).status.success());
    let second: serde_json::Value = serde_json::from_str(&read(&report_path)).unwrap();

    assert_eq!(first["seed"], second["seed"]);
    assert_eq!(first["fit"], second["fit"]);
    assert_eq!(first["test"], second["test"]);
    assert_eq!(first["warnings"], second["warnings"]);
}

#[test]
fn curve_command_tabulates_the_requested_grid() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = Scenario::new(CausalForm::Quad3, 1500, 0.1);
    let data_file = export_dataset(dir.path(), &scenario, 4);
    let config = fit_config(dir.path(), &data_file, "method = \"spmr\"");

    let out = run_cli(
        &["curve", "--config", config.to_str().unwrap(), "--grid", "-50:50:40"],
        &[],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let curve = read(&dir.path().join("out/curve.csv"));
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "x,f_hat,se,lo95,hi95");
    assert_eq!(lines.len(), 41, "header + 40 grid rows");
    let first_x: f64 = lines[1].split(',').next().unwrap().parse().unwrap();
    let last_x: f64 = lines[40].split(',').next().unwrap().parse().unwrap();
    assert_eq!(first_x, -50.0);
    assert_eq!(last_x, 50.0);

    // +/-50 lies far outside the training exposure range, so the report
    // must carry the clamping warning exactly once.
    let report: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("out/report.json"))).unwrap();
    let warnings = report["warnings"].as_array().unwrap();
    let clamped: Vec<_> = warnings
        .iter()
        .filter(|w| w.as_str().unwrap().contains("clamped"))
        .collect();
    assert_eq!(clamped.len(), 1, "warnings: {warnings:?}");
    assert!(report["spmr"]["lambda"].as_f64().unwrap() >= 0.0);

    // Reruns are byte-identical (timing aside), artifacts exactly.
    let first_curve = curve;
    let first_report = read(&dir.path().join("out/report.json"));
    assert!(run_cli(
        &["curve", "--config", config.to_str().unwrap(), "--grid", "-50:50:40"],
        &[],
    )
    .status
    .success());
    assert_eq!(first_curve, read(&dir.path().join("out/curve.csv")));
    assert_eq!(
        strip_timing(&first_report),
        strip_timing(&read(&dir.path().join("out/report.json")))
    );
}

#[test]
fn curve_command_requires_the_semiparametric_method() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = Scenario::new(CausalForm::Quad3, 500, 0.1);
    let data_file = export_dataset(dir.path(), &scenario, 4);
    let config = fit_config(
        dir.path(),
        &data_file,
        "method = \"control_function\"\nf = [\"quad3\"]",
    );
    let out = run_cli(
        &["curve", "--config", config.to_str().unwrap(), "--grid", "0:1:10"],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

fn simulate_config(dir: &Path, body: &str) -> PathBuf {
    let text = format!(
        r#"
schema_version = 1
seed = 7

[simulate]
{body}

[output]
dir = "{out}"
"#,
        out = dir.join("out").display(),
    );
    let path = dir.join("sim.toml");
    write(&path, &text);
    path
}

const SMALL_GRID: &str = r#"causal = ["sin"]
n = [400]
pve = [0.1]
replicates = 20
method = "control_function""#;

#[test]
fn simulate_summary_has_one_fully_populated_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let config = simulate_config(
        dir.path(),
        r#"causal = ["quad3", "sin"]
n = [300, 600]
pve = [0.05, 0.1]
replicates = 25
method = "control_function""#,
    );
    let out = run_cli(&["simulate", "--config", config.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let summary = read(&dir.path().join("out/summary.csv"));
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(
        lines[0],
        "causal,n,pve,pleiotropy,replicates,n_success,n_failed,mean_estimate,mc_sd,mean_model_se,coverage95,rejection_rate"
    );
    assert_eq!(lines.len(), 1 + 2 * 2 * 2, "header + 8 grid cells");
    // Row order: causal (outer), then pve, then n.
    let first_cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first_cells[0], "quad3");
    assert_eq!(first_cells[1], "300");
    let second_cells: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(second_cells[1], "600");
    assert_eq!(lines[5].split(',').next().unwrap(), "sin");
    for line in &lines[1..] {
        for (i, cell) in line.split(',').enumerate() {
            assert!(!cell.is_empty(), "column {i} empty in row `{line}`");
        }
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[5], "25", "n_success");
        let coverage: f64 = cells[10].parse().unwrap();
        assert!((0.0..=1.0).contains(&coverage));
    }
}

#[test]
fn simulate_covers_the_full_benchmark_grid() {
    let dir = tempfile::tempdir().unwrap();
    let config = simulate_config(
        dir.path(),
        r#"causal = ["linear", "quad3", "sin", "exp3"]
n = [1000, 5000, 10000, 20000]
pve = [0.01, 0.05, 0.10, 0.15, 0.20, 0.25]
replicates = 200
method = "control_function""#,
    );
    let out = run_cli(&["simulate", "--config", config.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let summary = read(&dir.path().join("out/summary.csv"));
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 1 + 4 * 6 * 4, "header + 96 grid cells");
    for line in &lines[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 12);
        for (i, cell) in cells.iter().enumerate() {
            assert!(!cell.is_empty(), "column {i} empty in row `{line}`");
        }
        let n_success: u64 = cells[5].parse().unwrap();
        let n_failed: u64 = cells[6].parse().unwrap();
        assert_eq!(n_success + n_failed, 200);
        let mean: f64 = cells[7].parse().unwrap();
        let mc_sd: f64 = cells[8].parse().unwrap();
        assert!(mean.is_finite() && mc_sd > 0.0, "degenerate cell `{line}`");
        // the largest sample size pins the estimate down tightly for every
        // causal form and instrument strength
        if cells[1] == "20000" {
            assert!((0.8..=1.2).contains(&mean), "off-target mean in `{line}`");
        }
    }
}

#[test]
fn simulate_is_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let config = simulate_config(dir.path(), SMALL_GRID);
    let summary_path = dir.path().join("out/summary.csv");

    assert!(run_cli(&["simulate", "--config", config.to_str().unwrap()], &[]).status.success());
    let base = read(&summary_path);
    assert!(run_cli(&["simulate", "--config", config.to_str().unwrap()], &[]).status.success());
    assert_eq!(base, read(&summary_path), "same config + seed is byte-identical");

    assert!(run_cli(
        &["simulate", "--config", config.to_str().unwrap(), "--seed", "8"],
        &[]
    )
    .status
    .success());
    assert_ne!(base, read(&summary_path), "a different seed changes the draw");

    assert!(run_cli(
        &["simulate", "--config", config.to_str().unwrap(), "--seed", "7"],
        &[]
    )
    .status
    .success());
    assert_eq!(base, read(&summary_path), "explicit seed equal to the config's");
}

#[test]
fn worker_count_does_not_change_simulate_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = simulate_config(dir.path(), SMALL_GRID);
    let summary_path = dir.path().join("out/summary.csv");

    assert!(run_cli(
        &["simulate", "--config", config.to_str().unwrap(), "--workers", "1"],
        &[]
    )
    .status
    .success());
    let single = read(&summary_path);
    assert!(run_cli(
        &["simulate", "--config", config.to_str().unwrap(), "--workers", "3"],
        &[]
    )
    .status
    .success());
    assert_eq!(single, read(&summary_path));

    // The env var is the fallback; a bad value is a config-class failure.
    assert!(run_cli(
        &["simulate", "--config", config.to_str().unwrap()],
        &[("NLMR_WORKERS", "2")]
    )
    .status
    .success());
    assert_eq!(single, read(&summary_path));
    let out = run_cli(
        &["simulate", "--config", config.to_str().unwrap()],
        &[("NLMR_WORKERS", "lots")],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_distinguish_config_data_and_numerical_failures() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = Scenario::new(CausalForm::Quad3, 300, 0.1);
    let data_file = export_dataset(dir.path(), &scenario, 6);

    // Config class: wrong schema version.
    let bad_schema = dir.path().join("bad_schema.toml");
    write(&bad_schema, "schema_version = 9\n");
    let out = run_cli(&["fit", "--config", bad_schema.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema_version"));

    // Config class: unknown key.
    let unknown_key = dir.path().join("unknown.toml");
    write(&unknown_key, "schema_version = 1\nturbo = true\n");
    assert_eq!(
        run_cli(&["fit", "--config", unknown_key.to_str().unwrap()], &[]).status.code(),
        Some(2)
    );

    // Data class: a mapped column is missing from the file.
    let missing_col = fit_config(
        dir.path(),
        &data_file,
        "method = \"control_function\"\nf = [\"quad3\"]",
    );
    let text = read(&missing_col).replace("\"z1\"", "\"zz\"");
    write(&missing_col, &text);
    let out = run_cli(&["fit", "--config", missing_col.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zz"));

    // Data class: non-numeric cell names its row and column.
    let mangled = dir.path().join("mangled.csv");
    let mut csv_text = read(&data_file);
    let third_line_start = csv_text
        .char_indices()
        .filter(|(_, c)| *c == '\n')
        .nth(2)
        .map(|(i, _)| i + 1)
        .unwrap();
    let comma = csv_text[third_line_start..].find(',').unwrap();
    csv_text.replace_range(third_line_start..third_line_start + comma, "oops");
    write(&mangled, &csv_text);
    let bad_cell = fit_config(
        dir.path(),
        &mangled,
        "method = \"control_function\"\nf = [\"quad3\"]",
    );
    let out = run_cli(&["fit", "--config", bad_cell.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("row 3") && stderr.contains("z1"), "{stderr}");

    // Numerical class: duplicated instrument column makes stage 1 singular.
    let dup = dir.path().join("dup.csv");
    let src = read(&data_file);
    let mut out_text = String::new();
    for (i, line) in src.lines().enumerate() {
        let first = line.split(',').next().unwrap();
        if i == 0 {
            out_text.push_str(&format!("z2,{line}\n"));
        } else {
            out_text.push_str(&format!("{first},{line}\n"));
        }
    }
    write(&dup, &out_text);
    let collinear = dir.path().join("collinear.toml");
    write(
        &collinear,
        &format!(
            r#"
schema_version = 1

[data]
file = "{file}"
instruments = ["z1", "z2"]
covariates = ["c1"]
exposure = "x"
outcome = "y"

[model]
method = "control_function"
f = ["quad3"]

[output]
dir = "{out}"
"#,
            file = dup.display(),
            out = dir.path().join("out").display(),
        ),
    );
    let out = run_cli(&["fit", "--config", collinear.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn version_flag_prints_the_package_version() {
    let out = run_cli(&["--version"], &[]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains(env!("CARGO_PKG_VERSION")), "{stdout}");
}

#[test]
fn missing_subcommand_fails_with_usage() {
    let out = run_cli(&[], &[]);
    assert!(!out.status.success());
}
