//! End-to-end tests driving the compiled binary.

use std::process::{Command, Output};

use erlang_diffusion::density::{DensityKind, PiecewiseLogDensity};
use erlang_diffusion::metrics::pmf_sup_error;
use erlang_diffusion::params::SystemParams;
use erlang_diffusion::quad::QuadConfig;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_erlang-diffusion"));
    cmd.env_remove("ERLANG_DIFFUSION_TOL");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("stdout should be utf8")
}

/// Data rows of a CSV body, split into raw cells.
fn rows(body: &str) -> Vec<Vec<String>> {
    body.lines()
        .skip(1)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn cell(row: &[String], idx: usize) -> f64 {
    row[idx].parse().expect("numeric cell")
}

fn close(a: f64, b: f64, rel: f64) {
    assert!(
        (a - b).abs() <= rel * b.abs().max(1e-300),
        "{a} vs {b} beyond rel {rel}"
    );
}

#[test]
fn benefit_table_matches_known_rows() {
    let body = run_ok(&["table-benefit"]);
    let rows = rows(&body);
    assert_eq!(rows.len(), 10);

    let at = |n: f64, r: f64| {
        rows.iter()
            .find(|row| cell(row, 0) == n && cell(row, 1) == r)
            .expect("row present")
    };
    close(cell(at(5.0, 4.9), 2), 21.04, 1e-3);
    close(cell(at(100.0, 98.0), 5), 7.00e-4, 1e-3);

    for row in &rows {
        let rel_y0 = cell(row, 4);
        let rel_y = cell(row, 6);
        assert!(
            rel_y < rel_y0,
            "state-dependent law should win on row {row:?}"
        );
    }
}

#[test]
fn rates_table_recovers_the_decay_slopes() {
    let body = run_ok(&["table-rates"]);
    let (moments, fit_section) = body.split_once("\n\n").expect("two sections");
    let data: Vec<Vec<String>> = moments
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    let fits: Vec<&str> = fit_section.lines().skip(1).collect();
    assert_eq!(data.len(), 8);
    assert_eq!(fits.len(), 4);

    let big = data
        .iter()
        .find(|r| r[0] == "mean" && r[2] == "488.94")
        .expect("mean row at the second-largest system");
    close(cell(big, 4), 1.03e-2, 2e-2);
    close(cell(big, 5), 1.23e-4, 2e-2);

    let slope_of = |label: &str| -> f64 {
        fits.iter()
            .find(|l| l.starts_with(label))
            .expect("fit row")
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((slope_of("mean_y,") - -1.0).abs() < 0.05);
    assert!((slope_of("mean_y0,") - -0.5).abs() < 0.05);
    assert!((slope_of("m2_y,") - -1.0).abs() < 0.05);
    assert!((slope_of("m2_y0,") - -0.5).abs() < 0.05);
}

#[test]
fn pmf_figure_is_consistent_with_the_library_sup_error() {
    let body = run_ok(&["figure-pmf"]);
    let rows = rows(&body);
    assert!(rows.len() > 50);

    let pmf_sum: f64 = rows.iter().map(|r| cell(r, 2)).sum();
    assert!((pmf_sum - 1.0).abs() < 2e-6, "pmf sums to {pmf_sum}");
    for idx in [3usize, 4] {
        let sum: f64 = rows.iter().map(|r| cell(r, idx)).sum();
        assert!((sum - 1.0).abs() < 0.02, "column {idx} sums to {sum}");
    }

    let figure_sup = rows
        .iter()
        .map(|r| (cell(r, 2) - cell(r, 4)).abs())
        .fold(0.0f64, f64::max);
    let cfg = QuadConfig::default();
    let params = SystemParams::from_load(5, 4.0, 1.0)
        .unwrap()
        .derive()
        .unwrap();
    let dens = PiecewiseLogDensity::build(&params, DensityKind::StateDependent, &cfg).unwrap();
    let chain = erlang_diffusion::chain::StationaryDistribution::build(&params);
    let library_sup = pmf_sup_error(&chain, &dens).unwrap().value;
    close(figure_sup, library_sup, 1e-3);
}

#[test]
fn kolmogorov_table_contains_all_blocks() {
    let body = run_ok(&["table-kolmogorov"]);
    let rows = rows(&body);
    let count = |block: &str| rows.iter().filter(|r| r[0] == block).count();
    assert_eq!(count("small"), 5);
    assert_eq!(count("large"), 6);
    assert_eq!(count("scaling"), 4);

    let worked = rows
        .iter()
        .find(|r| r[0] == "small" && r[2] == "4")
        .unwrap();
    close(cell(worked, 3), 8.76e-2, 1e-2);
    for row in &rows {
        assert!(cell(row, 4) < cell(row, 3), "dk_y below dk_y0 in {row:?}");
    }
}

#[test]
fn verify_passes_at_the_worked_example() {
    let out = run(&["verify"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["failures"].as_array().unwrap().len(), 0);
    assert_eq!(report["poisson_residuals"].as_array().unwrap().len(), 3);
    assert_eq!(report["moment_bounds"].as_array().unwrap().len(), 13);
    assert!(report["generator_expansion"]["pass"].as_bool().unwrap());
}

#[test]
fn verify_skips_out_of_range_bounds_when_underloaded() {
    let out = run(&["verify", "--n", "5", "--R", "0.5"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
    assert!(!report["skipped_checks"].as_array().unwrap().is_empty());
}

#[test]
fn verify_survives_a_nearly_critical_load() {
    let out = run(&["verify", "--n", "5", "--R", "4.999999"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!report["warnings"].as_array().unwrap().is_empty());
    assert_eq!(report["pass"], true);
}

#[test]
fn sweep_reproduces_the_benefit_rows() {
    let table = run_ok(&["table-benefit"]);
    let sweep = run_ok(&["sweep", "--n", "5", "--R", "3,4,4.9,4.95,4.99"]);
    let table_rows = rows(&table);
    let sweep_rows = rows(&sweep);
    assert_eq!(sweep_rows.len(), 5);
    for srow in &sweep_rows {
        let trow = table_rows
            .iter()
            .find(|t| t[0] == srow[0] && t[1] == srow[1])
            .expect("matching benefit row");
        assert_eq!(srow[2], trow[2]);
        assert_eq!(srow[3], trow[3]);
        assert_eq!(srow[5], trow[5]);
    }
}

#[test]
fn sweep_output_does_not_depend_on_thread_count() {
    let args = ["sweep", "--points", "5:4,50:46.59,100:80"];
    let one = run_ok(&args);
    let again = run_ok(&args);
    let forced: String = run_ok(&["sweep", "--points", "5:4,50:46.59,100:80", "--threads", "3"]);
    assert_eq!(one, again);
    assert_eq!(one, forced);
}

#[test]
fn empty_sweep_prints_only_the_header() {
    let body = run_ok(&["sweep"]);
    assert_eq!(body.lines().count(), 1);
    assert!(body.starts_with("n,R,"));
}

#[test]
fn bad_arguments_exit_with_the_usage_code() {
    for args in [
        &["sweep", "--n", "5", "--R", "6"][..],
        &["sweep", "--R", "4"][..],
        &["sweep", "--points", "banana"][..],
        &["figure-pmf", "--R", "4", "--lambda", "4"][..],
        &["table-benefit", "--tol", "5"][..],
        &["verify", "--grid-step", "-1"][..],
        &["no-such-subcommand"][..],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "args {args:?}");
    }
}

#[test]
fn tolerance_env_var_is_honored_and_validated() {
    let out = bin()
        .args(["table-benefit"])
        .env("ERLANG_DIFFUSION_TOL", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin()
        .args(["table-benefit"])
        .env("ERLANG_DIFFUSION_TOL", "1e-10")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn output_file_flag_writes_the_same_bytes_as_stdout() {
    let dir = std::env::temp_dir().join("erlang-diffusion-cli-test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("benefit.csv");
    let stdout = run_ok(&["table-benefit"]);
    run_ok(&["table-benefit", "--out", path.to_str().unwrap()]);
    let written = std::fs::read_to_string(&path).unwrap();
    assert_eq!(stdout, written);
    std::fs::remove_file(&path).ok();
}

#[test]
fn json_format_parses_for_every_table() {
    for sub in ["table-benefit", "table-rates", "table-kolmogorov"] {
        let body = run_ok(&[sub, "--format", "json"]);
        let parsed: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert!(parsed.is_object() || parsed.is_array(), "{sub}");
    }
    let body = run_ok(&["sweep", "--points", "5:4", "--format", "json"]);
    let parsed: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(parsed["rows"].as_array().unwrap().len(), 1);
    assert_eq!(parsed["errors"].as_array().unwrap().len(), 0);
}

#[test]
fn scaled_results_do_not_depend_on_the_service_rate() {
    let base = run_ok(&["table-benefit"]);
    let scaled = run_ok(&["table-benefit", "--mu", "2.5"]);
    assert_eq!(base, scaled);
}
