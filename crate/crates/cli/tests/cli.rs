//! End-to-end runs of the `uhmc` binary: schemas, exit codes, determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn uhmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uhmc")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn run_in(dir: &TempDir, sub: &str, config: Option<&str>, extra: &[&str]) -> (Output, std::path::PathBuf) {
    let out = dir.path().join(format!("out-{sub}-{}", extra.join("-")));
    let mut args = vec![sub.to_string(), "--out".into(), out.display().to_string()];
    if let Some(text) = config {
        args.push("--config".into());
        args.push(write_config(dir.path(), text));
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    (uhmc(&refs), out)
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn csv_schemas_match_the_documented_columns() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        ("bias-scan", "bias_scan.csv", "d,T,h,kl_bias_exact,kl_bias_bound,renyi_q,renyi_bias_exact,renyi_bias_bound"),
        ("mixing-scan", "mixing_scan.csv", "d,T,h,k,kl_exact,kl_bound,renyi_exact,renyi_bound"),
        ("mi-scan", "mi_scan.csv", "d,T,h,k,mi_exact,mi_bound"),
        ("ula-scan", "ula_scan.csv", "eta,kl_exact,slope_fit"),
        ("figure1", "figure1.csv", "tv,kl,r2,quadrature_rel_error"),
        (
            "renyi-scan",
            "renyi_scan.csv",
            "d,T,h,q,k,renyi_mixing_exact,renyi_mixing_bound,renyi_target_exact,renyi_target_bound",
        ),
    ];
    for (sub, file, expected) in cases {
        let (o, out) = run_in(&tmp, sub, None, &[]);
        assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stdout));
        assert_eq!(header(&out.join(file)), expected, "{sub}");
        let s = summary(&out);
        assert_eq!(s["passed"], true);
        for c in s["checks"].as_array().unwrap() {
            assert!(c["criterion"].is_string() && c["tolerance"].is_number(), "{sub}: {c}");
        }
    }
}

#[test]
fn bias_scan_reports_fourth_order_slope() {
    let tmp = TempDir::new().unwrap();
    let cfg = "experiment = \"bias-scan\"\nseed = 3\n[potential]\nkind = \"quadratic\"\nomega2 = 0.5\n[grid]\nd = [1]\nt = [0.2]\nh = [0.2, 0.1, 0.05, 0.025]\nq = [2.0]\n";
    let (o, out) = run_in(&tmp, "bias-scan", Some(cfg), &[]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("bias_scan.csv")).unwrap();
    assert_eq!(text.lines().count(), 5);
    let s = summary(&out);
    let slope = s["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"].as_str().unwrap().contains("slope"))
        .unwrap();
    assert_eq!(slope["criterion"], "C6");
    assert!((slope["observed"].as_f64().unwrap() - 4.0).abs() < 0.1);
    assert_eq!(s["seed"], 3);
}

#[test]
fn figure1_single_row_meets_thresholds() {
    let tmp = TempDir::new().unwrap();
    let (o, out) = run_in(&tmp, "figure1", None, &[]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("figure1.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let v: Vec<f64> = lines[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert!(v[0] <= 0.01 && v[1] >= 0.4 && v[2] >= 90.0);
    assert!(out.join("figure1_density.csv").exists());
}

#[test]
fn zero_sample_couple_verify_is_not_a_pass() {
    let tmp = TempDir::new().unwrap();
    let (o, out) = run_in(&tmp, "couple-verify", Some("[couple]\nsamples = 0\n"), &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("vacuous pass = false"));
    assert_eq!(fs::read_to_string(out.join("couple_verify.csv")).unwrap(), "lemma_id,samples,max_ratio,worst_residual\n");
    let s = summary(&out);
    assert_eq!(s["vacuous_pass"], false);
    assert_eq!(s["passed"], false);
}

#[test]
fn couple_verify_output_is_independent_of_threads() {
    let tmp = TempDir::new().unwrap();
    let cfg = "[couple]\nsamples = 60\nlemmas = [\"mixing_displacement\", \"cross_jacobian\", \"bias_jacobian_first_order\"]\n";
    let (a, out_a) = run_in(&tmp, "couple-verify", Some(cfg), &["--threads", "1"]);
    let (b, out_b) = run_in(&tmp, "couple-verify", Some(cfg), &["--threads", "4"]);
    assert!(a.status.success() && b.status.success());
    let ca = fs::read(out_a.join("couple_verify.csv")).unwrap();
    assert_eq!(ca, fs::read(out_b.join("couple_verify.csv")).unwrap());
    assert_eq!(String::from_utf8(ca).unwrap().lines().count(), 4);
    assert_eq!(fs::read(out_a.join("summary.json")).unwrap(), fs::read(out_b.join("summary.json")).unwrap());
}

#[test]
fn scans_are_byte_identical_across_runs_and_threads() {
    let tmp = TempDir::new().unwrap();
    for (sub, file) in [("mixing-scan", "mixing_scan.csv"), ("sample", "samples.csv")] {
        let (_, a) = run_in(&tmp, sub, None, &["--threads", "1"]);
        let (_, b) = run_in(&tmp, sub, None, &["--threads", "3"]);
        let (_, c) = run_in(&tmp, sub, None, &["--threads", "3", "--seed", "0"]);
        let bytes = fs::read(a.join(file)).unwrap();
        assert_eq!(bytes, fs::read(b.join(file)).unwrap(), "{sub}");
        assert_eq!(bytes, fs::read(c.join(file)).unwrap(), "{sub}");
    }
}

#[test]
fn seed_changes_sampled_output() {
    let tmp = TempDir::new().unwrap();
    let (_, a) = run_in(&tmp, "sample", None, &["--seed", "1"]);
    let (_, b) = run_in(&tmp, "sample", None, &["--seed", "2"]);
    assert_ne!(fs::read(a.join("samples.csv")).unwrap(), fs::read(b.join("samples.csv")).unwrap());
}

#[test]
fn failing_check_sets_exit_status() {
    let tmp = TempDir::new().unwrap();
    let (o, out) = run_in(&tmp, "bias-scan", Some("[tolerances]\nbias_slope = 1e-9\n"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(summary(&out)["passed"], false);
}

#[test]
fn infeasible_pairs_are_marked_not_dropped() {
    let tmp = TempDir::new().unwrap();
    let cfg = "[grid]\nd = [1]\nt = [0.25, 4.0]\nh = [0.05]\nk = [0, 1]\n";
    let (o, out) = run_in(&tmp, "mixing-scan", Some(cfg), &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = fs::read_to_string(out.join("mixing_scan.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[2].ends_with("NaN,NaN,NaN,NaN"));
    assert!(!summary(&out)["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn validate_reports_planned_rows() {
    let tmp = TempDir::new().unwrap();
    let path = write_config(tmp.path(), "experiment = \"mi-scan\"\n[grid]\nd = [1, 2]\nk = { from = 1, to = 10 }\n");
    let o = uhmc(&["validate", "--config", &path]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "ok: mi-scan with 20 rows planned");
}

#[test]
fn validate_names_a_non_dividing_pair() {
    let tmp = TempDir::new().unwrap();
    let path = write_config(tmp.path(), "experiment = \"mixing-scan\"\n[grid]\nt = [0.25]\nh = [0.05, 0.02]\n");
    let o = uhmc(&["validate", "--config", &path]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("h = 0.02") && err.contains("T = 0.25"), "{err}");
}

#[test]
fn validate_warns_on_unstable_couple_verify_pairs() {
    let tmp = TempDir::new().unwrap();
    let path = write_config(tmp.path(), "experiment = \"couple-verify\"\n[grid]\nt = [0.2, 2.5]\nh = [0.05]\n");
    let o = uhmc(&["validate", "--config", &path]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("warning") && text.contains("(T=2.5, h=0.05)"), "{text}");
}

#[test]
fn parse_errors_carry_location() {
    let tmp = TempDir::new().unwrap();
    let path = write_config(tmp.path(), "experiment = \"bias-scan\"\n[grid]\nh = [0.1,\n");
    let o = uhmc(&["validate", "--config", &path]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line"));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let report = uhmc_cli::validate_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert!(report.planned_rows > 0 && report.warnings.is_empty(), "{}: {report}", path.display());
            seen += 1;
        }
    }
    assert_eq!(seen, 8);
}
