use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sfde(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfde"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Value of `column` in the single data row of a CSV report.
fn csv_field(text: &str, column: &str) -> f64 {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == column).unwrap();
    row[i].parse().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn price_without_delay_prints_annuity_value() {
    let out = sfde(&["price"], &configs().join("no_delay.json"));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("discount_rate,K,lambda0,present_term,past_term,total\n"));
    // K = 0.03 - 0.01 + 0.1·0.2
    assert!((csv_field(&text, "total") - 25.0).abs() < 1e-12);
    assert_eq!(csv_field(&text, "past_term"), 0.0);
}

#[test]
fn price_single_atom() {
    let out = sfde(&["price"], &configs().join("single_atom.json"));
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!((csv_field(&text, "total") - 49.5216).abs() < 1e-4);
    assert!((csv_field(&text, "lambda0") - 0.00980486099872661).abs() < 1e-15);
    // every number carries 17 significant digits
    let row = text.lines().nth(1).unwrap();
    assert!(row.split(',').all(|c| c.split('e').next().unwrap().trim_start_matches('-').len() == 18));
}

#[test]
fn gate_failure_exits_2_with_report() {
    let out = sfde(&["price"], &configs().join("gate_violation.json"));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("K = -8.522277e-3"), "{}", stderr(&out));
    assert!(stdout(&out).is_empty());
}

#[test]
fn schema_errors_exit_3_with_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let base = std::fs::read_to_string(configs().join("single_atom.json")).unwrap();
    let cases = [
        (base.replace(r#""mass": 0.02"#, r#""mass": "big""#), "/income/phi/atoms/0/mass"),
        (base.replace(r#""schema_version": 1"#, r#""schema_version": 7"#), "/schema_version"),
        (base.replace(r#""loc": -1.0"#, r#""loc": -3.0"#), "/income/phi"),
        (base.replace(r#""r": 0.03"#, r#""rate": 0.03"#), "/market"),
        (base.replace(r#""dt": 0.01"#, r#""dt": 0.3"#), "/history"),
    ];
    for (text, pointer) in cases {
        let out = sfde(&["price"], &write_config(dir.path(), &text));
        assert_eq!(out.status.code(), Some(3), "{pointer}: {}", stderr(&out));
        assert!(stderr(&out).contains(&format!("schema error at {pointer}")), "{}", stderr(&out));
    }
    let out = sfde(&["mean-path", "--dt=-1"], &configs().join("single_atom.json"));
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("/options/dt"));
}

#[test]
fn mc_check_reports_estimate_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("paths.csv");
    let out = sfde(
        &["mc-check", "--paths", "2000", "--dt", "0.05", "--dump", dump.to_str().unwrap(), "--dump-paths", "3"],
        &configs().join("single_atom.json"),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let est = &v["estimate"];
    for key in ["value", "std_error", "n_paths", "T", "tail_bound"] {
        assert!(est.get(key).is_some(), "missing {key}");
    }
    assert!(v["z"].as_f64().unwrap().abs() < 4.0);
    assert!(est["tail_bound"].as_f64().unwrap() <= 0.1 * est["std_error"].as_f64().unwrap());

    let text = std::fs::read_to_string(&dump).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("path,t,X0,xi"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "0");
    assert_eq!(first[3].parse::<f64>().unwrap(), 1.0);
    let paths: std::collections::BTreeSet<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(paths.len(), 3);
}

#[test]
fn truncated_horizon_breaches_z_limit() {
    // one year of income is far from the lifetime value
    let out = sfde(
        &["mc-check", "--paths", "200", "--dt", "0.05", "--horizon", "1"],
        &configs().join("single_atom.json"),
    );
    assert_eq!(out.status.code(), Some(4));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["z"].as_f64().unwrap() < -4.0);
}

#[test]
fn spectrum_flags_the_root() {
    let out = sfde(&["spectrum", "--lambda=-0.05,0.0,0.05"], &configs().join("single_atom.json"));
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0] && w[1][1] > w[0][1]));
    let root: Vec<_> = rows.iter().filter(|r| r[2] == 1.0).collect();
    assert_eq!(root.len(), 1);
    assert!(root[0][1].abs() < 1e-15);
}

#[test]
fn mean_path_and_laplace_check() {
    let cfg = configs().join("single_atom.json");
    let out = sfde(&["mean-path", "--horizon", "2"], &cfg);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("t,M0\n"));
    assert_eq!(text.lines().count(), 1 + 201);

    let out = sfde(&["laplace-check", "--lambda", "0.04", "--dt", "0.001", "--horizon", "400"], &cfg);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["gap"].as_f64().unwrap().abs() < 1e-3);

    let out = sfde(&["laplace-check", "--lambda", "0.001"], &cfg);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("diverges"));
}

#[test]
fn history_from_csv_file() {
    let out = sfde(&["price"], &configs().join("two_assets_density.json"));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(csv_field(&stdout(&out), "total") > 0.0);
}

#[test]
fn output_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("price.csv");
    let out = sfde(&["price", "--output", target.to_str().unwrap()], &configs().join("no_delay.json"));
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let direct = sfde(&["price"], &configs().join("no_delay.json"));
    assert_eq!(std::fs::read(&target).unwrap(), direct.stdout);
}
