use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adgnn")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

const TINY_TRAIN: &str = r#""train": {"epochs": 3, "seeds": [0, 1]}"#;
const TINY_DATA: &str = r#""data": {"csbm": {"n_per_class": 30, "mean_degree": 4.0}}"#;

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_2() {
    let out = adgnn(&["explode"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn missing_config_names_the_path() {
    let out = adgnn(&["sweep-depth", "--config", "/no/such/dir/depth.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/dir/depth.json"));
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"lambdas": [2.0]}"#);
    assert_eq!(adgnn(&["sweep-lambda", "--config", &cfg]).status.code(), Some(2));
    let cfg = write_config(dir.path(), "typo.json", r#"{"lamdas": [0.0]}"#);
    assert_eq!(adgnn(&["sweep-lambda", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"data": {"dataset": "/no/such/dataset"}, "lambdas": [0.0]}"#,
    );
    assert_eq!(adgnn(&["sweep-lambda", "--config", &cfg]).status.code(), Some(1));
}

#[test]
fn generate_writes_the_dataset_container() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "csbm.json", r#"{"n_per_class": 20, "mean_degree": 3.0}"#);
    let data = dir.path().join("data");
    let out = adgnn(&["generate", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["edges.txt", "features.csv", "labels.csv", "meta.json"] {
        assert!(data.join(f).exists(), "{f}");
    }
    assert_eq!(fs::read_to_string(data.join("labels.csv")).unwrap().lines().count(), 40);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("nodes=40"), "{stderr}");

    // the written dataset feeds the other commands
    let t = write_config(
        dir.path(),
        "t.json",
        &format!(r#"{{"data": {{"dataset": {:?}}}, {TINY_TRAIN}}}"#, data.to_str().unwrap()),
    );
    let res = dir.path().join("run.json");
    let out = adgnn(&["train", "--config", &t, "--format", "json", "--out", res.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&res).unwrap()).unwrap();
    assert_eq!(v["per_seed"].as_array().unwrap().len(), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("loaded"));
}

/// Golden headers and row counts of every table-producing command.
#[test]
fn driver_headers_and_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<(&str, String, &str, usize)> = vec![
        (
            "theory-validate",
            r#"{"num_profiles": 3, "trials": 2000}"#.into(),
            "d_plus,d_minus,degree,alpha,analytic_signal,mc_signal,analytic_noise,mc_noise,rel_err_signal,rel_err_noise",
            3,
        ),
        (
            "sweep-homophily",
            format!(r#"{{"csbm": {{"n_per_class": 30}}, "homophily": [0.0, 1.0], {TINY_TRAIN}}}"#),
            "h,acc_mean,acc_std",
            2,
        ),
        (
            "sweep-degree-threshold",
            format!(r#"{{{TINY_DATA}, "thresholds": [0, 2, 4], {TINY_TRAIN}}}"#),
            "threshold,acc_mean,acc_std",
            3,
        ),
        (
            "sweep-depth",
            format!(r#"{{{TINY_DATA}, "depths": [1, 2, 4], {TINY_TRAIN}}}"#),
            "depth,model,acc_mean,acc_std",
            6,
        ),
        (
            "sweep-lambda",
            format!(r#"{{{TINY_DATA}, "lambdas": [0.0, 0.5], {TINY_TRAIN}}}"#),
            "lambda,acc_mean,acc_std",
            2,
        ),
        (
            "profile-depth-benefit",
            format!(r#"{{{TINY_DATA}}}"#),
            "degree,mean_log_benefit,node_count",
            usize::MAX,
        ),
        (
            "compare-heuristics",
            format!(r#"{{{TINY_DATA}, {TINY_TRAIN}}}"#),
            "heuristic,acc_mean,acc_std,score_compute_ms",
            7,
        ),
    ];
    for (cmd, json, expected, n_rows) in cases {
        let cfg = write_config(dir.path(), &format!("{cmd}.json"), &json);
        let out_path = dir.path().join(format!("{cmd}.csv"));
        let out = adgnn(&[cmd, "--config", &cfg, "--out", out_path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(header(&out_path), expected, "{cmd}");
        if n_rows != usize::MAX {
            assert_eq!(rows(&out_path), n_rows, "{cmd}");
        } else {
            assert!(rows(&out_path) > 0);
        }
    }
}

#[test]
fn json_format_and_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.json", r#"{"num_profiles": 2, "trials": 1000}"#);
    let out = adgnn(&["theory-validate", "--config", &cfg, "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert!(v[0]["alpha"].is_number());
}

#[test]
fn seeds_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.json", &format!(r#"{{{TINY_DATA}, {TINY_TRAIN}}}"#));
    let out = adgnn(&["train", "--config", &cfg, "--seeds", "4,5,6"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let seeds: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(seeds, ["4", "5", "6"]);
}
