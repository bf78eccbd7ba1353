use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwtraffic")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path.display().to_string()
}

const SMALL: &str = r#"{"ensemble": {"n": 60, "psi": ["1/3", "1/3", "1/3"]}, "graph": {"preset": "moment-1"},
    "labels": {"h": "h3"}, "trials": 4, "seed": 3}"#;

#[test]
fn simulate_writes_reproducible_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for (out, threads) in [(&a, "1"), (&b, "2")] {
        let o = run(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let strip = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("wall_clock_seconds");
        v["config"].as_object_mut().unwrap().remove("threads");
        v
    };
    let (va, vb) = (strip(&a), strip(&b));
    assert_eq!(va, vb);
    assert_eq!(va["records"][0]["exact"], "5/9");
    assert_eq!(va["config"]["graphs"][0]["edges"].as_array().unwrap().len(), 2);
}

#[test]
fn limit_csv_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let o = run(&["limit", "--config", &cfg, "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("quantity,graph,component,estimate"));
    assert!(text.lines().any(|l| l.starts_with("limit_equivalent_sum,0,") && l.contains("5/9")));
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.json");
    assert_eq!(run(&["simulate", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
    let bad = write_config(dir.path(), "bad.json", r#"{"ensemble": {"sizes": [2, 2, 2]}, "graph": {"preset": "moment-1"}}"#);
    let o = run(&["simulate", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("undefined label"));
    let zero = write_config(dir.path(), "zero.json", &SMALL.replace("\"trials\": 4", "\"trials\": 0"));
    assert_eq!(run(&["simulate", "--config", &zero]).status.code(), Some(2));
    let big = write_config(
        dir.path(),
        "big.json",
        r#"{"ensemble": {"sizes": [1, 4001, 1]}, "labels": {"h": "h1"}}"#,
    );
    assert_eq!(run(&["spectrum", "--config", &big, "--histograms", "x"]).status.code(), Some(2));
    assert_eq!(run(&["simulate"]).status.code(), Some(2));
}

#[test]
fn spectrum_histograms_next_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let out = dir.path().join("spec.json");
    let o = run(&["spectrum", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for suffix in ["pw", "equivalent"] {
        let text = std::fs::read_to_string(dir.path().join(format!("spec_{suffix}.csv"))).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("bin_left,count"));
        let total: usize = lines.map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 20);
    }
}

#[test]
fn decompose_dumps_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("dump");
    let json = format!(
        r#"{{"ensemble": {{"sizes": [5, 4, 3]}}, "labels": {{"h": "h5"}}, "decompose": {{"dump_dir": {:?}}}}}"#,
        dump.display().to_string()
    );
    let cfg = write_config(dir.path(), "c.json", &json);
    let o = run(&["decompose", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["decomposition"][0]["reassembly_residual"].as_f64().unwrap() < 1e-10);
    let m = pw_traffic::models::read_matrix_binary(&dump.join("h_eps.bin")).unwrap();
    assert_eq!(m.shape(), (4, 3));
}
