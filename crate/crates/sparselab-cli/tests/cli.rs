use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, config: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sparselab"));
    cmd.args(args).arg("--out").arg(dir);
    if let Some(text) = config {
        let path = dir.join("config.json");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn lattice_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), Some(r#"{"space": {"kind": "grid", "n": 8}, "shifts": 3}"#), &["lattice"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&dir.path().join("lattice.json"));
    assert_eq!(doc["cubes"].as_array().unwrap().len(), 15);
    assert_eq!(doc["systems"].as_array().unwrap().len(), 3);
    assert!(doc["c_adj"].as_f64().unwrap() >= 1.0);
    let csv = fs::read_to_string(dir.path().join("lattice.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
    assert!(csv.starts_with("id,k,mu_q,mu_e"));
}

#[test]
fn bad_schema_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), Some(r#"{"space": {"kind": "grid", "n": 8}, "shfits": 3}"#), &["lattice"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shfits"));
    assert!(!dir.path().join("lattice.json").exists());
}

#[test]
fn constants_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), None, &["constants"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("constants.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let value: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((value - 1.0).abs() < 1e-12, "{line}");
    }
    let step = r#"{"weights": ["step"], "exponents": {"m": 1, "p": [2], "q": 2, "eta": 0}, "constants": ["a_p", "a_pq"]}"#;
    let out = run(dir.path(), Some(step), &["constants"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("constants.csv")).unwrap();
    // top cube: ⟨ω⟩⟨ω⁻¹⟩ = (3/2)(3/4); μ⁻¹‖ω‖₂‖ω⁻¹‖₂ = √40·√10/16
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    for (row, want) in rows.iter().zip([("a_p", 1.125), ("a_pq", 1.25)]) {
        assert_eq!((row[0], row[2]), (want.0, "0"));
        assert!((row[1].parse::<f64>().unwrap() - want.1).abs() < 1e-12, "{row:?}");
    }
    let out = run(dir.path(), Some(r#"{"constants": ["a_q"]}"#), &["constants"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dominate_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let zero = r#"{"functions": ["zero"], "symbols": ["gaussian:1"], "k": [1]}"#;
    let out = run(dir.path(), Some(zero), &["dominate"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = json(&dir.path().join("certificate.json"));
    assert!(doc["families"].as_array().unwrap().iter().all(|f| f["cubes"].as_array().unwrap().is_empty()));

    let deep = r#"{"space": {"kind": "grid", "n": 2}, "functions": ["const", "const"], "symbols": ["step", "power:1"], "k": [3, 3], "max_depth": 0}"#;
    let out = run(dir.path(), Some(deep), &["dominate", "--audit"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&dir.path().join("certificate.json"))["truncated"], Value::Bool(true));
    assert_eq!(fs::read_to_string(dir.path().join("certificate_points.csv")).unwrap().lines().count(), 3);

    let seeded = r#"{"functions": ["gaussian:1", "gaussian:2"], "symbols": ["gaussian:3", "gaussian:4"], "k": [2, 1], "eta": 0.5, "dilation": 2}"#;
    let out = run(dir.path(), Some(seeded), &["dominate", "--seed", "21"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&dir.path().join("certificate.json"))["pass"], Value::Bool(true));
}

#[test]
fn verify_exit_codes_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), Some(r#"{"checks": []}"#), &["verify"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), None, &["verify", "no_such_check"]).status.code(), Some(2));
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let args = |p: &Path| vec!["verify".to_string(), "--seed".into(), "3".into(), "--report".into(), p.display().to_string()];
    let one: Vec<String> = args(&a).into_iter().chain(["--threads".into(), "1".into()]).collect();
    let many: Vec<String> = args(&b).into_iter().chain(["--threads".into(), "4".into()]).collect();
    assert_eq!(run(dir.path(), None, &one.iter().map(String::as_str).collect::<Vec<_>>()).status.code(), Some(0));
    assert_eq!(run(dir.path(), None, &many.iter().map(String::as_str).collect::<Vec<_>>()).status.code(), Some(0));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let doc = json(&a);
    assert_eq!(doc["schema"], "sparselab-report/1");
    assert_eq!(doc["reports"].as_array().unwrap().len(), 13);
}

#[test]
fn bench_rows_grow_with_n() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), Some(r#"{"bench_sizes": [256, 16, 64]}"#), &["bench", "--reps", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let ns: Vec<usize> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ns.len(), 6);
    assert!(ns.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*ns.last().unwrap(), 256);
}
