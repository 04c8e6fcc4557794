use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_limitclass"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    (status.code().unwrap(), String::from_utf8(stdout).unwrap(), String::from_utf8(stderr).unwrap())
}

fn report(path: &std::path::Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn classify_p1_writes_report_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (out, trace) = (dir.path().join("r.json"), dir.path().join("t.csv"));
    let (code, stdout, _) = run(bin().arg("classify").arg(fixture("p1.json")).arg("--out").arg(&out).arg("--trace").arg(&trace));
    assert_eq!(code, 0, "{stdout}");
    let r = report(&out);
    assert_eq!(r["n_plus"], 1);
    assert_eq!(r["n_minus"], 1);
    assert_eq!(r["det_rank"], 0);
    assert_eq!(r["limit_point"], true);
    assert_eq!(r["consistent"], true);
    let keys: Vec<&str> = r.as_object().unwrap().keys().map(String::as_str).collect();
    for k in [
        "name", "order", "parity", "n_plus", "n_minus", "det_rank", "quotient_dim", "limit_case", "limit_point",
        "consistent", "diagnostics", "tolerances", "seed",
    ] {
        assert!(keys.contains(&k), "missing {k}");
    }
    let csv = std::fs::read_to_string(&trace).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "x,log10_gram_eig_1_plus,log10_gram_eig_2_plus,log10_gram_eig_1_minus,log10_gram_eig_2_minus,det_1,det_2"
    );
    assert_eq!(lines.count(), 64);
}

#[test]
fn classify_p2_is_limit_circle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let (code, stdout, _) = run(bin().arg("classify").arg(fixture("p2.json")).arg("--out").arg(&out));
    assert_eq!(code, 0, "{stdout}");
    let r = report(&out);
    assert_eq!(r["det_rank"], 2);
    assert_eq!(r["quotient_dim"], 4);
    assert_eq!(r["limit_case"], "(2, 2)");
}

#[test]
fn malformed_config_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let (code, _, stderr) = run(bin().arg("classify").arg(fixture("malformed_order3.json")).arg("--out").arg(&out));
    assert_eq!(code, 1);
    assert!(stderr.contains("length rule"), "{stderr}");
    assert!(stderr.contains("/s"), "{stderr}");
    assert!(!out.exists());
}

#[test]
fn missing_config_is_input_error() {
    let (code, _, stderr) = run(bin().args(["classify", "/nonexistent/c.json", "--out", "/tmp/never.json"]));
    assert_eq!(code, 1);
    assert!(stderr.starts_with("error:"));
}

#[test]
fn unresolved_run_exits_two_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.json");
    std::fs::write(&cfg, r#"{"name":"short","order":2,"s":["-(1+x)^4","1"],"x_max":3}"#).unwrap();
    let out = dir.path().join("r.json");
    let (code, _, _) = run(bin().arg("classify").arg(&cfg).arg("--out").arg(&out));
    assert_eq!(code, 2);
    let r = report(&out);
    assert_eq!(r["consistent"], false);
    assert!(!r["diagnostics"]["flags"].as_array().unwrap().is_empty());
}

#[test]
fn bracket_p1_at_origin() {
    let (code, stdout, _) = run(bin().arg("bracket").arg(fixture("p1.json")).args(["--x", "0"]));
    assert_eq!(code, 0);
    let rows: Vec<Vec<f64>> =
        stdout.lines().take(2).map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect()).collect();
    assert_eq!(rows, vec![vec![0.0, 0.0, -1.0, 0.0], vec![1.0, 0.0, 0.0, 0.0]]);
    assert!(stdout.contains("|det B| = 1.0000000000000000e0"));
}

#[test]
fn bracket_p3_is_constant() {
    let (_, a, _) = run(bin().arg("bracket").arg(fixture("p3.json")).args(["--x", "0.5"]));
    let (_, b, _) = run(bin().arg("bracket").arg(fixture("p3.json")).args(["--x", "17"]));
    assert_eq!(a, b);
    let first: Vec<f64> = a.lines().next().unwrap().split_whitespace().map(|t| t.parse().unwrap()).collect();
    // row 0 of [[0,0,-i],[0,i,0],[-i,0,0]]
    assert_eq!(first, vec![0.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
}

#[test]
fn bracket_left_of_origin_rejected() {
    let (code, _, stderr) = run(bin().arg("bracket").arg(fixture("p1.json")).args(["--x", "-1"]));
    assert_eq!(code, 1);
    assert!(stderr.contains("origin"));
}

#[test]
fn verify_orders_pass() {
    let (code, stdout, _) = run(bin().args(["verify", "--order", "2", "--trials", "100"]));
    assert_eq!(code, 0, "{stdout}");
    assert_eq!(stdout.matches("PASS").count(), 5);
    let (code, stdout, _) = run(bin().args(["verify", "--order", "5", "--trials", "50", "--seed", "9"]));
    assert_eq!(code, 0, "{stdout}");
}

#[test]
fn verify_zero_trials_warns() {
    let (code, _, stderr) = run(bin().args(["verify", "--order", "4", "--trials", "0"]));
    assert_eq!(code, 0);
    assert!(stderr.contains("warning"));
}

#[test]
fn reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        let (code, _, _) = run(bin().arg("classify").arg(fixture("p3.json")).arg("--out").arg(out));
        assert_eq!(code, 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}
