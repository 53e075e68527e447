use std::path::Path;
use std::process::{Command, Output};

fn netcon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netcon")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn check_robots_a1_passes() {
    let out = netcon(&["check", "robots", "--variant", "a=1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn check_all_builtins_passes() {
    let out = netcon(&["check", "--all"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn unknown_scenario_is_input_error() {
    assert_eq!(code(&netcon(&["simulate", "nosuch"])), 2);
    assert_eq!(code(&netcon(&["check", "robots", "--variant", "a=7"])), 2);
    assert_eq!(code(&netcon(&["frobnicate"])), 2);
}

#[test]
fn predicted_velocity_matches_simulated_limit() {
    let pred = stdout_json(&netcon(&["predict", "satellites"]));
    assert_eq!(pred["prediction"]["quantity"], "v*");
    let v_star = pred["prediction"]["value"].as_f64().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = netcon(&["simulate", "satellites", "--out", out_dir]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("satellites.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect();
    for i in 1..=5 {
        let col = header.iter().position(|h| *h == format!("v{i}")).unwrap();
        assert!((last[col] - v_star).abs() < 1e-3, "v{i} = {} vs {v_star}", last[col]);
    }
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("satellites.json")).unwrap()).unwrap();
    assert_eq!(sidecar["status"]["status"], "converged");
}

#[test]
fn simulate_overrides_and_power_output() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = netcon(&["simulate", "robots", "--variant", "a=20", "--out", out_dir, "--t-end", "2", "--h", "0.05"]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(dir.path().join("robots_a_20.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2,x3,x4,x5,v1,"));
    let last_t: f64 = csv.lines().last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((last_t - 2.0).abs() < 1e-12);

    let out = netcon(&["simulate", "power6", "--variant", "centralized,b=0.8", "--out", out_dir, "--samples", "11"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("power6_centralized_b_0.8.csv")).unwrap();
    assert!(csv.lines().next().unwrap().ends_with(",omega_hat"));
    assert_eq!(csv.lines().count(), 12);
    assert_eq!(code(&netcon(&["simulate", "power6", "--out", out_dir, "--h", "1"])), 2);
}

#[test]
fn stability_report_json() {
    let report = stdout_json(&netcon(&["stability", "robots", "--variant", "a=15"]));
    assert_eq!(report["report"]["classification"], "marginal");
    assert_eq!(report["report"]["boundary"], 15.0);
    let report = stdout_json(&netcon(&["stability", "power6"]));
    assert_eq!(report["report"]["classification"], "hurwitz");
    assert_eq!(code(&netcon(&["stability", "building"])), 2);
}

#[test]
fn power_steady_state_from_file() {
    let dir = tempfile::tempdir().unwrap();
    // (I + L) z = (1 - 1, 1 - 0) for unit coupling gives z = (1/3, 2/3).
    let omega_hz = 1.0 / (2.0 * std::f64::consts::PI);
    let net = write(dir.path(), "two.csv", "#buses\nbus,m,d,p_m,v_mag\n1,1,1,1,1\n2,1,1,0,1\n#lines\ni,j,susceptance\n1,2,1\n");
    let out = netcon(&["power", "steady-state", &net, "--a", "1", "--b", "1", "--omega-ref", &omega_hz.to_string()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let z: Vec<f64> = v["z0"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((z[0] - 1.0 / 3.0).abs() < 1e-12 && (z[1] - 2.0 / 3.0).abs() < 1e-12, "{z:?}");
    assert_eq!(v["classification"], "hurwitz");

    let bad = write(dir.path(), "bad.csv", "#buses\nbus,p_m\n1,0\n2,0\n3,0\n#lines\ni,j,susceptance\n1,2,1\n");
    assert_eq!(code(&netcon(&["power", "steady-state", &bad, "--a", "1", "--b", "1"])), 2);
    assert_eq!(code(&netcon(&["power", "steady-state", "sample", "--a", "1", "--b", "0"])), 2);
}

#[test]
fn failed_assertion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
        "version": 1,
        "name": "unstable-robots",
        "model": {
            "type": "consensus",
            "graph": {"n": 5, "edges": [[1, 2], [2, 3], [3, 4], [4, 5]]},
            "protocol": {"kind": "pi_double", "a": 20.0, "b": 5.0, "gamma": 3.0},
            "x0": [5.0, -6.0, 8.0, 4.0, 5.0],
            "run": {"t_end": 200.0, "h": 0.01, "record_every": 50}
        },
        "expect": [{"check": "converged"}]
    }"#;
    let path = write(dir.path(), "unstable.json", cfg);
    let out = netcon(&["check", &path]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("FAIL unstable-robots converged"));
}

#[test]
fn numerical_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    // e^800 overflows on the first evaluation.
    let cfg = r#"{
        "version": 1,
        "name": "overflow",
        "model": {
            "type": "consensus",
            "graph": {"n": 2, "edges": [[1, 2]]},
            "protocol": {"kind": "first_order", "gains": {"family": "constant", "params": {"c": 1.0}},
                         "a": {"family": "exp_sgn", "params": {"k": 1.0}}},
            "x0": [0.0, 800.0],
            "run": {"t_end": 1.0, "h": 0.01, "record_every": 1}
        }
    }"#;
    let path = write(dir.path(), "overflow.json", cfg);
    let out_dir = dir.path().join("out");
    assert_eq!(code(&netcon(&["simulate", &path, "--out", out_dir.to_str().unwrap()])), 3);
}

#[test]
fn validate_reports_and_rejects() {
    let out = netcon(&["validate", "satellites"]);
    assert_eq!(code(&out), 0);
    let reports = stdout_json(&out);
    assert_eq!(reports[0]["gains"].as_array().unwrap().len(), 5);
    assert_eq!(reports[0]["interactions"].as_array().unwrap().len(), 8);

    let dir = tempfile::tempdir().unwrap();
    let wrong_version = write(dir.path(), "v9.json", r#"{"version": 9, "name": "x"}"#);
    assert_eq!(code(&netcon(&["validate", &wrong_version])), 2);
    let not_json = write(dir.path(), "junk.json", "{");
    assert_eq!(code(&netcon(&["validate", &not_json])), 2);

    // An even interaction breaks the oddness assumption: reported, exit 1.
    let cfg = r#"{
        "version": 1,
        "name": "even",
        "model": {
            "type": "consensus",
            "graph": {"n": 2, "edges": [[1, 2]]},
            "protocol": {"kind": "first_order", "gains": {"family": "constant", "params": {"c": 1.0}},
                         "a": {"family": "constant", "params": {"c": 1.0}}},
            "x0": [0.0, 1.0],
            "run": {"t_end": 1.0, "h": 0.01, "record_every": 1}
        }
    }"#;
    let path = write(dir.path(), "even.json", cfg);
    let out = netcon(&["validate", &path]);
    assert_eq!(code(&out), 1);
    assert_eq!(stdout_json(&out)[0]["ok"], false);
}
