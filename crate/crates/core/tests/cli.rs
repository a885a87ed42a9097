use std::path::Path;
use std::process::{Command, Output};

use mflqg::cli::{sha256_hex, LAW_FILE, MANIFEST};
use mflqg::model::DEMO_CONFIG;
use serde_json::Value;

fn mflqg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mflqg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("demo.json"), DEMO_CONFIG).unwrap();
    dir
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn validate_accepts_demo() {
    let dir = workspace();
    let out = mflqg(dir.path(), &["validate", "demo.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

#[test]
fn validate_lists_problems() {
    let dir = workspace();
    let mut config: Value = serde_json::from_str(DEMO_CONFIG).unwrap();
    config["R"] = serde_json::json!([[1.0, 0.5], [0.0, 1.0]]);
    config["B"] = serde_json::json!([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    std::fs::write(dir.path().join("bad.json"), config.to_string()).unwrap();
    let out = mflqg(dir.path(), &["validate", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 2, "{text}");
}

#[test]
fn malformed_config_is_invalid_input() {
    let dir = workspace();
    std::fs::write(dir.path().join("broken.json"), "{ \"n\": 2, ").unwrap();
    let out = mflqg(dir.path(), &["solve", "broken.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error: config"), "{}", stderr(&out));
}

#[test]
fn lost_regularity_is_a_numerical_failure() {
    let dir = workspace();
    let mut config: Value = serde_json::from_str(DEMO_CONFIG).unwrap();
    config["R"] = serde_json::json!([[-1.0, 0.0], [0.0, -1.0]]);
    config["D"] = serde_json::json!([[0.0, 0.0], [0.0, 0.0]]);
    std::fs::write(dir.path().join("neg.json"), config.to_string()).unwrap();
    let out = mflqg(dir.path(), &["solve", "neg.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("regularity lost"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_one() {
    let dir = workspace();
    assert_eq!(mflqg(dir.path(), &["solve"]).status.code(), Some(1));
    assert_eq!(mflqg(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(mflqg(dir.path(), &["--help"]).status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_mflqg"))
        .args(["validate", "demo.json"])
        .current_dir(dir.path())
        .env("MFLQG_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn convexity_reports_each_criterion() {
    let dir = workspace();
    let out = mflqg(dir.path(), &["convexity", "demo.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let verdicts = report["verdicts"].as_array().unwrap();
    assert_eq!(verdicts.len(), 2);
    assert_eq!(report["status"], "uniformly_convex");
}

#[test]
fn simulate_records_the_law_it_used() {
    let dir = workspace();
    let out = mflqg(dir.path(), &["solve", "demo.json", "--out", "solved"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let law_hash = sha256_hex(&std::fs::read(dir.path().join("solved").join(LAW_FILE)).unwrap());
    assert_eq!(json(&dir.path().join("solved").join(MANIFEST))["law_hash"], law_hash);

    let args = ["simulate", "demo.json", "--law", "solved", "--N", "5", "--paths", "2", "--seed", "9", "--out", "sim"];
    let out = mflqg(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let sim = dir.path().join("sim");
    let manifest = json(&sim.join(MANIFEST));
    assert_eq!(manifest["law_hash"], law_hash);
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["N"], 5);

    let costs = std::fs::read_to_string(sim.join("costs.csv")).unwrap();
    let header: Vec<&str> = costs.lines().next().unwrap().split(',').collect();
    assert_eq!(header, ["path", "J_soc", "J_1", "J_2", "J_3", "J_4", "J_5"]);
    assert_eq!(costs.lines().count(), 3);
    let trajectories = std::fs::read_to_string(sim.join("trajectories.csv")).unwrap();
    assert_eq!(trajectories.lines().next(), Some("path,t,agent,x_1,x_2"));
    assert_eq!(trajectories.lines().count(), 1 + 2 * 1001 * 5);
}

#[test]
fn simulate_rejects_a_law_on_another_grid() {
    let dir = workspace();
    assert_eq!(mflqg(dir.path(), &["solve", "demo.json", "--out", "solved"]).status.code(), Some(0));
    let mut config: Value = serde_json::from_str(DEMO_CONFIG).unwrap();
    config["steps"] = serde_json::json!(500);
    std::fs::write(dir.path().join("coarse.json"), config.to_string()).unwrap();
    let args = ["simulate", "coarse.json", "--law", "solved", "--N", "3", "--paths", "2", "--seed", "1", "--out", "s"];
    assert_eq!(mflqg(dir.path(), &args).status.code(), Some(1));
}

/// Pinned regression values for the bundled two-dimensional instance.
#[test]
fn repro_outputs_and_golden_values() {
    let dir = workspace();
    let out = mflqg(dir.path(), &["repro-sec7", "--out", "repro", "--reps", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let repro = dir.path().join("repro");

    let trajectories = std::fs::read_to_string(repro.join("trajectories.csv")).unwrap();
    assert_eq!(trajectories.lines().next(), Some("t,xhat_1,xhat_2,xavg_1,xavg_2"));
    assert_eq!(trajectories.lines().count(), 1 + 1001);
    let convergence = std::fs::read_to_string(repro.join("convergence.csv")).unwrap();
    assert_eq!(
        convergence.lines().next(),
        Some("N,reps,estimate,std_error,agent_estimate,agent_std_error")
    );
    let populations: Vec<&str> = convergence.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(populations, ["50", "100", "200", "400", "800"]);

    let summary = json(&repro.join("summary.json"));
    assert_eq!(summary["trajectory_N"], 1000);
    let sup = summary["sup_distance"].as_f64().unwrap();
    assert!((sup - 0.06077858377614981).abs() < 1e-9 * sup, "sup_distance {sup}");
    let slope = summary["slope"].as_f64().unwrap();
    assert!((slope + 1.3046442150611177).abs() < 1e-9, "slope {slope}");

    let first: Vec<f64> = trajectories.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert!((first[1] - 0.1627).abs() < 1e-12 && (first[2] - 0.657).abs() < 1e-12);
}
