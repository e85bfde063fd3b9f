use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pathspace"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn list_has_at_least_twelve_builtins() {
    let o = run(&["list"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().count() >= 12);
    assert!(stdout(&o).contains("ou-contraction"));
}

#[test]
fn describe_cites_the_theorem_and_rejects_unknown_checks() {
    let o = run(&["describe", "check_talagrand"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("Theorem 5.2(3)"));
    let o = run(&["describe", "check_everything"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown check"));
}

#[test]
fn ou_contraction_passes_with_positive_margin() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let o = run(&["run", "ou-contraction", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let r = read_json(&out);
    assert_eq!(r["pass"], true);
    let items = r["checks"][0]["items"].as_array().unwrap();
    let terminal = items.iter().find(|i| i["name"] == "terminal W_p").unwrap();
    assert!(terminal["margin"].as_f64().unwrap() > 0.0);
    assert_eq!(r["checks"][0]["theorem"], "Theorem 5.2(6)");
}

#[test]
fn horizon_violation_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        r#"
name = "too-long"
[flow]
name = "conformal-euclid"
params = { d = 1, rate = -0.5 }
[run]
t_end = 3.0
steps = 20
paths = 100
seed = 1
[start]
x0 = [0.0]
[[check]]
op = "check_contraction"
"#,
    )
    .unwrap();
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.t_end"), "{}", stderr(&o));
}

#[test]
fn unknown_check_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let src = pathspace::scenarios::builtin_source("smoke").unwrap().replace("\"cocycle_check\"", "\"cocycle\"");
    std::fs::write(&cfg, src).unwrap();
    let o = run(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 23"), "{}", stderr(&o));
}

#[test]
fn missing_file_is_a_config_error() {
    let o = run(&["run", "/nonexistent/scenario.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn smoke_run_is_fast_and_reports_every_check_once() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let trace = dir.path().join("t.csv");
    let t0 = std::time::Instant::now();
    let o = run(&["run", "smoke", "--out", out.to_str().unwrap(), "--trace", trace.to_str().unwrap()]);
    assert!(t0.elapsed().as_secs_f64() < 5.0);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let r = read_json(&out);
    let ops: Vec<&str> = r["checks"].as_array().unwrap().iter().map(|c| c["op"].as_str().unwrap()).collect();
    let requested: Vec<&str> = r["config"]["check"].as_array().unwrap().iter().map(|c| c["op"].as_str().unwrap()).collect();
    assert_eq!(ops, requested);
    // With 100 paths the Girsanov-weighted estimators are noisy.
    let bel = &r["checks"][3]["items"][0];
    assert!(bel["se"].as_f64().unwrap() > 0.01);
    let csv = std::fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("scenario,check,s_k,value,se\n"));
    assert!(csv.lines().count() > 50);
}

#[test]
fn reports_are_identical_across_reruns_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for (i, w) in ["1", "1", "4", "8"].iter().enumerate() {
        let out = dir.path().join(format!("r{i}.json"));
        let o = run(&["run", "smoke", "--workers", w, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        let mut v = read_json(&out);
        assert_eq!(v["timing"]["workers"].as_u64().unwrap().to_string(), *w);
        v.as_object_mut().unwrap().remove("timing");
        reports.push(serde_json::to_string(&v).unwrap());
    }
    assert!(reports.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn overrides_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    run(&["run", "smoke", "--out", a.to_str().unwrap()]);
    run(&["run", "smoke", "--seed", "99", "--paths", "150", "--steps", "20", "--out", b.to_str().unwrap()]);
    let (a, b) = (read_json(&a), read_json(&b));
    assert_eq!(b["rng"]["seed"], 99);
    assert_eq!(b["config"]["run"]["paths"], 150);
    assert_eq!(b["config"]["run"]["steps"], 20);
    assert_ne!(a["checks"], b["checks"]);
}

#[test]
fn failing_and_erroring_checks_set_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let base = pathspace::scenarios::builtin_source("ou-q-closed-form").unwrap().replace("steps = 10000", "steps = 100");
    let fail = dir.path().join("fail.toml");
    std::fs::write(&fail, base.replace("rate = 1.0", "rate = 2.0")).unwrap();
    assert_eq!(run(&["run", fail.to_str().unwrap()]).status.code(), Some(1));

    // A runtime error in one check does not stop the next one.
    let mixed = dir.path().join("mixed.toml");
    let out = dir.path().join("mixed.json");
    std::fs::write(
        &mixed,
        r#"
name = "mixed"
[flow]
name = "disk-exterior"
[run]
t_end = 0.1
steps = 10
paths = 100
seed = 3
[start]
x0 = [2.0, 0.0]
y0 = [0.0, 2.0]
[[check]]
op = "check_contraction"
[[check]]
op = "q_norm_bound"
"#,
    )
    .unwrap();
    let o = run(&["run", mixed.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let r = read_json(&out);
    assert!(r["checks"][0]["error"].as_str().unwrap().contains("non-convex"));
    assert_eq!(r["checks"][0]["pass"], false);
    assert!(r["checks"][1]["error"].is_null());
    assert_eq!(r["errors"], 1);
}
