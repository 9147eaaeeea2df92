use std::path::Path;
use std::process::{Command, Output};

fn kimflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kimflow")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn list_presets() {
    let out = kimflow(&["--list-presets"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["shift_l2_d1", "scale_l2", "mixture_linf", "theta_mixture", "constants"] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
}

#[test]
fn passing_run_exits_zero_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = kimflow(&["theta_check", "--preset", "theta_gaussian", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("theta_check: pass"));
    let json = std::fs::read_to_string(dir.path().join("theta_check.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["experiment"], "theta_check");
    assert_eq!(v["pass"], true);
    assert!(dir.path().join("theta_check.csv").exists());
}

#[test]
fn seed_override_lands_in_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = kimflow(&["fi_decay", "--preset", "shift_decay", "--seed", "42", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(0));
    let json = std::fs::read_to_string(dir.path().join("fi_decay.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["provenance"]["seed"], 42);
}

#[test]
fn violated_bound_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // an α far above the true convexity makes the claimed bound 100× too small
    let cfg = write_config(
        dir.path(),
        "tight.toml",
        r#"
n = 500
mu = { family = "standard_gaussian", dim = 1 }
nu = { family = "gaussian", mean = [1.0], cov = 1.0 }
profile = { kind = "slc", alpha = 100.0 }
flow = { steps = 100 }
"#,
    );
    let out = kimflow(&["stability_l2", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("VIOLATION"));
}

#[test]
fn errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.toml", "mu = { family = \"standard_gaussian\", dimm = 1 }\n");
    let out = kimflow(&["theta_check", "--config", &bad]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("mu"));

    // preset for a different experiment
    assert_eq!(kimflow(&["stability_l2", "--preset", "theta_gaussian"]).status.code(), Some(1));
    assert_eq!(kimflow(&["stability_l2", "--preset", "no_such_preset"]).status.code(), Some(1));
    assert_eq!(kimflow(&["stability_l2", "--config", "/nonexistent.toml"]).status.code(), Some(1));
    // usage errors
    assert_eq!(kimflow(&["stability_l2"]).status.code(), Some(1));
    assert_eq!(kimflow(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(kimflow(&[]).status.code(), Some(1));
    assert_eq!(kimflow(&["--help"]).status.code(), Some(0));
}
