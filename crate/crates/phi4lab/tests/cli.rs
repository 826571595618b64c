use std::path::Path;
use std::process::{Command, Output};

fn phi4lab(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_phi4lab"));
    c.args(args).env_remove("PHI4LAB_SEED");
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn manifest(dir: &Path, cmd: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join(format!("{cmd}.manifest.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn flags_override_config_file() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    std::fs::write(&cfg, "kappa = 2.0\nnu = 0.2\nseed = 9\n").unwrap();
    let out = d.path().join("out");
    let o = phi4lab(&["green", "--config", cfg.to_str().unwrap(), "--kappa", "1.5", "--out", out.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out, "green");
    assert_eq!(m["config"]["kappa"], 1.5);
    assert_eq!(m["config"]["nu"], 0.2);
    assert_eq!(m["seed"], 9);
    assert_eq!(m["seed_source"], "config");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["passed"], true);
}

#[test]
fn invalid_configs_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.toml");
    std::fs::write(&cfg, "kapa = 1.0\n").unwrap();
    let o = phi4lab(&["green", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kapa"));
    let out = d.path().join("o");
    assert_eq!(phi4lab(&["counterterms", "--eps-list", "0.1", "--out", out.to_str().unwrap()], &[]).status.code(), Some(2));
    assert_eq!(phi4lab(&["green", "--kappa", "-1", "--out", out.to_str().unwrap()], &[]).status.code(), Some(2));
    assert_eq!(phi4lab(&["green", "--out", out.to_str().unwrap()], &[("PHI4LAB_SEED", "abc")]).status.code(), Some(2));
    assert_eq!(phi4lab(&["frobnicate"], &[]).status.code(), Some(2));
}

#[test]
fn failed_assertion_exits_1() {
    let d = tempfile::tempdir().unwrap();
    // three samples cannot reproduce the covariance
    let o = phi4lab(&["sample", "--n", "4", "--samples", "3", "--out", d.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(manifest(d.path(), "sample")["passed"], false);
}

#[test]
fn env_seed_is_recorded_and_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for sub in ["a", "b"] {
        let out = d.path().join(sub);
        let o = phi4lab(&["sample", "--n", "4", "--samples", "500", "--workers", "1", "--out", out.to_str().unwrap()], &[("PHI4LAB_SEED", "31")]);
        assert_eq!(o.status.code(), Some(0));
        let m = manifest(&out, "sample");
        assert_eq!(m["seed"], 31);
        assert_eq!(m["seed_source"], "env");
        bodies.push(std::fs::read(out.join("sample.csv")).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
    let text = String::from_utf8(bodies[0].clone()).unwrap();
    assert!(text.lines().take(3).all(|l| l.starts_with('#')));
    assert_eq!(text.lines().nth(3).unwrap(), "pair,dx1,dx2,empirical,stderr,exact,z");
}
