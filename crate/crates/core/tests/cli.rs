use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn invshadow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invshadow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn run_ok(args: &[&str]) -> String {
    let out = invshadow(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn orbit_writes_frames() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "flow = \"torus-irr\"\nbase = [0.0, 0.0]\nn = 10\n");
    let out = dir.path().join("run");
    let stdout = run_ok(&["orbit", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("21 frames"), "{stdout}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("frames.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["frames"].as_array().unwrap().len(), 21);
}

#[test]
fn probe_is_bit_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "flow = \"torus-ms\"\nbase = [0.0, 0.1]\nn_list = [5, 10]\ntrials = 3\nseed = 17\n",
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["probe", "--config", &cfg, "--out", a.to_str().unwrap()]);
    run_ok(&["probe", "--config", &cfg, "--out", b.to_str().unwrap()]);
    for f in ["growth.csv", "growth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.join("growth.csv")).unwrap();
    assert!(csv.starts_with("N,trial,sup_norm\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
}

#[test]
fn replay_is_bit_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        r#"flow = "plane-shear"
base = [0.0, 0.3]
n = 3
d = 1e-2
kappa = 1
r = 0.1
l_sweep = [3.0]

[shadow]
max_evals = 60
samples_per_unit = 8
min_step = 0.01
"#,
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["replay", "--config", &cfg, "--out", a.to_str().unwrap()]);
    run_ok(&["replay", "--config", &cfg, "--out", b.to_str().unwrap()]);
    assert_eq!(fs::read(a.join("replay.json")).unwrap(), fs::read(b.join("replay.json")).unwrap());
}

#[test]
fn seed_flag_satisfies_random_trials() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "flow = \"torus-ms\"\nbase = [0.0, 0.0]\nn_list = [4, 8]\ntrials = 2\n");
    let out = dir.path().join("run");
    let fail = invshadow(&["probe", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!fail.status.success());
    assert!(String::from_utf8_lossy(&fail.stderr).contains("seed"));
    run_ok(&["probe", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3"]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("growth.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 3);
}

#[test]
fn bad_configs_are_diagnosed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();

    let cfg = write(dir.path(), "a.toml", "flow = \"torus-ms\"\nbase = [0.0, 0.0]\nn = 3\nkapa = 1\n");
    let r = invshadow(&["orbit", "--config", &cfg, "--out", out]);
    let err = String::from_utf8_lossy(&r.stderr).into_owned();
    assert!(!r.status.success() && err.contains("line 4") && err.contains("kapa"), "{err}");

    let cfg = write(dir.path(), "b.toml", "flow = \"sphere\"\nbase = [0.0, 0.0]\nn = 3\n");
    let r = invshadow(&["orbit", "--config", &cfg, "--out", out]);
    assert!(String::from_utf8_lossy(&r.stderr).contains("sphere"));

    let r = invshadow(&["orbit", "--config", "/nonexistent/x.toml", "--out", out]);
    assert!(String::from_utf8_lossy(&r.stderr).contains("/nonexistent/x.toml"));
}

#[test]
fn out_falls_back_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from_config");
    let cfg = write(
        dir.path(),
        "c.toml",
        &format!(
            "flow = \"plane-shear\"\nbase = [0.0, 0.0]\nn = 2\nout = {:?}\n",
            target.to_str().unwrap()
        ),
    );
    run_ok(&["orbit", "--config", &cfg]);
    assert!(target.join("frames.json").exists());
}
