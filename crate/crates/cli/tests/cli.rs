use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use voltreach::config::RunConfig;
use voltreach::neural::{load_checkpoint, Trainer};
use voltreach::oracle::toy_env;

fn voltreach(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voltreach"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_TOY: &str = r#"
seed = 9

[td3]
hidden = [16, 16]
batch_size = 32
start_steps = 50
buffer_capacity = 2000

[train]
env = "toy"
eval_every = 100
eval_episodes = 20
checkpoint_every = 0

[dp]
n_z = 101
"#;

#[test]
fn reference_simulation_exits_with_instability() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = voltreach(&["simulate", "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let events = fs::read_to_string(out.join("events.csv")).unwrap();
    let mut lines = events.lines();
    assert_eq!(lines.next(), Some("time,event"));
    let labels: Vec<&str> = lines.map(|l| l.split(',').nth(1).unwrap()).collect();
    let pos = |p: &str| labels.iter().position(|l| l.starts_with(p)).unwrap_or_else(|| panic!("{p} missing: {labels:?}"));
    assert!(pos("trip") < pos("tap") && pos("tap") < pos("oxl") && pos("oxl") < pos("instability"));
    assert!(labels.last().unwrap().starts_with("instability"));
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.lines().count() > 100);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn undisturbed_simulation_succeeds_with_empty_event_log() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[scenario]\ndisturbance = false\nhorizon_s = 120.0\n");
    let out = tmp.path().join("sim");
    let o = voltreach(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(out.join("events.csv")).unwrap(), "time,event\n");
    // The saved effective configuration reproduces the run's settings.
    let saved = RunConfig::load(&out.join("config.toml")).unwrap();
    assert!(saved.scenario.disturbance.is_none());
}

#[test]
fn malformed_config_leaves_no_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    for (i, text) in ["[td3\ngamma = 0.5", "[td3]\nlearning_rate = 1.0\n", "[td3]\ngamma = 2.0\n"]
        .iter()
        .enumerate()
    {
        let cfg = write_config(tmp.path(), text);
        let out = tmp.path().join(format!("out{i}"));
        let o = voltreach(&["train", "--config", s(&cfg), "--out", s(&out)]);
        assert_eq!(code(&o), 1);
        assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
        assert!(!out.exists(), "{text}");
    }
    let o = voltreach(&["simulate", "--config", "/nonexistent/run.toml", "--out", s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 1);
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&voltreach(&["frobnicate"])), 2);
    assert_eq!(code(&voltreach(&["train", "--steps", "many"])), 2);
}

#[test]
fn zero_step_training_writes_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), SMALL_TOY);
    let out = tmp.path().join("t0");
    let o = voltreach(&["train", "--config", s(&cfg_path), "--steps", "0", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (ens, meta) = load_checkpoint(fs::read(out.join("checkpoint.txt")).unwrap().as_slice()).unwrap();
    assert_eq!(meta.env_steps, 0);
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let env = toy_env(cfg.toy.clone(), cfg.toy.tau_max, true).unwrap();
    let fresh = Trainer::new(env, cfg.td3.clone(), cfg.seed).unwrap();
    assert_eq!(ens, fresh.ensemble);
    assert_eq!(fs::read_to_string(out.join("learning_curve.csv")).unwrap().lines().count(), 1);
    assert!(out.join("oracle_report.json").exists());
}

#[test]
fn resumed_training_matches_a_straight_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_TOY);
    let (straight, first, second) = (tmp.path().join("a"), tmp.path().join("b1"), tmp.path().join("b2"));
    let run = |extra: &[&str], out: &Path| {
        let mut args = vec!["train", "--config", s(&cfg), "--out", s(out)];
        args.extend_from_slice(extra);
        let o = voltreach(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["--steps", "400"], &straight);
    run(&["--steps", "200"], &first);
    run(&["--steps", "400", "--resume", s(&first)], &second);
    for f in ["checkpoint.txt", "trainer_state.txt", "learning_curve.csv"] {
        assert_eq!(
            fs::read(straight.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f} differs"
        );
    }
    // A different learner configuration refuses to resume.
    let other = write_config(tmp.path(), &SMALL_TOY.replace("batch_size = 32", "batch_size = 16"));
    let o = voltreach(&["train", "--config", s(&other), "--steps", "400", "--resume", s(&first), "--out", s(&tmp.path().join("c"))]);
    assert_eq!(code(&o), 1);
    // So does a directory without a checkpoint.
    let o = voltreach(&["train", "--config", s(&cfg), "--resume", s(tmp.path()), "--out", s(&tmp.path().join("d"))]);
    assert_eq!(code(&o), 1);
    assert!(!tmp.path().join("d").exists());
}

#[test]
fn empty_surface_grid_gives_header_only_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[evaluate]\ntaus = []\n");
    let out = tmp.path().join("ev");
    let o = voltreach(&["evaluate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("surface_baseline.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("tau,"));
}

#[test]
fn corrupted_checkpoint_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_TOY);
    let run = tmp.path().join("run");
    let o = voltreach(&["train", "--config", s(&cfg), "--steps", "100", "--out", s(&run)]);
    assert_eq!(code(&o), 0);
    let ckpt = run.join("checkpoint.txt");
    let text = fs::read_to_string(&ckpt).unwrap();
    // Flip one digit of a weight.
    let pos = text.rfind(|c: char| c.is_ascii_digit()).unwrap();
    let mut bytes = text.into_bytes();
    bytes[pos] = if bytes[pos] == b'1' { b'2' } else { b'1' };
    fs::write(&ckpt, bytes).unwrap();
    let o = voltreach(&["validate", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&tmp.path().join("v"))]);
    assert_eq!(code(&o), 4);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL checkpoint_integrity"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("v/validation.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn reruns_reproduce_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[mc]\nepisodes = 20\n[episode]\nhorizon_s = 120.0\n");
    let manifests: Vec<serde_json::Value> = ["a", "b"]
        .iter()
        .map(|d| {
            let out = tmp.path().join(d);
            let o = voltreach(&["mc", "--config", s(&cfg), "--seed", "5", "--out", s(&out)]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
        })
        .collect();
    assert_eq!(manifests[0]["artifacts"], manifests[1]["artifacts"]);
    assert_eq!(manifests[0]["config_hash"], manifests[1]["config_hash"]);
    assert_eq!(manifests[0]["seed"], 5);
    let listed: Vec<&str> = manifests[0]["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["path"].as_str().unwrap())
        .collect();
    assert!(listed.contains(&"mc.json") && listed.contains(&"config.toml"));
}
