use std::fs;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_telesync");

const CONFIG: &str = r#"
output_dir = "ignored-because-of-env"
variants = ["asac"]
seeds = [1]
total_env_steps = 300

[[delays]]
action_delay_ms = 30
obs_delay_min_ms = 0
obs_delay_max_ms = 20

[sac]
hidden = [8, 8]
warmup_steps = 100
batch_size = 16
"#;

#[test]
fn train_then_eval_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let status = Command::new(BIN)
        .args(["train", "--config", cfg.to_str().unwrap(), "--steps", "200"])
        .env("TELESYNC_OUT", &out)
        .status()
        .unwrap();
    assert!(status.success());
    let log = fs::read_to_string(out.join("logs").join("asac_30-50ms_seed1.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4);
    let ckpt = out.join("checkpoints").join("asac_30-50ms_seed1.ckpt");
    let traj = dir.path().join("traj.csv");
    let o = Command::new(BIN)
        .args(["eval", "--checkpoint", ckpt.to_str().unwrap(), "--episodes", "3", "--out"])
        .arg(&traj)
        .output()
        .unwrap();
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("best episode"), "{stdout}");
    assert_eq!(fs::read_to_string(&traj).unwrap().lines().count(), 1 + 3 * 50);
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seeds = []\n").unwrap();
    let o = Command::new(BIN)
        .args(["train", "--config", cfg.to_str().unwrap()])
        .env("TELESYNC_OUT", dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeds"));
    assert!(!dir.path().join("out").exists());
}
