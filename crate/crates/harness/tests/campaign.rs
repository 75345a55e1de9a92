use std::fs;
use std::path::Path;

use telesync_core::{DelaySettings, Variant};
use telesync_harness::bench::{bench_prediction_methods, calls_per_episode, write_outputs};
use telesync_harness::campaign::{mean, median, read_log_csv, run_campaign, std_dev, CampaignSummary};
use telesync_harness::trajectories::dump_trajectories;
use telesync_harness::{BenchMethod, ExperimentConfig};

fn small(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        output_dir: out.to_path_buf(),
        variants: Variant::ALL.to_vec(),
        seeds: vec![0, 1, 2],
        total_env_steps: 400,
        delays: vec![DelaySettings {
            action_delay_ms: 40,
            obs_delay_min_ms: 10,
            obs_delay_max_ms: 30,
            delay_seed: 2,
        }],
        ..ExperimentConfig::default()
    };
    cfg.sac.hidden = vec![16, 16];
    cfg.sac.warmup_steps = 100;
    cfg.sac.batch_size = 32;
    cfg.model.hidden = vec![16, 16];
    cfg.model.batch_size = 32;
    cfg.model.updates_per_episode = 2;
    cfg
}

fn files(dir: &Path, ext: &str) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(ext))
        .collect();
    v.sort();
    v
}

/// CSV text with the wall-clock column removed.
fn without_wallclock(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let skip = header.iter().position(|h| *h == "wallclock_ns").unwrap();
    text.lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, c)| c)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn grid_outputs_are_complete_and_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let summary = run_campaign(&small(a.path()), 2).unwrap();
    run_campaign(&small(b.path()), 1).unwrap();

    let logs = files(&a.path().join("logs"), ".csv");
    assert_eq!(logs.len(), 9);
    assert_eq!(files(&a.path().join("checkpoints"), ".ckpt").len(), 9);
    assert_eq!(files(a.path(), ".json"), ["summary.json"]);
    assert_eq!(summary.entries.len(), 3);

    let header = fs::read_to_string(a.path().join("logs").join(&logs[0])).unwrap();
    assert_eq!(
        header.lines().next().unwrap(),
        "episode,env_step,variant,seed,mean_reward,model_loss,ensemble_variance,wallclock_ns,ensemble_calls"
    );
    for name in &logs {
        let (pa, pb) = (a.path().join("logs").join(name), b.path().join("logs").join(name));
        assert_eq!(without_wallclock(&pa), without_wallclock(&pb), "{name}");
    }

    // recompute the summary from the raw logs
    let on_disk: CampaignSummary =
        serde_json::from_str(&fs::read_to_string(a.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(on_disk, summary);
    for e in &on_disk.entries {
        let finals: Vec<f64> = e
            .seeds
            .iter()
            .map(|s| {
                let stem = format!("{}_{}_seed{s}.csv", serde_json::to_value(e.variant).unwrap().as_str().unwrap(), e.delay_label);
                read_log_csv(&a.path().join("logs").join(stem)).unwrap().last().unwrap().mean_reward
            })
            .collect();
        assert_eq!(finals, e.final_mean_rewards);
        assert_eq!(mean(&finals).to_bits(), e.mean.to_bits());
        assert_eq!(std_dev(&finals).to_bits(), e.std.to_bits());
        assert_eq!(median(&finals).to_bits(), e.median.to_bits());
    }
}

#[test]
fn single_run_smoke_at_ten_thousand_steps() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.variants = vec![Variant::Sac];
    cfg.seeds = vec![4];
    cfg.total_env_steps = 10_000;
    cfg.sac.batch_size = 16;
    let summary = run_campaign(&cfg, 1).unwrap();
    assert_eq!(files(&dir.path().join("logs"), ".csv").len(), 1);
    assert_eq!(files(dir.path(), ".json").len(), 1);
    let log = read_log_csv(&dir.path().join("logs").join("sac_50-70ms_seed4.csv")).unwrap();
    assert_eq!(log.len(), 200);
    assert_eq!(log.last().unwrap().env_step, 10_000);
    assert_eq!(summary.entries[0].std, 0.0);
}

#[test]
fn invalid_configs_fail_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let mut cfg = small(&out);
    cfg.variants.clear();
    assert!(run_campaign(&cfg, 1).is_err());
    let mut cfg = small(&out);
    cfg.delays[0].obs_delay_max_ms = 55;
    assert!(run_campaign(&cfg, 1).is_err());
    assert!(!out.exists());

    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    assert!(run_campaign(&small(&blocker), 1).is_err());
}

#[test]
fn bench_rows_obey_call_count_law() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.bench.total_env_steps = 150;
    cfg.bench.runs = 2;
    cfg.bench.action_delays_ms = vec![80, 160];
    let rows = bench_prediction_methods(&cfg, |_| {}).unwrap();
    assert_eq!(rows.len(), 2 * 4 * 2);
    for r in &rows {
        let m = BenchMethod::parse(&r.method).unwrap();
        assert_eq!(r.episodes, 3);
        assert_eq!(r.ensemble_calls, 3 * calls_per_episode(m, r.alpha, 50), "{r:?}");
        assert!(r.law_holds());
    }
    write_outputs(dir.path(), &rows).unwrap();
    let table = fs::read_to_string(dir.path().join("bench_table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "metric,action_delay_ms,ABSP,SBSP,A-SAC,SAC");
    assert_eq!(table.lines().count(), 1 + 2 * 2);
    let long = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(long.lines().count(), 1 + rows.len());
}

#[test]
fn trajectory_dump_has_one_block_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.variants = vec![Variant::Pmdc];
    cfg.seeds = vec![0];
    run_campaign(&cfg, 1).unwrap();
    let ckpt = dir.path().join("checkpoints").join("pmdc_50-70ms_seed0.ckpt");
    let out = dir.path().join("traj.csv");
    let report = dump_trajectories(&ckpt, 10, 3, &out).unwrap();
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    let episodes: Vec<u64> = rdr
        .records()
        .map(|r| r.unwrap()[0].parse().unwrap())
        .collect();
    let mut blocks = episodes.clone();
    blocks.dedup();
    assert_eq!(blocks, (0..10).collect::<Vec<_>>());
    assert_eq!(episodes.len(), 10 * 50);
    let best = report.episodes.iter().map(|e| e.mean_reward).fold(f64::MIN, f64::max);
    assert_eq!(report.episodes[report.best].mean_reward, best);
}
