use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use telesync_core::rl::{train_variant, EpisodeLog, PolicyBundle};
use telesync_core::{DelaySettings, PredictorKind, Variant};

use crate::config::ExperimentConfig;

/// One training run of a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub variant: Variant,
    pub delays: DelaySettings,
    pub seed: u64,
}

impl RunSpec {
    pub fn stem(&self) -> String {
        let v = serde_json::to_value(self.variant).ok();
        let v = v.as_ref().and_then(|v| v.as_str()).unwrap_or("run");
        format!("{v}_{}_seed{}", self.delays.label(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub delay_label: String,
    pub seed: u64,
    pub log_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub final_mean_reward: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub variant: Variant,
    pub predictor: PredictorKind,
    pub delays: DelaySettings,
    pub delay_label: String,
    pub seeds: Vec<u64>,
    pub final_mean_rewards: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub total_env_steps: u64,
    pub entries: Vec<SummaryEntry>,
}

impl CampaignSummary {
    pub fn entry(&self, variant: Variant, delay_label: &str) -> Option<&SummaryEntry> {
        self.entries
            .iter()
            .find(|e| e.variant == variant && e.delay_label == delay_label)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for a single value.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn logs_dir(out: &Path) -> PathBuf {
    out.join("logs")
}

pub fn checkpoints_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

pub fn summary_path(out: &Path) -> PathBuf {
    out.join("summary.json")
}

/// Creates the output tree and proves it is writable.
pub fn prepare_output(out: &Path) -> Result<()> {
    for d in [logs_dir(out), checkpoints_dir(out)] {
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
    }
    let probe = out.join(".write-probe");
    fs::write(&probe, b"").with_context(|| format!("output directory {} is not writable", out.display()))?;
    fs::remove_file(&probe)?;
    Ok(())
}

pub fn plan(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for &variant in &cfg.variants {
        for delays in &cfg.delays {
            for &seed in &cfg.seeds {
                specs.push(RunSpec {
                    variant,
                    delays: *delays,
                    seed,
                });
            }
        }
    }
    specs
}

pub fn write_log_csv(path: &Path, log: &[EpisodeLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log_csv(path: &Path) -> Result<Vec<EpisodeLog>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<EpisodeLog>, _>>()?;
    Ok(rows)
}

pub fn run_one(cfg: &ExperimentConfig, spec: &RunSpec, out: &Path) -> Result<RunResult> {
    let steps = cfg.delays_steps(&spec.delays)?;
    let tc = cfg.train_config(spec.variant, steps, spec.seed, cfg.total_env_steps);
    let run = train_variant(&tc).with_context(|| format!("training {}", spec.stem()))?;
    let log_path = logs_dir(out).join(format!("{}.csv", spec.stem()));
    write_log_csv(&log_path, &run.log)?;
    let final_mean_reward = run.final_mean_reward();
    let episodes = run.log.len();
    let checkpoint_path = checkpoints_dir(out).join(format!("{}.ckpt", spec.stem()));
    PolicyBundle::from_run(run).save(&checkpoint_path)?;
    Ok(RunResult {
        variant: spec.variant,
        delay_label: spec.delays.label(),
        seed: spec.seed,
        log_path,
        checkpoint_path,
        final_mean_reward,
        episodes,
    })
}

/// Groups run results per (variant, delay setting), in plan order.
pub fn summarize(cfg: &ExperimentConfig, results: &[RunResult]) -> CampaignSummary {
    let mut entries = Vec::new();
    for &variant in &cfg.variants {
        for delays in &cfg.delays {
            let label = delays.label();
            let runs: Vec<&RunResult> = results
                .iter()
                .filter(|r| r.variant == variant && r.delay_label == label)
                .collect();
            if runs.is_empty() {
                continue;
            }
            let finals: Vec<f64> = runs.iter().map(|r| r.final_mean_reward).collect();
            entries.push(SummaryEntry {
                variant,
                predictor: cfg.predictor,
                delays: *delays,
                delay_label: label,
                seeds: runs.iter().map(|r| r.seed).collect(),
                mean: mean(&finals),
                std: std_dev(&finals),
                median: median(&finals),
                final_mean_rewards: finals,
            });
        }
    }
    CampaignSummary {
        total_env_steps: cfg.total_env_steps,
        entries,
    }
}

/// Trains every (variant, delay, seed) combination on worker threads and
/// writes logs, checkpoints and `summary.json` under the output directory.
pub fn run_campaign(cfg: &ExperimentConfig, workers: usize) -> Result<CampaignSummary> {
    cfg.validate()?;
    let out = cfg.output_dir();
    prepare_output(&out)?;
    let specs = plan(cfg);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunResult>>>> = Mutex::new((0..specs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, specs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(spec) = specs.get(i) else { break };
                let r = run_one(cfg, spec, &out);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    let mut results = Vec::with_capacity(specs.len());
    for (spec, slot) in specs.iter().zip(slots.into_inner().expect("result slots poisoned")) {
        match slot {
            Some(r) => results.push(r?),
            None => bail!("run {} never completed", spec.stem()),
        }
    }
    let summary = summarize(cfg, &results);
    let path = summary_path(&out);
    fs::write(&path, serde_json::to_string_pretty(&summary)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(summary)
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
