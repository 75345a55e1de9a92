use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use telesync_core::rl::train_variant;

use crate::config::{BenchMethod, ExperimentConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub action_delay_ms: u64,
    pub alpha: usize,
    pub obs_delay_min_ms: u64,
    pub obs_delay_max_ms: u64,
    pub run: usize,
    pub seed: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub wallclock_ns: u64,
    pub model_ns: u64,
    pub ensemble_calls: u64,
    pub expected_calls: u64,
}

impl BenchRow {
    pub fn law_holds(&self) -> bool {
        self.ensemble_calls == self.expected_calls
    }
}

/// Ensemble calls per episode for a method at action delay `alpha`.
pub fn calls_per_episode(method: BenchMethod, alpha: usize, episode_length: usize) -> u64 {
    (match method {
        BenchMethod::Sbsp => alpha + episode_length,
        BenchMethod::Absp => alpha * episode_length,
        BenchMethod::ASac | BenchMethod::Sac => 0,
    }) as u64
}

/// Trains every configured method at every bench delay, serially so timings
/// do not interfere.
pub fn bench_prediction_methods(cfg: &ExperimentConfig, mut on_row: impl FnMut(&BenchRow)) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let methods = cfg
        .bench
        .methods
        .iter()
        .map(|m| BenchMethod::parse(m))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &ms in &cfg.bench.action_delays_ms {
        let settings = cfg.bench_delay(ms)?;
        let steps = cfg.delays_steps(&settings)?;
        for &method in &methods {
            let (variant, predictor) = method.variant();
            for run in 0..cfg.bench.runs {
                let seed = run as u64;
                let mut tc = cfg.train_config(variant, steps, seed, cfg.bench.total_env_steps);
                tc.predictor = predictor;
                let result = train_variant(&tc).with_context(|| format!("bench {} at {ms} ms", method.label()))?;
                let last = result.log.last().expect("at least one episode");
                let episodes = result.log.len() as u64;
                let row = BenchRow {
                    method: method.label().into(),
                    action_delay_ms: ms,
                    alpha: steps.action,
                    obs_delay_min_ms: settings.obs_delay_min_ms,
                    obs_delay_max_ms: settings.obs_delay_max_ms,
                    run,
                    seed,
                    env_steps: last.env_step,
                    episodes,
                    wallclock_ns: last.wallclock_ns,
                    model_ns: result.prediction.wall_ns,
                    ensemble_calls: result.prediction.calls,
                    expected_calls: episodes * calls_per_episode(method, steps.action, cfg.sim.episode_length),
                };
                on_row(&row);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

pub fn write_rows(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Run-averaged seconds per (delay, method): one row per delay and metric,
/// one column per method.
pub fn pivot(rows: &[BenchRow]) -> Vec<Vec<String>> {
    let order = ["ABSP", "SBSP", "A-SAC", "SAC"];
    let mut header = vec!["metric".to_string(), "action_delay_ms".to_string()];
    header.extend(order.iter().map(|s| s.to_string()));
    let mut delays: Vec<u64> = rows.iter().map(|r| r.action_delay_ms).collect();
    delays.dedup();
    let mut out = vec![header];
    for metric in ["wallclock_s", "model_s"] {
        for &d in &delays {
            let mut line = vec![metric.to_string(), d.to_string()];
            for m in order {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.action_delay_ms == d && r.method == m)
                    .map(|r| if metric == "wallclock_s" { r.wallclock_ns } else { r.model_ns } as f64 * 1e-9)
                    .collect();
                line.push(if vals.is_empty() {
                    String::new()
                } else {
                    format!("{:.3}", vals.iter().sum::<f64>() / vals.len() as f64)
                });
            }
            out.push(line);
        }
    }
    out
}

pub fn write_outputs(out: &Path, rows: &[BenchRow]) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_rows(&out.join("bench.csv"), rows)?;
    let mut w = csv::Writer::from_path(out.join("bench_table.csv"))?;
    for line in pivot(rows) {
        w.write_record(&line)?;
    }
    w.flush()?;
    Ok(())
}
