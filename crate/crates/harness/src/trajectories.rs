use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use telesync_core::rl::{evaluate, EvalEpisode, PolicyBundle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct Row {
    episode: usize,
    step: u64,
    local_x: f64,
    local_y: f64,
    local_z: f64,
    remote_x: f64,
    remote_y: f64,
    remote_z: f64,
    view_x: f64,
    view_y: f64,
    view_z: f64,
    error: f64,
    kp: f64,
    kd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReport {
    pub episodes: Vec<EvalEpisode>,
    pub best: usize,
}

impl TrajectoryReport {
    pub fn mean_tracking_error(&self) -> f64 {
        self.episodes.iter().map(EvalEpisode::mean_tracking_error).sum::<f64>() / self.episodes.len() as f64
    }
}

/// Index of the episode with the highest mean reward.
pub fn best_episode(episodes: &[EvalEpisode]) -> usize {
    episodes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.mean_reward.total_cmp(&b.1.mean_reward))
        .map_or(0, |(i, _)| i)
}

pub fn rollout(bundle: &PolicyBundle, n_episodes: usize, seed: u64) -> Result<TrajectoryReport> {
    let mut agent = bundle.agent.clone();
    let m = &bundle.meta;
    let episodes = evaluate(
        &mut agent,
        bundle.model.as_ref(),
        &m.sim,
        m.delays,
        m.variant,
        m.predictor,
        n_episodes,
        seed,
    )?;
    let best = best_episode(&episodes);
    Ok(TrajectoryReport { episodes, best })
}

pub fn write_trajectories(path: &Path, report: &TrajectoryReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for ep in &report.episodes {
        for s in &ep.steps {
            w.serialize(Row {
                episode: ep.index,
                step: s.step,
                local_x: s.local[0],
                local_y: s.local[1],
                local_z: s.local[2],
                remote_x: s.remote[0],
                remote_y: s.remote[1],
                remote_z: s.remote[2],
                view_x: s.delayed_view[0],
                view_y: s.delayed_view[1],
                view_z: s.delayed_view[2],
                error: s.error,
                kp: s.kp,
                kd: s.kd,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Evaluates a checkpoint and writes one CSV block per episode.
pub fn dump_trajectories(checkpoint: &Path, n_episodes: usize, seed: u64, out: &Path) -> Result<TrajectoryReport> {
    let bundle = PolicyBundle::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let report = rollout(&bundle, n_episodes, seed)?;
    write_trajectories(out, &report)?;
    Ok(report)
}
