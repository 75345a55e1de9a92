use std::path::Path;

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use telesync_core::nn::{EnsembleModel, Transition};
use telesync_core::pipeline::ControlLoop;
use telesync_core::rl::{map_gains, to_transition, ModelConfig};
use telesync_core::{DelaySteps, SimConfig, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    pub env_step: u64,
    pub model_updates: u64,
    pub variance: f64,
}

/// Transitions from undelayed episodes driven by random PD gains.
pub fn collect_transitions(sim: &SimConfig, episodes: usize, seed: u64) -> Result<Vec<Transition>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctl = ControlLoop::new(sim.clone(), DelaySteps::new(0, 0, 0), Variant::Sac)?;
    let mut out = Vec::with_capacity(episodes * sim.episode_length);
    for _ in 0..episodes {
        ctl.reset(rng.random(), None)?;
        while !ctl.episode_done() {
            let gains = map_gains([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], sim);
            ctl.observe(None)?;
            ctl.act(gains, None)?;
        }
        out.extend(ctl.drain_samples().iter().map(to_transition));
    }
    Ok(out)
}

/// Mean ensemble variance on a fixed held-out batch while the model trains on
/// the usual per-episode schedule. One point at step 0, then one per
/// `every` episodes.
pub fn variance_trace(sim: &SimConfig, model: &ModelConfig, seed: u64, env_steps: u64, every: usize) -> Result<Vec<VariancePoint>> {
    let held_out: Vec<(Vec<f64>, Vec<f64>)> = collect_transitions(sim, 6, seed ^ 0xD0_0D)?
        .into_iter()
        .take(256)
        .map(|t| (t.state, t.action))
        .collect();
    let episodes = env_steps.div_ceil(sim.episode_length as u64) as usize;
    let data = collect_transitions(sim, episodes, seed)?;
    let mut ens = EnsembleModel::new(model.ensemble_config(sim), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut points = vec![VariancePoint {
        env_step: 0,
        model_updates: 0,
        variance: ens.mean_variance(&held_out)?,
    }];
    let per_episode = data.len() / episodes.max(1);
    for ep in 1..=episodes {
        let seen = &data[..ep * per_episode];
        for _ in 0..model.updates_per_episode {
            let batch: Vec<Transition> = (0..model.batch_size)
                .map(|_| seen[rng.random_range(0..seen.len())].clone())
                .collect();
            ens.train(&batch)?;
        }
        if ep % every.max(1) == 0 || ep == episodes {
            points.push(VariancePoint {
                env_step: (ep * sim.episode_length) as u64,
                model_updates: ens.train_steps(),
                variance: ens.mean_variance(&held_out)?,
            });
        }
    }
    Ok(points)
}

pub fn write_trace(path: &Path, points: &[VariancePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transitions_per_episode() {
        let sim = SimConfig::default();
        let t = collect_transitions(&sim, 2, 5).unwrap();
        assert_eq!(t.len(), 2 * sim.episode_length);
        assert!(t.iter().all(|x| x.state[6..9] == x.next_state[6..9]));
    }

    #[test]
    fn trace_shape() {
        let model = ModelConfig {
            hidden: vec![8],
            batch_size: 16,
            updates_per_episode: 2,
            ..ModelConfig::default()
        };
        let pts = variance_trace(&SimConfig::default(), &model, 1, 200, 2).unwrap();
        let steps: Vec<u64> = pts.iter().map(|p| p.env_step).collect();
        assert_eq!(steps, [0, 100, 200]);
        assert_eq!(pts[2].model_updates, 8);
        assert!(pts.iter().all(|p| p.variance.is_finite() && p.variance >= 0.0));
    }
}
