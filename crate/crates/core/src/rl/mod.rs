//! Soft actor-critic gain scheduler and the training loops around it.

pub mod bundle;
pub mod replay;
pub mod sac;
pub mod train;

pub use bundle::{PolicyBundle, RunMeta};
pub use replay::{Batch, ReplayBuffer};
pub use sac::{ActionMode, SacAgent, SacConfig, UpdateStats};
pub use train::{evaluate, to_transition, train_variant, train_variant_with, EpisodeLog, EvalEpisode, ModelConfig, TrainConfig, TrainingRun, TrajectoryStep};

use crate::sim::{PDGains, SimConfig};

/// Squashed policy output and the PD gains it maps to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainAction {
    pub raw: [f64; 2],
    pub gains: PDGains,
}

impl GainAction {
    pub fn from_raw(raw: [f64; 2], sim: &SimConfig) -> Self {
        Self {
            raw,
            gains: map_gains(raw, sim),
        }
    }
}

/// Affine map from `[-1, 1]^2` onto `[0, kp_max] x [0, kd_max]`.
pub fn map_gains(raw: [f64; 2], sim: &SimConfig) -> PDGains {
    let r0 = raw[0].clamp(-1.0, 1.0);
    let r1 = raw[1].clamp(-1.0, 1.0);
    PDGains::new(sim.kp_max * (r0 + 1.0) / 2.0, sim.kd_max * (r1 + 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gain_map_endpoints() {
        let sim = SimConfig::default();
        assert_eq!(map_gains([0.0, 0.0], &sim), PDGains::new(25.0, 5.0));
        assert_eq!(map_gains([1.0, -1.0], &sim), PDGains::new(50.0, 0.0));
        let near = map_gains([1.0 - 1e-12, -1.0 + 1e-12], &sim);
        assert!((near.kp - 50.0).abs() < 1e-9 && near.kd.abs() < 1e-9);
        // the scripted expert's gains are reachable
        let expert = map_gains([0.0, 0.6], &sim);
        assert!((expert.kp - 25.0).abs() < 1e-12 && (expert.kd - 8.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn gain_map_is_monotone_and_bounded(a in -1.0..=1.0f64, b in -1.0..=1.0f64, da in 0.0..1.0f64) {
            let sim = SimConfig::default();
            let g = map_gains([a, b], &sim);
            prop_assert!((0.0..=sim.kp_max).contains(&g.kp));
            prop_assert!((0.0..=sim.kd_max).contains(&g.kd));
            let h = map_gains([(a + da).min(1.0), b], &sim);
            prop_assert!(h.kp >= g.kp);
        }

        #[test]
        fn gain_map_is_surjective(kp in 0.0..=50.0f64, kd in 0.0..=10.0f64) {
            let sim = SimConfig::default();
            let raw = [2.0 * kp / sim.kp_max - 1.0, 2.0 * kd / sim.kd_max - 1.0];
            let g = map_gains(raw, &sim);
            prop_assert!((g.kp - kp).abs() < 1e-9 && (g.kd - kd).abs() < 1e-9);
        }
    }
}
