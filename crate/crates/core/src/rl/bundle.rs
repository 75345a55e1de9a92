use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sac::{SacAgent, SacConfig};
use super::train::{ModelConfig, TrainingRun};
use crate::delay::DelaySteps;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, EnsembleModel};
use crate::pipeline::{PredictorKind, Variant};
use crate::sim::SimConfig;

pub const KIND: &str = "telesync-agent";

/// Everything needed to rebuild a trained controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub variant: Variant,
    pub predictor: PredictorKind,
    pub input_dim: usize,
    pub sim: SimConfig,
    pub delays: DelaySteps,
    pub sac: SacConfig,
    pub model: ModelConfig,
    pub seed: u64,
    pub env_steps: u64,
    pub log_alpha: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyBundle {
    pub meta: RunMeta,
    pub agent: SacAgent,
    pub model: Option<EnsembleModel>,
}

const AGENT_NETS: [&str; 5] = ["policy", "q1", "q2", "q1_target", "q2_target"];

impl PolicyBundle {
    pub fn from_run(run: TrainingRun) -> Self {
        let c = &run.config;
        let meta = RunMeta {
            variant: c.variant,
            predictor: c.predictor,
            input_dim: run.agent.input_dim(),
            sim: c.sim.clone(),
            delays: c.delays,
            sac: c.sac.clone(),
            model: c.model.clone(),
            seed: c.seed,
            env_steps: run.log.last().map_or(0, |r| r.env_step),
            log_alpha: run.agent.log_alpha,
        };
        Self {
            meta,
            agent: run.agent,
            model: run.model,
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut seeds = vec![self.meta.seed];
        if let Some(m) = &self.model {
            seeds.extend(m.seeds());
        }
        let mut ck = Checkpoint::new(KIND, self.meta.env_steps, seeds, serde_json::to_value(&self.meta)?);
        let a = &self.agent;
        for (name, net) in AGENT_NETS.iter().zip([&a.policy, &a.q1, &a.q2, &a.q1_target, &a.q2_target]) {
            ck.push(name, net);
        }
        if let Some(m) = &self.model {
            for (i, net) in m.members().iter().enumerate() {
                ck.push(&format!("model_{i}"), net);
            }
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.header.kind != KIND {
            return Err(Error::Checkpoint(format!("expected kind {KIND:?}, found {:?}", ck.header.kind)));
        }
        let meta: RunMeta = serde_json::from_value(ck.header.meta.clone())?;
        let nets = AGENT_NETS.map(|n| ck.network(n).cloned());
        let [p, q1, q2, t1, t2] = nets;
        let agent = SacAgent::from_parts(meta.sac.clone(), [p?, q1?, q2?, t1?, t2?], meta.log_alpha, meta.seed)?;
        if agent.input_dim() != meta.input_dim {
            return Err(Error::Checkpoint(format!(
                "policy input {} disagrees with recorded input_dim {}",
                agent.input_dim(),
                meta.input_dim
            )));
        }
        let members: Vec<_> = ck
            .networks()
            .filter(|(n, _)| n.starts_with("model_"))
            .map(|(_, m)| m.clone())
            .collect();
        let model = if members.is_empty() {
            None
        } else {
            let cfg = meta.model.ensemble_config(&meta.sim);
            let seeds = ck.header.seeds.iter().skip(1).copied().collect();
            Some(EnsembleModel::from_members(cfg, members, seeds, 0)?)
        };
        if meta.variant == Variant::Pmdc && model.is_none() {
            return Err(Error::Checkpoint("PMDC checkpoint without a dynamics model".into()));
        }
        Ok(Self { meta, agent, model })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Input size a session with `delays` would feed this policy.
    pub fn check_delays(&self, delays: &DelaySteps) -> Result<()> {
        let need = self.meta.variant.input_dim(delays);
        if need != self.meta.input_dim {
            return Err(Error::Dimension {
                expected: need,
                got: self.meta.input_dim,
            });
        }
        Ok(())
    }
}
