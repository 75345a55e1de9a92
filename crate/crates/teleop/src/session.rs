//! One live teleoperation session, advanced one tick at a time.

use std::path::Path;

use telesync_core::nn::EnsembleModel;
use telesync_core::pipeline::ControlLoop;
use telesync_core::rl::{ActionMode, PolicyBundle, SacAgent};
use telesync_core::sim::{EXPERT_KD, EXPERT_KP};
use telesync_core::{DelaySettings, DelaySteps, DynamicsModel, PDGains, SimConfig, Variant, Vec3};

use crate::protocol::{ControllerKind, SessionConfig, TelemetryFrame};

/// Episode length used for live sessions, which never end on their own.
pub const LIVE_EPISODE_LENGTH: usize = 1 << 40;

pub const SCRIPTED_GAINS: PDGains = PDGains::new(EXPERT_KP, EXPERT_KD);

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid delays: {0}")]
    Delays(String),
    #[error("checkpoint controller needs checkpoint_path")]
    MissingCheckpoint,
    #[error("cannot load checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("checkpoint does not fit these delays: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Core(#[from] telesync_core::Error),
}

enum Controller {
    Scripted(PDGains),
    Policy { agent: Box<SacAgent>, model: Option<EnsembleModel> },
}

pub struct Session {
    id: u64,
    tick: u64,
    paused: bool,
    ctl: ControlLoop,
    controller: Controller,
}

fn live_sim(sim: &SimConfig) -> SimConfig {
    SimConfig {
        episode_length: LIVE_EPISODE_LENGTH,
        ..sim.clone()
    }
}

impl Session {
    /// Builds a session; fails without side effects when the delays are not
    /// representable or the checkpoint does not fit them.
    pub fn configure(id: u64, cfg: &SessionConfig, sim: &SimConfig) -> Result<Self, SessionError> {
        let settings = DelaySettings {
            action_delay_ms: cfg.action_delay_ms,
            obs_delay_min_ms: cfg.obs_delay_min_ms,
            obs_delay_max_ms: cfg.obs_delay_max_ms,
            delay_seed: cfg.seed,
        };
        let (controller, sim, variant, predictor, delays) = match cfg.controller {
            ControllerKind::Scripted => {
                let d = steps(&settings, sim)?;
                (Controller::Scripted(SCRIPTED_GAINS), live_sim(sim), Variant::Sac, Default::default(), d)
            }
            ControllerKind::Checkpoint => {
                let path = cfg.checkpoint_path.as_deref().ok_or(SessionError::MissingCheckpoint)?;
                let bundle = load_bundle(Path::new(path))?;
                let d = steps(&settings, &bundle.meta.sim)?;
                bundle
                    .check_delays(&d)
                    .map_err(|e| SessionError::Mismatch(format!("{e} for {} policy", bundle.meta.variant)))?;
                let m = &bundle.meta;
                let (sim, variant, predictor) = (live_sim(&m.sim), m.variant, m.predictor);
                let controller = Controller::Policy {
                    agent: Box::new(bundle.agent),
                    model: bundle.model,
                };
                (controller, sim, variant, predictor, d)
            }
        };
        let mut ctl = ControlLoop::new(sim, delays, variant)?.with_predictor(predictor);
        let model = match &controller {
            Controller::Policy { model, .. } => model.as_ref().map(|m| m as &dyn DynamicsModel),
            Controller::Scripted(_) => None,
        };
        ctl.reset(cfg.seed, model)?;
        Ok(Self {
            id,
            tick: 0,
            paused: false,
            ctl,
            controller,
        })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn pause(&mut self) {
        self.paused = true;
    }

    pub fn resume(&mut self) {
        self.paused = false;
    }

    pub fn delays(&self) -> &DelaySteps {
        self.ctl.delays()
    }

    /// Sets the operator target, clamped to the workspace; returns the value used.
    pub fn handle_move(&mut self, target: Vec3) -> Vec3 {
        self.ctl.set_operator_target(target)
    }

    pub fn operator_target(&self) -> Vec3 {
        self.ctl.local().reference
    }

    /// Advances one step; `None` while paused.
    pub fn tick(&mut self) -> Result<Option<TelemetryFrame>, SessionError> {
        if self.paused {
            return Ok(None);
        }
        let (gains, out) = match &mut self.controller {
            Controller::Scripted(g) => {
                self.ctl.observe(None)?;
                (*g, self.ctl.act(*g, None)?)
            }
            Controller::Policy { agent, model } => {
                let model = model.as_ref().map(|m| m as &dyn DynamicsModel);
                let view = self.ctl.observe(model)?;
                let sim = self.ctl.sim().clone();
                let g = agent.select_action(&view.input, ActionMode::Eval, &sim)?.gains;
                (g, self.ctl.act(g, model)?)
            }
        };
        // live sessions do not train
        self.ctl.drain_samples();
        self.tick += 1;
        let seen = self.ctl.latest_delivery();
        Ok(Some(TelemetryFrame {
            tick: self.tick,
            local: out.local.position.to_array(),
            remote: out.remote.position.to_array(),
            delayed_view: seen.state.position.to_array(),
            error: out.error,
            kp: gains.kp,
            kd: gains.kd,
            obs_delay_steps: out.step - seen.step,
        }))
    }
}

fn steps(settings: &DelaySettings, sim: &SimConfig) -> Result<DelaySteps, SessionError> {
    settings.to_steps(sim).map_err(|e| SessionError::Delays(e.to_string()))
}

fn load_bundle(path: &Path) -> Result<PolicyBundle, SessionError> {
    PolicyBundle::load(path).map_err(|e| SessionError::Checkpoint {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}
