//! Delay-corrected teleoperation control: plant, delay channels, dynamics
//! ensembles, future-state prediction and a SAC gain scheduler.

pub mod delay;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod predictor;
pub mod rl;
pub mod sim;

pub use delay::{augment_state, verify_delay_equivalence, ActionHistory, AugmentedState, DelayLine, DelaySettings, DelaySteps};
pub use error::{Error, Result};
pub use pipeline::{AgentView, Capture, ControlLoop, PredictorKind, Provenance, StepOutcome, Variant};
pub use predictor::{absp_predict, DynamicsModel, FutureStateBuffer, PredictionCounter, SimulatorModel};
pub use sim::{
    compute_error, local_operator_policy, mix_states, pd_action, reset_episode, step_device, DeviceState, PDGains,
    SimConfig, Vec3,
};
