//! Small dense networks, Adam, Huber loss and dynamics ensembles.

pub mod checkpoint;
pub mod ensemble;
pub mod mlp;
pub mod optim;

pub use checkpoint::Checkpoint;
pub use ensemble::{EnsembleConfig, EnsembleModel, Transition};
pub use mlp::{param_count, Activation, ForwardCache, Mlp};
pub use optim::{adam_step, huber_grad, huber_loss, AdamConfig, AdamState};
