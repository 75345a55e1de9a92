use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::pipeline::Provenance;

/// Ring buffer of `(state, raw action, reward, next state)`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_states: Vec<f64>,
    provenance: Vec<(Provenance, Provenance)>,
    len: usize,
    head: usize,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            state_dim,
            action_dim,
            states: vec![0.0; capacity * state_dim],
            actions: vec![0.0; capacity * action_dim],
            rewards: vec![0.0; capacity],
            next_states: vec![0.0; capacity * state_dim],
            provenance: vec![(Provenance::Delivered, Provenance::Delivered); capacity],
            len: 0,
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn push(
        &mut self,
        state: &[f64],
        action: &[f64],
        reward: f64,
        next_state: &[f64],
        provenance: (Provenance, Provenance),
    ) -> Result<()> {
        for (got, expected) in [
            (state.len(), self.state_dim),
            (next_state.len(), self.state_dim),
            (action.len(), self.action_dim),
        ] {
            if got != expected {
                return Err(Error::Dimension { expected, got });
            }
        }
        let i = self.head;
        let (sd, ad) = (self.state_dim, self.action_dim);
        self.states[i * sd..(i + 1) * sd].copy_from_slice(state);
        self.next_states[i * sd..(i + 1) * sd].copy_from_slice(next_state);
        self.actions[i * ad..(i + 1) * ad].copy_from_slice(action);
        self.rewards[i] = reward;
        self.provenance[i] = provenance;
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    pub fn provenance(&self) -> &[(Provenance, Provenance)] {
        &self.provenance[..self.len]
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Batch {
        assert!(self.len > 0, "sampling from an empty replay buffer");
        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut out = Batch {
            states: Array2::zeros((batch, sd)),
            actions: Array2::zeros((batch, ad)),
            rewards: Array1::zeros(batch),
            next_states: Array2::zeros((batch, sd)),
        };
        for r in 0..batch {
            let i = rng.random_range(0..self.len);
            out.states
                .row_mut(r)
                .as_slice_mut()
                .expect("row")
                .copy_from_slice(&self.states[i * sd..(i + 1) * sd]);
            out.next_states
                .row_mut(r)
                .as_slice_mut()
                .expect("row")
                .copy_from_slice(&self.next_states[i * sd..(i + 1) * sd]);
            out.actions
                .row_mut(r)
                .as_slice_mut()
                .expect("row")
                .copy_from_slice(&self.actions[i * ad..(i + 1) * ad]);
            out.rewards[r] = self.rewards[i];
        }
        out
    }
}
