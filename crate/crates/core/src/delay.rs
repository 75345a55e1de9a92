//! Integer-step delay channels and augmented states.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{ControlLoop, Variant};
use crate::sim::{DeviceState, SimConfig, Vec3, STATE_DIM};

#[derive(Debug, Clone)]
pub enum DelayMode {
    Constant(usize),
    /// Uniform integer delay in `[min, max]`, drawn per payload.
    Stochastic { min: usize, max: usize, rng: ChaCha8Rng },
}

/// FIFO release queue. Payloads never overtake each other.
#[derive(Debug, Clone)]
pub struct DelayLine<T> {
    queue: VecDeque<(T, u64)>,
    current_step: u64,
    last_release: u64,
    mode: DelayMode,
}

impl<T> DelayLine<T> {
    pub fn constant(steps: usize) -> Self {
        Self::with_mode(DelayMode::Constant(steps))
    }

    pub fn stochastic(min: usize, max: usize, seed: u64) -> Self {
        assert!(min <= max, "empty delay range {min}..={max}");
        Self::with_mode(DelayMode::Stochastic {
            min,
            max,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Constant when `min == max`.
    pub fn from_range(min: usize, max: usize, seed: u64) -> Self {
        if min == max {
            Self::constant(min)
        } else {
            Self::stochastic(min, max, seed)
        }
    }

    fn with_mode(mode: DelayMode) -> Self {
        Self {
            queue: VecDeque::new(),
            current_step: 0,
            last_release: 0,
            mode,
        }
    }

    /// Insert a payload produced at `now`; returns its release step.
    pub fn push(&mut self, payload: T, now: u64) -> u64 {
        let d = match &mut self.mode {
            DelayMode::Constant(k) => *k,
            DelayMode::Stochastic { min, max, rng } => rng.random_range(*min..=*max),
        };
        self.push_with_delay(payload, now, d)
    }

    fn push_with_delay(&mut self, payload: T, now: u64, d: usize) -> u64 {
        debug_assert!(now >= self.current_step, "push into the past");
        self.current_step = self.current_step.max(now);
        let release = match self.mode {
            DelayMode::Constant(_) => now + d as u64,
            DelayMode::Stochastic { .. } => (now + d as u64).max(self.last_release),
        };
        self.last_release = release;
        self.queue.push_back((payload, release));
        release
    }

    /// Remove and return every payload due at or before `now`, oldest first.
    pub fn pop_ready(&mut self, now: u64) -> Vec<T> {
        self.current_step = self.current_step.max(now);
        let mut out = Vec::new();
        while self.queue.front().is_some_and(|(_, r)| *r <= now) {
            out.push(self.queue.pop_front().expect("checked").0);
        }
        out
    }

    /// Like [`pop_ready`](Self::pop_ready) but keeps only the newest payload.
    pub fn pop_newest(&mut self, now: u64) -> Option<T> {
        self.pop_ready(now).pop()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

/// Delay configuration as exchanged with users (milliseconds).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySettings {
    pub action_delay_ms: u64,
    pub obs_delay_min_ms: u64,
    pub obs_delay_max_ms: u64,
    #[serde(default)]
    pub delay_seed: u64,
}

impl DelaySettings {
    pub const NONE: DelaySettings = DelaySettings {
        action_delay_ms: 0,
        obs_delay_min_ms: 0,
        obs_delay_max_ms: 0,
        delay_seed: 0,
    };

    pub fn to_steps(&self, sim: &SimConfig) -> Result<DelaySteps> {
        let dt_ms = sim
            .dt_ms()
            .ok_or_else(|| Error::Config(format!("dt = {} s is not a whole number of milliseconds", sim.dt)))?;
        let conv = |name: &str, ms: u64| {
            if ms % dt_ms != 0 {
                Err(Error::Config(format!(
                    "{name} = {ms} ms is not a multiple of the {dt_ms} ms step"
                )))
            } else {
                Ok((ms / dt_ms) as usize)
            }
        };
        let steps = DelaySteps {
            action: conv("action_delay_ms", self.action_delay_ms)?,
            obs_min: conv("obs_delay_min_ms", self.obs_delay_min_ms)?,
            obs_max: conv("obs_delay_max_ms", self.obs_delay_max_ms)?,
            seed: self.delay_seed,
        };
        if steps.obs_min > steps.obs_max {
            return Err(Error::Config(format!(
                "obs_delay_min_ms ({}) exceeds obs_delay_max_ms ({})",
                self.obs_delay_min_ms, self.obs_delay_max_ms
            )));
        }
        Ok(steps)
    }

    /// Human label of the total delay range, e.g. `250-290ms`.
    pub fn label(&self) -> String {
        format!(
            "{}-{}ms",
            self.action_delay_ms + self.obs_delay_min_ms,
            self.action_delay_ms + self.obs_delay_max_ms
        )
    }
}

/// Delays in simulation steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DelaySteps {
    pub action: usize,
    pub obs_min: usize,
    pub obs_max: usize,
    pub seed: u64,
}

impl DelaySteps {
    pub fn new(action: usize, obs_min: usize, obs_max: usize) -> Self {
        Self {
            action,
            obs_min,
            obs_max,
            seed: 0,
        }
    }

    /// Window over the whole in-flight delay.
    pub fn full_window(&self) -> usize {
        self.action + self.obs_max
    }

    /// Window over the stochastic part of the observation delay only.
    pub fn stochastic_window(&self) -> usize {
        self.obs_max - self.obs_min
    }
}

/// Most recent actions, zero-filled at episode start.
#[derive(Debug, Clone)]
pub struct ActionHistory {
    buf: VecDeque<Vec3>,
    capacity: usize,
}

impl ActionHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            buf: std::iter::repeat_n(Vec3::ZERO, capacity).collect(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, action: Vec3) {
        if self.capacity == 0 {
            return;
        }
        self.buf.pop_front();
        self.buf.push_back(action);
    }

    pub fn reset(&mut self) {
        self.buf.iter_mut().for_each(|a| *a = Vec3::ZERO);
    }

    /// The `n` most recent actions, oldest first.
    pub fn recent(&self, n: usize) -> impl Iterator<Item = &Vec3> {
        self.buf.iter().skip(self.capacity.saturating_sub(n))
    }
}

/// Observation concatenated with an action window.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub base: [f64; STATE_DIM],
    /// Flattened actions, three components each, newest last.
    pub action_history: Vec<f64>,
}

impl AugmentedState {
    pub fn dim(&self) -> usize {
        STATE_DIM + self.action_history.len()
    }

    pub fn window(&self) -> usize {
        self.action_history.len() / 3
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.base);
        v.extend_from_slice(&self.action_history);
        v
    }
}

pub fn augmented_dim(window: usize) -> usize {
    STATE_DIM + 3 * window
}

pub fn augment_state(base: &DeviceState, history: &ActionHistory, n: usize) -> Result<AugmentedState> {
    if n > history.capacity() {
        return Err(Error::Config(format!(
            "augmentation window {n} exceeds action history capacity {}",
            history.capacity()
        )));
    }
    Ok(AugmentedState {
        base: base.to_array(),
        action_history: history.recent(n).flat_map(|a| a.to_array()).collect(),
    })
}

/// Run the same deterministic policy under `(action = k, obs = 0)` and
/// `(action = 0, obs = k)` and check the agent sees identical inputs.
pub fn verify_delay_equivalence<P>(k: usize, mut make_policy: impl FnMut() -> P, seed: u64, sim: &SimConfig) -> bool
where
    P: FnMut(&DeviceState) -> Vec3,
{
    let mut run = |delays: DelaySteps| -> Result<Vec<[f64; STATE_DIM]>> {
        let mut policy = make_policy();
        let mut ctl = ControlLoop::new(sim.clone(), delays, Variant::Sac)?;
        ctl.reset(seed, None)?;
        let mut inputs = Vec::with_capacity(sim.episode_length);
        for _ in 0..sim.episode_length {
            let view = ctl.observe(None)?;
            inputs.push(view.state.to_array());
            let force = policy(&view.state);
            ctl.act_with_force(force, None)?;
        }
        Ok(inputs)
    };
    let (Ok(a), Ok(b)) = (run(DelaySteps::new(k, 0, 0)), run(DelaySteps::new(0, k, k))) else {
        return false;
    };
    a.iter()
        .zip(&b)
        .skip(k)
        .all(|(x, y)| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
}
