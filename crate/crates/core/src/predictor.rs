//! Future-state prediction across the action delay.
//!
//! [`FutureStateBuffer`] keeps one predicted state per future step, extends
//! it by one model call per decision and shifts every entry by the error seen
//! when an observation arrives. [`absp_predict`] instead rolls the whole
//! horizon from the latest observation each step.

use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::nn::EnsembleModel;
use crate::sim::{step_device, DeviceState, SimConfig, Vec3, STATE_DIM};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelPrediction {
    pub state: DeviceState,
    /// Mean member variance over the nine components; zero for exact models.
    pub variance: f64,
}

pub trait DynamicsModel {
    /// Predict the next remote state. The reference row is carried over
    /// unchanged from `state`.
    fn predict(&self, state: &DeviceState, force: Vec3) -> Result<ModelPrediction>;
}

/// The simulator itself, used as an exact model.
#[derive(Debug, Clone)]
pub struct SimulatorModel {
    pub cfg: SimConfig,
}

impl DynamicsModel for SimulatorModel {
    fn predict(&self, state: &DeviceState, force: Vec3) -> Result<ModelPrediction> {
        Ok(ModelPrediction {
            state: step_device(state, force, &self.cfg)?,
            variance: 0.0,
        })
    }
}

impl DynamicsModel for EnsembleModel {
    fn predict(&self, state: &DeviceState, force: Vec3) -> Result<ModelPrediction> {
        let (mean, var) = EnsembleModel::predict(self, &state.to_array(), &force.to_array())?;
        let mut next = DeviceState::from_slice(&mean)?;
        next.reference = state.reference;
        Ok(ModelPrediction {
            state: next,
            variance: var.iter().sum::<f64>() / var.len() as f64,
        })
    }
}

/// Model calls and time spent in them.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PredictionCounter {
    pub calls: u64,
    pub wall_ns: u64,
    pub variance_sum: f64,
}

impl PredictionCounter {
    pub fn call(&mut self, model: &dyn DynamicsModel, state: &DeviceState, force: Vec3) -> Result<DeviceState> {
        let start = Instant::now();
        let out = model.predict(state, force);
        self.wall_ns += start.elapsed().as_nanos() as u64;
        self.calls += 1;
        let p = out?;
        self.variance_sum += p.variance;
        Ok(p.state)
    }

    pub fn mean_variance(&self) -> f64 {
        if self.calls == 0 {
            0.0
        } else {
            self.variance_sum / self.calls as f64
        }
    }

    pub fn absorb(&mut self, other: &PredictionCounter) {
        self.calls += other.calls;
        self.wall_ns += other.wall_ns;
        self.variance_sum += other.variance_sum;
    }
}

/// Predicted states for consecutive steps `first_step ..= last_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct FutureStateBuffer {
    alpha: usize,
    entries: VecDeque<DeviceState>,
    first_step: u64,
}

impl FutureStateBuffer {
    pub fn new(alpha: usize) -> Self {
        Self {
            alpha,
            entries: VecDeque::with_capacity(alpha + 1),
            first_step: 0,
        }
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn first_step(&self) -> u64 {
        self.first_step
    }

    pub fn last_step(&self) -> u64 {
        self.first_step + self.entries.len() as u64 - 1
    }

    pub fn get(&self, step: u64) -> Option<&DeviceState> {
        step.checked_sub(self.first_step).and_then(|i| self.entries.get(i as usize))
    }

    pub fn newest(&self) -> &DeviceState {
        self.entries.back().expect("buffer initialised")
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &DeviceState)> {
        (self.first_step..).zip(&self.entries)
    }

    /// Seed with `s0` at `step` and roll `in_flight.len()` predictions.
    pub fn init(
        &mut self,
        step: u64,
        s0: DeviceState,
        in_flight: &[Vec3],
        model: &dyn DynamicsModel,
        counter: &mut PredictionCounter,
    ) -> Result<()> {
        if in_flight.len() != self.alpha {
            return Err(Error::Dimension {
                expected: self.alpha,
                got: in_flight.len(),
            });
        }
        self.entries.clear();
        self.first_step = step;
        self.entries.push_back(s0);
        for f in in_flight {
            let next = counter.call(model, self.newest(), *f)?;
            self.entries.push_back(next);
        }
        Ok(())
    }

    /// Append the prediction one step past the newest entry. The model sees
    /// the newest entry with its reference row replaced by `reference`.
    pub fn step(
        &mut self,
        force: Vec3,
        reference: Vec3,
        model: &dyn DynamicsModel,
        counter: &mut PredictionCounter,
    ) -> Result<DeviceState> {
        let input = DeviceState {
            reference,
            ..*self.newest()
        };
        let next = counter.call(model, &input, force)?;
        self.entries.push_back(next);
        Ok(next)
    }

    /// Shift every entry from `step` on by `observed - F(step)`, pin
    /// `F(step)` to the observation and drop older entries. Returns the shift.
    pub fn recalibrate(&mut self, step: u64, observed: &DeviceState) -> Result<[f64; STATE_DIM]> {
        let Some(predicted) = self.get(step).copied() else {
            return Err(Error::Alignment {
                observed: step,
                first: self.first_step,
                last: self.last_step(),
            });
        };
        let delta = observed.difference(&predicted);
        let skip = (step - self.first_step) as usize;
        self.entries.drain(..skip);
        self.first_step = step;
        self.entries[0] = *observed;
        for e in self.entries.iter_mut().skip(1) {
            *e = e.offset(&delta);
        }
        Ok(delta)
    }
}

/// Roll `actions` through the model starting at `delayed_state`.
pub fn absp_predict(
    delayed_state: &DeviceState,
    actions: &[Vec3],
    model: &dyn DynamicsModel,
    counter: &mut PredictionCounter,
) -> Result<DeviceState> {
    let mut s = *delayed_state;
    for f in actions {
        s = counter.call(model, &s, *f)?;
    }
    Ok(s)
}

/// Prediction error seen at one recalibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub predicted: [f64; STATE_DIM],
    pub observed: [f64; STATE_DIM],
}

const COMPONENTS: [&str; STATE_DIM] = ["px", "py", "pz", "vx", "vy", "vz", "rx", "ry", "rz"];

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string()];
    for prefix in ["predicted", "observed", "delta"] {
        header.extend(COMPONENTS.iter().map(|c| format!("{prefix}_{c}")));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.step.to_string()];
        rec.extend(r.predicted.iter().map(f64::to_string));
        rec.extend(r.observed.iter().map(f64::to_string));
        rec.extend((0..STATE_DIM).map(|i| (r.observed[i] - r.predicted[i]).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
