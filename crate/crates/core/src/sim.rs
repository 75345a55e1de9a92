//! Local-remote plant: a pair of force-controlled 3D end effectors.
//!
//! Each device is a point mass integrated with semi-implicit Euler inside a
//! box workspace. The remote device's reference row carries the operator
//! (local) position, the local device's reference row carries its target.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of components in a flattened device state.
pub const STATE_DIM: usize = 9;

/// Gains of the scripted local operator.
pub const EXPERT_KP: f64 = 25.0;
pub const EXPERT_KD: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.x), f(self.y), f(self.z))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn clamp(self, limit: f64) -> Self {
        self.map(|c| c.clamp(-limit, limit))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.map(|c| c * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self.map(|c| -c)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// One device's 3x3 state: position, velocity and reference rows.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviceState {
    pub position: Vec3,
    pub velocity: Vec3,
    /// Target position for the local device, operator position for the remote one.
    pub reference: Vec3,
}

impl DeviceState {
    pub fn at_rest(position: Vec3, reference: Vec3) -> Self {
        Self {
            position,
            velocity: Vec3::ZERO,
            reference,
        }
    }

    /// Row-major flattening: position, velocity, reference.
    pub fn to_array(&self) -> [f64; STATE_DIM] {
        let (p, v, r) = (self.position, self.velocity, self.reference);
        [p.x, p.y, p.z, v.x, v.y, v.z, r.x, r.y, r.z]
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        if s.len() != STATE_DIM {
            return Err(Error::Dimension {
                expected: STATE_DIM,
                got: s.len(),
            });
        }
        Ok(Self {
            position: Vec3::from_slice(&s[0..3]),
            velocity: Vec3::from_slice(&s[3..6]),
            reference: Vec3::from_slice(&s[6..9]),
        })
    }

    /// Component-wise sum over all nine entries.
    pub fn offset(&self, delta: &[f64; STATE_DIM]) -> Self {
        let mut a = self.to_array();
        for (x, d) in a.iter_mut().zip(delta) {
            *x += d;
        }
        Self::from_slice(&a).expect("fixed size")
    }

    /// `self - other` over all nine entries.
    pub fn difference(&self, other: &DeviceState) -> [f64; STATE_DIM] {
        let (a, b) = (self.to_array(), other.to_array());
        std::array::from_fn(|i| a[i] - b[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PDGains {
    pub kp: f64,
    pub kd: f64,
}

impl PDGains {
    pub const fn new(kp: f64, kd: f64) -> Self {
        Self { kp, kd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Seconds per step.
    pub dt: f64,
    /// Decision steps per episode.
    pub episode_length: usize,
    /// Kilograms.
    pub mass: f64,
    /// Newtons, per axis.
    pub force_limit: f64,
    /// Metres; the workspace is `[-h, h]^3`.
    pub workspace_half_extent: f64,
    /// Fraction of velocity removed each step.
    pub velocity_damping: f64,
    pub kp_max: f64,
    pub kd_max: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            episode_length: 50,
            mass: 0.25,
            force_limit: 10.0,
            workspace_half_extent: 1.0,
            velocity_damping: 0.02,
            kp_max: 50.0,
            kd_max: 10.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.dt > 0.0 && self.dt.is_finite(), "dt must be positive"),
            (self.episode_length >= 1, "episode_length must be at least 1"),
            (self.mass > 0.0, "mass must be positive"),
            (self.force_limit > 0.0, "force_limit must be positive"),
            (self.workspace_half_extent > 0.0, "workspace_half_extent must be positive"),
            (
                (0.0..1.0).contains(&self.velocity_damping),
                "velocity_damping must lie in [0, 1)",
            ),
            (self.kp_max >= 0.0 && self.kd_max >= 0.0, "gain limits must be non-negative"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config((*msg).into())),
            None => Ok(()),
        }
    }

    /// Step duration in whole milliseconds, if `dt` is a whole number of ms.
    pub fn dt_ms(&self) -> Option<u64> {
        let ms = self.dt * 1000.0;
        let rounded = ms.round();
        ((ms - rounded).abs() < 1e-9 && rounded >= 1.0).then_some(rounded as u64)
    }
}

/// Advance one device by a single semi-implicit Euler step.
pub fn step_device(state: &DeviceState, force: Vec3, cfg: &SimConfig) -> Result<DeviceState> {
    if !force.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite force {force:?}")));
    }
    let force = force.clamp(cfg.force_limit);
    let h = cfg.workspace_half_extent;
    let keep = 1.0 - cfg.velocity_damping;

    let mut position = [0.0; 3];
    let mut velocity = [0.0; 3];
    for axis in 0..3 {
        let v = keep * state.velocity[axis] + force[axis] / cfg.mass * cfg.dt;
        let p = state.position[axis] + v * cfg.dt;
        if p > h || p < -h {
            position[axis] = p.clamp(-h, h);
            velocity[axis] = 0.0;
        } else {
            position[axis] = p;
            velocity[axis] = v;
        }
    }
    Ok(DeviceState {
        position: Vec3::from_slice(&position),
        velocity: Vec3::from_slice(&velocity),
        reference: state.reference,
    })
}

/// Remote observation: the remote's own rows with the reference replaced by
/// the operator position.
pub fn mix_states(local: &DeviceState, remote: &DeviceState) -> DeviceState {
    DeviceState {
        reference: local.position,
        ..*remote
    }
}

/// Signed tracking error, `-|remote - local|`. Never positive.
pub fn compute_error(remote_pos: Vec3, local_pos: Vec3) -> f64 {
    -(remote_pos - local_pos).norm()
}

/// Per-axis PD law on the error vector. Pass `prev_err == err` on the first
/// step of an episode to suppress the derivative kick.
pub fn pd_action(gains: PDGains, err: Vec3, prev_err: Vec3, dt: f64) -> Vec3 {
    err * gains.kp + (err - prev_err) * (gains.kd / dt)
}

/// Scripted operator: fixed-gain PD from the local position to its target.
pub fn local_operator_policy(local: &DeviceState, cfg: &SimConfig) -> Vec3 {
    let err = local.reference - local.position;
    (err * EXPERT_KP - local.velocity * EXPERT_KD).clamp(cfg.force_limit)
}

/// Seeded initial condition: both devices co-located at rest, local target
/// drawn inside the workspace.
pub fn reset_episode(seed: u64, _cfg: &SimConfig) -> (DeviceState, DeviceState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |lim: f64| {
        Vec3::new(
            rng.random_range(-lim..=lim),
            rng.random_range(-lim..=lim),
            rng.random_range(-lim..=lim),
        )
    };
    let start = draw(0.5);
    let target = draw(0.8);
    let local = DeviceState::at_rest(start, target);
    let remote = DeviceState::at_rest(start, start);
    (local, remote)
}
