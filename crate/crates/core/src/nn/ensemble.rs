use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use super::optim::{adam_step, huber_grad, huber_loss, AdamConfig, AdamState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Divisors applied to `state ++ action` before the first layer.
    pub input_scale: Vec<f64>,
    /// Multipliers mapping network outputs to state deltas.
    pub delta_scale: Vec<f64>,
    pub huber_delta: f64,
    pub adam: AdamConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: vec![128, 128],
            state_dim: 9,
            action_dim: 3,
            input_scale: vec![1.0; 12],
            delta_scale: vec![1.0; 9],
            huber_delta: 1.0,
            adam: AdamConfig::default(),
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        if self.input_scale.len() != self.state_dim + self.action_dim {
            return Err(Error::Dimension {
                expected: self.state_dim + self.action_dim,
                got: self.input_scale.len(),
            });
        }
        if self.delta_scale.len() != self.state_dim {
            return Err(Error::Dimension {
                expected: self.state_dim,
                got: self.delta_scale.len(),
            });
        }
        if self.input_scale.iter().chain(&self.delta_scale).any(|s| *s <= 0.0 || !s.is_finite()) {
            return Err(Error::Config("ensemble scales must be positive".into()));
        }
        if self.huber_delta <= 0.0 {
            return Err(Error::Config("huber_delta must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.state_dim + self.action_dim];
        s.extend(&self.hidden);
        s.push(self.state_dim);
        s
    }
}

/// Independently initialised residual dynamics networks.
#[derive(Debug, Clone)]
pub struct EnsembleModel {
    cfg: EnsembleConfig,
    members: Vec<Mlp>,
    optim: Vec<AdamState>,
    seeds: Vec<u64>,
    train_steps: u64,
}

/// One supervised example `(state, action) -> next_state`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
}

impl EnsembleModel {
    pub fn new(cfg: EnsembleConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let sizes = cfg.layer_sizes();
        let seeds: Vec<u64> = (0..cfg.members as u64).map(|i| seed.wrapping_mul(1_000_003).wrapping_add(i)).collect();
        let members: Vec<Mlp> = seeds
            .iter()
            .map(|s| Mlp::new(&sizes, Activation::Identity, &mut ChaCha8Rng::seed_from_u64(*s)))
            .collect();
        let optim = members.iter().map(|m| AdamState::new(m.num_params())).collect();
        Ok(Self {
            cfg,
            members,
            optim,
            seeds,
            train_steps: 0,
        })
    }

    /// Build from explicit members (all must share one architecture).
    pub fn from_members(cfg: EnsembleConfig, members: Vec<Mlp>, seeds: Vec<u64>, train_steps: u64) -> Result<Self> {
        cfg.validate()?;
        if members.len() != cfg.members || seeds.len() != cfg.members {
            return Err(Error::Config(format!(
                "expected {} members, got {} networks and {} seeds",
                cfg.members,
                members.len(),
                seeds.len()
            )));
        }
        let sizes = cfg.layer_sizes();
        if let Some(m) = members.iter().find(|m| m.sizes() != sizes.as_slice()) {
            return Err(Error::Config(format!("member sizes {:?} differ from {:?}", m.sizes(), sizes)));
        }
        let optim = members.iter().map(|m| AdamState::new(m.num_params())).collect();
        Ok(Self {
            cfg,
            members,
            optim,
            seeds,
            train_steps,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.cfg
    }

    pub fn members(&self) -> &[Mlp] {
        &self.members
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    fn input_row(&self, state: &[f64], action: &[f64], out: &mut [f64]) {
        let sd = self.cfg.state_dim;
        for i in 0..sd {
            out[i] = state[i] / self.cfg.input_scale[i];
        }
        for j in 0..self.cfg.action_dim {
            out[sd + j] = action[j] / self.cfg.input_scale[sd + j];
        }
    }

    fn check(&self, state: &[f64], action: &[f64]) -> Result<()> {
        if state.len() != self.cfg.state_dim {
            return Err(Error::Dimension {
                expected: self.cfg.state_dim,
                got: state.len(),
            });
        }
        if action.len() != self.cfg.action_dim {
            return Err(Error::Dimension {
                expected: self.cfg.action_dim,
                got: action.len(),
            });
        }
        Ok(())
    }

    /// Next-state prediction of every member, one row each.
    pub fn member_predictions(&self, state: &[f64], action: &[f64]) -> Result<Array2<f64>> {
        self.check(state, action)?;
        let d_in = self.cfg.state_dim + self.cfg.action_dim;
        let mut x = Array2::zeros((1, d_in));
        self.input_row(state, action, x.as_slice_mut().expect("contiguous"));
        let mut out = Array2::zeros((self.members.len(), self.cfg.state_dim));
        for (k, net) in self.members.iter().enumerate() {
            let y = net.forward_batch(x.view())?;
            for i in 0..self.cfg.state_dim {
                out[[k, i]] = state[i] + y[[0, i]] * self.cfg.delta_scale[i];
            }
        }
        Ok(out)
    }

    /// Mean and population variance across members.
    pub fn predict(&self, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let preds = self.member_predictions(state, action)?;
        Ok(mean_and_variance(&preds))
    }

    /// One Adam step per member on the mean Huber loss of the batch.
    /// Returns each member's loss before the step.
    pub fn train(&mut self, batch: &[Transition]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty training batch".into()));
        }
        let (sd, d_in) = (self.cfg.state_dim, self.cfg.state_dim + self.cfg.action_dim);
        let mut x = Array2::zeros((batch.len(), d_in));
        let mut target = Array2::zeros((batch.len(), sd));
        for (r, tr) in batch.iter().enumerate() {
            self.check(&tr.state, &tr.action)?;
            if tr.next_state.len() != sd {
                return Err(Error::Dimension {
                    expected: sd,
                    got: tr.next_state.len(),
                });
            }
            let mut row = x.row_mut(r);
            self.input_row(&tr.state, &tr.action, row.as_slice_mut().expect("contiguous"));
            for i in 0..sd {
                target[[r, i]] = (tr.next_state[i] - tr.state[i]) / self.cfg.delta_scale[i];
            }
        }
        let target_flat = target.as_slice().expect("contiguous");
        let mut losses = Vec::with_capacity(self.members.len());
        for (net, opt) in self.members.iter_mut().zip(&mut self.optim) {
            let cache = net.forward_cached(x.view())?;
            let out = cache.output().as_slice().expect("contiguous");
            losses.push(huber_loss(out, target_flat, self.cfg.huber_delta));
            let g = huber_grad(out, target_flat, self.cfg.huber_delta);
            let g = Array2::from_shape_vec((batch.len(), sd), g).expect("shape");
            let (grads, _) = net.backward(&cache, g.view());
            adam_step(net.params_mut(), &grads, opt, &self.cfg.adam);
        }
        self.train_steps += 1;
        Ok(losses)
    }

    /// Mean over components of the member variance, averaged over a batch.
    pub fn mean_variance(&self, inputs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        if inputs.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (s, a) in inputs {
            let (_, var) = self.predict(s, a)?;
            total += var.iter().sum::<f64>() / var.len() as f64;
        }
        Ok(total / inputs.len() as f64)
    }
}

pub fn mean_and_variance(rows: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let mean = rows.mean_axis(Axis(0)).expect("at least one member");
    let var = rows.var_axis(Axis(0), 0.0);
    (mean.to_vec(), var.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_cfg(members: usize) -> EnsembleConfig {
        EnsembleConfig {
            members,
            hidden: vec![16, 16],
            ..EnsembleConfig::default()
        }
    }

    #[test]
    fn identical_members_have_zero_variance() {
        let base = EnsembleModel::new(small_cfg(1), 3).unwrap();
        let net = base.members()[0].clone();
        let ens = EnsembleModel::from_members(small_cfg(4), vec![net.clone(); 4], vec![0; 4], 0).unwrap();
        let s = [0.1; 9];
        let a = [1.0, -1.0, 0.0];
        let (mean, var) = ens.predict(&s, &a).unwrap();
        let (single, _) = base.predict(&s, &a).unwrap();
        assert_eq!(mean, single);
        assert!(var.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn statistics_match_member_outputs() {
        let ens = EnsembleModel::new(small_cfg(5), 11).unwrap();
        let s: Vec<f64> = (0..9).map(|i| 0.1 * i as f64 - 0.3).collect();
        let a = [2.0, 0.5, -3.0];
        let rows = ens.member_predictions(&s, &a).unwrap();
        let (mean, var) = ens.predict(&s, &a).unwrap();
        for i in 0..9 {
            let col: Vec<f64> = rows.column(i).to_vec();
            let m = col.iter().sum::<f64>() / 5.0;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 5.0;
            assert!((mean[i] - m).abs() < 1e-12);
            assert!((var[i] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_is_permutation_invariant() {
        let ens = EnsembleModel::new(small_cfg(5), 4).unwrap();
        let mut members = ens.members().to_vec();
        members.reverse();
        let flipped = EnsembleModel::from_members(small_cfg(5), members, vec![0; 5], 0).unwrap();
        let s = [0.2; 9];
        let a = [0.0, 1.0, 0.0];
        let (m1, v1) = ens.predict(&s, &a).unwrap();
        let (m2, v2) = flipped.predict(&s, &a).unwrap();
        for i in 0..9 {
            assert!((m1[i] - m2[i]).abs() < 1e-12);
            assert!((v1[i] - v2[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_model_has_zero_loss_and_stays_put() {
        let mut cfg = small_cfg(2);
        cfg.hidden = vec![4];
        let members = vec![Mlp::zeros(&cfg.layer_sizes(), Activation::Identity); 2];
        let mut ens = EnsembleModel::from_members(cfg, members, vec![0, 1], 0).unwrap();
        let batch = vec![Transition {
            state: vec![0.3; 9],
            action: vec![1.0; 3],
            next_state: vec![0.3; 9],
        }];
        let before: Vec<Vec<f64>> = ens.members().iter().map(|m| m.params().to_vec()).collect();
        assert_eq!(ens.train(&batch).unwrap(), vec![0.0, 0.0]);
        let after: Vec<Vec<f64>> = ens.members().iter().map(|m| m.params().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn learns_linear_dynamics() {
        let mut cfg = small_cfg(2);
        cfg.adam.lr = 3e-3;
        let mut ens = EnsembleModel::new(cfg, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch: Vec<Transition> = (0..64)
            .map(|_| {
                let s: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
                let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut n = s.clone();
                for i in 0..3 {
                    n[i] += 0.1 * s[3 + i] + 0.05 * a[i];
                    n[3 + i] += 0.2 * a[i];
                }
                Transition {
                    state: s,
                    action: a,
                    next_state: n,
                }
            })
            .collect();
        let first = ens.train(&batch).unwrap();
        let mut last = first.clone();
        for _ in 0..2000 {
            last = ens.train(&batch).unwrap();
        }
        assert!(last.iter().all(|l| *l < 1e-3), "{first:?} -> {last:?}");
        assert_eq!(ens.train_steps(), 2001);
    }

    #[test]
    fn rejects_bad_shapes() {
        let ens = EnsembleModel::new(small_cfg(1), 0).unwrap();
        assert!(ens.predict(&[0.0; 8], &[0.0; 3]).is_err());
        assert!(ens.predict(&[0.0; 9], &[0.0; 2]).is_err());
        assert!(EnsembleModel::new(small_cfg(0), 0).is_err());
    }
}
