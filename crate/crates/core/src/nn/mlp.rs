use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
}

/// Fully connected network with tanh hidden layers.
///
/// Parameters live in one flat vector, layer by layer: the `fan_in x fan_out`
/// weight matrix (row-major) followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    output: Activation,
    params: Vec<f64>,
}

/// Post-activation values of every layer, input first.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("nonempty")
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl Mlp {
    /// Uniform `+-1/sqrt(fan_in)` initialisation for weights and biases.
    pub fn new(sizes: &[usize], output: Activation, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(sizes, output);
        let mut off = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let n = (w[0] + 1) * w[1];
            for p in &mut net.params[off..off + n] {
                *p = dist.sample(rng);
            }
            off += n;
        }
        net
    }

    pub fn zeros(sizes: &[usize], output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an Mlp needs at least input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        Self {
            sizes: sizes.to_vec(),
            output,
            params: vec![0.0; param_count(sizes)],
        }
    }

    pub fn from_params(sizes: &[usize], output: Activation, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes, output);
        net.set_params(&params)?;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("nonempty")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Zero the weights and bias of the output layer.
    pub fn zero_output_layer(&mut self) {
        let n = self.params.len();
        let w = &self.sizes[self.sizes.len() - 2..];
        let last = (w[0] + 1) * w[1];
        self.params[n - last..].fill(0.0);
    }

    /// `self <- (1 - tau) * self + tau * source`.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) {
        assert_eq!(self.sizes, source.sizes, "polyak between different architectures");
        if tau == 0.0 {
            return;
        }
        if tau == 1.0 {
            self.params.copy_from_slice(&source.params);
            return;
        }
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t = (1.0 - tau) * *t + tau * s;
        }
    }

    fn layer(&self, i: usize, off: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (fi, fo) = (self.sizes[i], self.sizes[i + 1]);
        let w = ArrayView2::from_shape((fi, fo), &self.params[off..off + fi * fo]).expect("layout");
        let b = ArrayView1::from(&self.params[off + fi * fo..off + (fi + 1) * fo]);
        (w, b)
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 2 == self.sizes.len() {
            self.output
        } else {
            Activation::Tanh
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: cols,
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Rows are samples.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = x.to_owned();
        let mut off = 0;
        for i in 0..self.sizes.len() - 1 {
            a = self.apply_layer(i, off, a.view());
            off += (self.sizes[i] + 1) * self.sizes[i + 1];
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(x.to_owned());
        let mut off = 0;
        for i in 0..self.sizes.len() - 1 {
            let next = self.apply_layer(i, off, activations[i].view());
            activations.push(next);
            off += (self.sizes[i] + 1) * self.sizes[i + 1];
        }
        Ok(ForwardCache { activations })
    }

    fn apply_layer(&self, i: usize, off: usize, a: ArrayView2<'_, f64>) -> Array2<f64> {
        let (w, b) = self.layer(i, off);
        let mut z = a.dot(&w);
        z += &b;
        if self.activation(i) == Activation::Tanh {
            z.mapv_inplace(tanh);
        }
        z
    }

    /// Reverse pass. `grad_out` is dLoss/dOutput per sample; returns the flat
    /// parameter gradient (summed over the batch) and dLoss/dInput.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<'_, f64>) -> (Vec<f64>, Array2<f64>) {
        let layers = self.sizes.len() - 1;
        assert_eq!(cache.activations.len(), layers + 1, "cache from a different network");
        assert_eq!(grad_out.dim(), cache.output().dim(), "gradient shape mismatch");
        let mut grads = vec![0.0; self.params.len()];
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for i in 0..layers {
            offsets.push(off);
            off += (self.sizes[i] + 1) * self.sizes[i + 1];
        }

        let mut g = grad_out.to_owned();
        for i in (0..layers).rev() {
            if self.activation(i) == Activation::Tanh {
                g.zip_mut_with(&cache.activations[i + 1], |g, y| *g *= 1.0 - y * y);
            }
            let (fi, fo) = (self.sizes[i], self.sizes[i + 1]);
            let o = offsets[i];
            {
                let (wg, bg) = grads[o..o + (fi + 1) * fo].split_at_mut(fi * fo);
                let mut wg = ArrayViewMut2::from_shape((fi, fo), wg).expect("layout");
                general_mat_mul(1.0, &cache.activations[i].t(), &g, 0.0, &mut wg);
                let bsum: Array1<f64> = g.sum_axis(Axis(0));
                bg.copy_from_slice(bsum.as_slice().expect("contiguous"));
            }
            let (w, _) = self.layer(i, o);
            g = g.dot(&w.t());
        }
        (grads, g)
    }
}

/// `tanh` through one `exp`; absolute error stays within a few ulp of 1.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}
