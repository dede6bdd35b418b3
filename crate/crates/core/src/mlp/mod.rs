//! Fully connected baseline forecaster `D_hat = f(x; beta)` with exact
//! reverse-mode gradients and an Adam optimizer.
//!
//! All weights and biases live in one flat vector: for each layer the
//! `out x in` weight matrix (row-major) followed by its bias.

mod adam;

pub use adam::Adam;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Hidden widths used for the full-scale configuration.
pub const DEFAULT_HIDDEN: [usize; 3] = [200, 100, 100];
/// Lower bound on the fitted feature standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    /// No nonlinearity; used to check gradients against closed forms.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Per-feature standardization statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// Population mean and standard deviation per column, stds floored at [`STD_FLOOR`].
pub fn fit_normalization(features: &[Vec<f64>]) -> Result<Normalization> {
    if features.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: features.len() });
    }
    let dim = features[0].len();
    for row in features {
        check_len("feature row", dim, row.len())?;
    }
    let n = features.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|j| features.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std = (0..dim)
        .map(|j| {
            let var = features.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            var.sqrt().max(STD_FLOOR)
        })
        .collect();
    Ok(Normalization { mean, std })
}

/// Gradients of `upstream . f(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradient {
    pub params: Vec<f64>,
    /// With respect to the raw (unnormalized) features.
    pub input: Vec<f64>,
}

/// Per-layer inputs and pre-activations of one forward pass.
type Trace = (Vec<Vec<f64>>, Vec<Vec<f64>>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineNet {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    norm: Normalization,
}

impl BaselineNet {
    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, activation: Activation, rng: &mut R) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut params = Vec::with_capacity(Self::count(&sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1] + w[1]).map(|_| rng.random_range(-bound..bound)));
        }
        Self { sizes, activation, params, norm: Normalization::identity(input) }
    }

    /// Rebuild from raw parts (checkpoints, tests).
    pub fn from_parts(sizes: Vec<usize>, activation: Activation, params: Vec<f64>, norm: Normalization) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::ShapeMismatch("need at least input and output sizes".into()));
        }
        check_len("network parameters", Self::count(&sizes), params.len())?;
        check_len("normalization", sizes[0], norm.dim())?;
        if norm.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::ShapeMismatch("normalization stds must be positive".into()));
        }
        Ok(Self { sizes, activation, params, norm })
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn set_normalization(&mut self, norm: Normalization) -> Result<()> {
        check_len("normalization", self.input_dim(), norm.dim())?;
        self.norm = norm;
        Ok(())
    }

    /// `(weight offset, bias offset)` of layer `l` in the flat vector.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let start = Self::count(&self.sizes[..=l]);
        (start, start + self.sizes[l] * self.sizes[l + 1])
    }

    pub fn weight(&self, l: usize) -> &[f64] {
        let (w, b) = self.layer_offsets(l);
        &self.params[w..b]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (_, b) = self.layer_offsets(l);
        &self.params[b..b + self.sizes[l + 1]]
    }

    /// Forward pass returning every layer's input and pre-activation.
    fn trace(&self, x: &[f64]) -> Result<Trace> {
        check_len("features", self.input_dim(), x.len())?;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut a = self.norm.apply(x);
        for l in 0..self.num_layers() {
            let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
            let w = self.weight(l);
            let b = self.bias(l);
            let z: Vec<f64> = (0..rows)
                .map(|r| b[r] + w[r * cols..(r + 1) * cols].iter().zip(&a).map(|(w, a)| w * a).sum::<f64>())
                .collect();
            let next = if l + 1 == self.num_layers() { z.clone() } else { z.iter().map(|&v| self.activation.apply(v)).collect() };
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        inputs.push(a);
        Ok((inputs, pre))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (mut inputs, _) = self.trace(x)?;
        Ok(inputs.pop().unwrap())
    }

    /// Reverse-mode gradients of `upstream . f(x)`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<NetGradient> {
        check_len("upstream", self.output_dim(), upstream.len())?;
        let (inputs, pre) = self.trace(x)?;
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.to_vec();
        for l in (0..self.num_layers()).rev() {
            if l + 1 != self.num_layers() {
                for (d, z) in delta.iter_mut().zip(&pre[l]) {
                    *d *= self.activation.derivative(*z);
                }
            }
            let (rows, cols) = (self.sizes[l + 1], self.sizes[l]);
            let (wo, bo) = self.layer_offsets(l);
            let a = &inputs[l];
            for r in 0..rows {
                let d = delta[r];
                grads[bo + r] = d;
                if d != 0.0 {
                    for (g, av) in grads[wo + r * cols..wo + (r + 1) * cols].iter_mut().zip(a) {
                        *g = d * av;
                    }
                }
            }
            let w = self.weight(l);
            let mut prev = vec![0.0; cols];
            for r in 0..rows {
                let d = delta[r];
                if d != 0.0 {
                    for (p, wv) in prev.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                        *p += d * wv;
                    }
                }
            }
            delta = prev;
        }
        let input = delta.iter().zip(&self.norm.std).map(|(d, s)| d / s).collect();
        Ok(NetGradient { params: grads, input })
    }
}
