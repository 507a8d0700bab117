//! Fixed-topology multilayer perceptrons over flat parameter vectors.
//!
//! Layout contract shared with [`crate::tape`] and the checkpoint container:
//! for each layer, weights come first in `[fan_out][fan_in]` row-major order,
//! then the bias of length `fan_out`. Hidden layers apply the spec's
//! activation; the output layer is linear.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Swish,
}

impl Activation {
    #[inline]
    pub fn apply<F: Float>(self, x: F) -> F {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > F::zero() {
                    x
                } else {
                    F::zero()
                }
            }
            // x * sigmoid(x)
            Activation::Swish => x / (F::one() + (-x).exp()),
        }
    }

    /// Derivative expressed in terms of the pre-activation `x`.
    #[inline]
    pub fn derivative<F: Float>(self, x: F) -> F {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                F::one() - t * t
            }
            Activation::Relu => {
                if x > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
            Activation::Swish => {
                let s = F::one() / (F::one() + (-x).exp());
                s + x * s * (F::one() - s)
            }
        }
    }
}

/// Architecture of a fixed-topology MLP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize, activation: Activation) -> Self {
        assert!(input_dim > 0 && output_dim > 0, "dims must be positive");
        assert!(hidden.iter().all(|&h| h > 0), "hidden dims must be positive");
        NetworkSpec { input_dim, hidden: hidden.to_vec(), output_dim, activation }
    }

    /// `(fan_in, fan_out)` per affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    /// Total parameter count: sum over layers of `(fan_in + 1) * fan_out`.
    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// Flat array of 32-bit floats: the genome of an SCB and the weights of
/// agent networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f32>);

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        ParamVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f32>> for ParamVector {
    fn from(v: Vec<f32>) -> Self {
        ParamVector(v)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f32;
    fn index(&self, i: usize) -> &f32 {
        &self.0[i]
    }
}

/// One layer of structured parameters. Weights are `[fan_out][fan_in]`
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Packs structured layers into a flat [`ParamVector`].
pub fn flatten(layers: &[LayerParams]) -> ParamVector {
    let n: usize = layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
    let mut out = Vec::with_capacity(n);
    for l in layers {
        debug_assert_eq!(l.weights.len(), l.fan_in * l.fan_out);
        debug_assert_eq!(l.bias.len(), l.fan_out);
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.bias);
    }
    ParamVector(out)
}

/// Unpacks a flat [`ParamVector`] into per-layer structure.
pub fn unflatten(spec: &NetworkSpec, params: &ParamVector) -> Result<Vec<LayerParams>> {
    if params.len() != spec.param_count() {
        return Err(Error::Contract(format!(
            "param length {} does not match spec count {}",
            params.len(),
            spec.param_count()
        )));
    }
    let mut layers = Vec::new();
    let mut off = 0;
    for (fan_in, fan_out) in spec.layer_dims() {
        let w = params.0[off..off + fan_in * fan_out].to_vec();
        off += fan_in * fan_out;
        let b = params.0[off..off + fan_out].to_vec();
        off += fan_out;
        layers.push(LayerParams { fan_in, fan_out, weights: w, bias: b });
    }
    Ok(layers)
}

/// Xavier-uniform weight init, zero biases: weights from
/// `U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))`.
pub fn init_params(spec: &NetworkSpec, rng: &mut Rng) -> ParamVector {
    let mut out = Vec::with_capacity(spec.param_count());
    for (fan_in, fan_out) in spec.layer_dims() {
        let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
        for _ in 0..fan_in * fan_out {
            out.push(rng.uniform_in(-bound, bound));
        }
        out.extend(std::iter::repeat(0.0).take(fan_out));
    }
    ParamVector(out)
}

/// Forward pass of the MLP described by `spec` with parameters laid out per
/// the module contract. Generic over the float type so the 64-bit gradient
/// verification mode can reuse it.
pub fn forward_generic<F: Float>(spec: &NetworkSpec, params: &[F], input: &[F]) -> Result<Vec<F>> {
    if input.len() != spec.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "input length {} != spec input_dim {}",
            input.len(),
            spec.input_dim
        )));
    }
    if params.len() != spec.param_count() {
        return Err(Error::DimensionMismatch(format!(
            "param length {} != spec count {}",
            params.len(),
            spec.param_count()
        )));
    }
    let dims = spec.layer_dims();
    let n_layers = dims.len();
    let mut x = input.to_vec();
    let mut off = 0;
    for (l, (fan_in, fan_out)) in dims.into_iter().enumerate() {
        let w = &params[off..off + fan_in * fan_out];
        off += fan_in * fan_out;
        let b = &params[off..off + fan_out];
        off += fan_out;
        let mut y = Vec::with_capacity(fan_out);
        for o in 0..fan_out {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            let mut acc = b[o];
            for i in 0..fan_in {
                acc = acc + row[i] * x[i];
            }
            // Hidden layers activate; the output layer stays linear.
            if l + 1 < n_layers {
                acc = spec.activation.apply(acc);
            }
            y.push(acc);
        }
        x = y;
    }
    Ok(x)
}

/// f32 forward pass.
pub fn forward(spec: &NetworkSpec, params: &ParamVector, input: &[f32]) -> Result<Vec<f32>> {
    forward_generic(spec, &params.0, input)
}
