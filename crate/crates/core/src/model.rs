//! Linear (GLM) and multilayer-perceptron classifiers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::argmax;
use crate::rng::{RngStream, Substream};

/// A dense affine map `x ↦ Wx + b` with `W` stored row-major
/// (`outputs × inputs`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs {
            return Err(Error::DimensionMismatch {
                expected: inputs * outputs,
                got: weights.len(),
            });
        }
        if bias.len() != outputs {
            return Err(Error::DimensionMismatch {
                expected: outputs,
                got: bias.len(),
            });
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// `uniform(−1/√fan_in, 1/√fan_in)` for weights and biases.
    fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        let weights = (0..inputs * outputs).map(|_| draw()).collect();
        let bias = (0..outputs).map(|_| draw()).collect();
        Self {
            inputs,
            outputs,
            weights,
            bias,
        }
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.weights[k * self.inputs..(k + 1) * self.inputs]
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.outputs).map(|k| {
            self.row(k)
                .iter()
                .zip(x)
                .fold(self.bias[k], |acc, (w, v)| acc + w * v)
        }));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Glm,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// Network shape requested by a training configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    Glm,
    Mlp { hidden: Vec<usize> },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Mlp {
            hidden: vec![64, 64],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Post-activation values of every layer for one input, kept for
/// backpropagation. `values[0]` is the input itself and the last entry
/// holds the logits.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    pub values: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl ModelParams {
    pub fn glm(layer: Layer) -> Self {
        Self {
            kind: ModelKind::Glm,
            layers: vec![layer],
            activation: Activation::Relu,
        }
    }

    pub fn mlp(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].outputs,
                    got: pair[1].inputs,
                });
            }
        }
        Ok(Self {
            kind: ModelKind::Mlp,
            layers,
            activation,
        })
    }

    /// Fresh parameters drawn from the `init` substream.
    pub fn init(
        arch: &Architecture,
        input_dim: usize,
        classes: usize,
        stream: &RngStream,
    ) -> Result<Self> {
        if input_dim == 0 || classes < 2 {
            return Err(Error::invalid(format!(
                "need input_dim ≥ 1 and ≥ 2 classes, got {input_dim} and {classes}"
            )));
        }
        let mut rng = stream.substream(Substream::Init);
        match arch {
            Architecture::Glm => Ok(Self::glm(Layer::uniform(input_dim, classes, &mut rng))),
            Architecture::Mlp { hidden } => {
                if hidden.contains(&0) {
                    return Err(Error::invalid("hidden layer widths must be positive"));
                }
                let dims: Vec<usize> = std::iter::once(input_dim)
                    .chain(hidden.iter().copied())
                    .chain(std::iter::once(classes))
                    .collect();
                let layers = dims
                    .windows(2)
                    .map(|w| Layer::uniform(w[0], w[1], &mut rng))
                    .collect();
                Self::mlp(layers, Activation::Relu)
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if li != last {
                activate(self.activation, &mut next);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.apply(&values[li], &mut out);
            if li != last {
                activate(self.activation, &mut out);
            }
            values.push(out);
        }
        Ok(ForwardCache { values })
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward_logits(x)?))
    }

    /// All parameters in a fixed order (per layer: weights then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::DimensionMismatch {
                expected: self.num_parameters(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }
}

fn activate(act: Activation, v: &mut [f64]) {
    match act {
        Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
    }
}
