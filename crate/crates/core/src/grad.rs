//! Analytic gradients of weighted softmax cross-entropy.
//!
//! Every objective in the crate is a weighted sum of cross-entropy terms
//! `Σ coeff · ℓ(θ, x, y)`, where one forward input may carry several terms
//! (a mixed input is scored against both of its source labels). The logit
//! gradient of such a sum is `Σ coeff · (softmax(z) − e_y)`, accumulated
//! term by term, and is then pushed back through the network.

use crate::error::{Error, Result};
use crate::loss::{cross_entropy, softmax};
use crate::model::{Activation, ForwardCache, Layer, ModelParams};

/// One `coeff · ℓ(θ, x, label)` term attached to a forward input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerm {
    pub label: usize,
    pub coeff: f64,
}

/// Gradient with the same layout as [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Layer>,
}

impl Gradient {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v = 0.0);
            l.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Adds `∇θ Σ_t coeff_t · ℓ(θ, x, label_t)` into `grad` and returns the
/// weighted loss `Σ_t coeff_t · ℓ_t`.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    terms: &[LossTerm],
    grad: &mut Gradient,
) -> Result<f64> {
    let logits = cache.logits();
    let probs = softmax(logits);
    let mut delta = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for t in terms {
        let ce = cross_entropy(logits, t.label)?;
        loss += t.coeff * ce;
        for (k, d) in delta.iter_mut().enumerate() {
            let onehot = if k == t.label { 1.0 } else { 0.0 };
            *d += t.coeff * (probs[k] - onehot);
        }
    }

    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let input = &cache.values[li];
        let g = &mut grad.layers[li];
        for (k, &dk) in delta.iter().enumerate() {
            g.bias[k] += dk;
            let row = &mut g.weights[k * layer.inputs..(k + 1) * layer.inputs];
            for (gw, &a) in row.iter_mut().zip(input) {
                *gw += dk * a;
            }
        }
        if li == 0 {
            break;
        }
        let mut prev = vec![0.0; layer.inputs];
        for (k, &dk) in delta.iter().enumerate() {
            for (p, &w) in prev.iter_mut().zip(layer.row(k)) {
                *p += w * dk;
            }
        }
        match params.activation {
            Activation::Relu => {
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
        }
        delta = prev;
    }
    Ok(loss)
}

/// Gradient of `Σ_i coeffs[i] · ℓ(θ, inputs[i], labels[i])` together with
/// that weighted loss.
pub fn gradient(
    params: &ModelParams,
    inputs: &[&[f64]],
    labels: &[usize],
    coeffs: &[f64],
) -> Result<(f64, Gradient)> {
    if labels.len() != inputs.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            got: labels.len(),
        });
    }
    if coeffs.len() != inputs.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            got: coeffs.len(),
        });
    }
    let mut grad = Gradient::zeros_like(params);
    let mut loss = 0.0;
    for ((x, &y), &c) in inputs.iter().zip(labels).zip(coeffs) {
        let cache = params.forward_cached(x)?;
        loss += backward(
            params,
            &cache,
            &[LossTerm { label: y, coeff: c }],
            &mut grad,
        )?;
    }
    Ok((loss, grad))
}
