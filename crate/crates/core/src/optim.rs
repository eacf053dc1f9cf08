use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Gradient;
use crate::model::ModelParams;

/// Plain SGD (no momentum) with decoupled-from-bias weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    learning_rate: f64,
    weight_decay: f64,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "weight decay must be nonnegative, got {weight_decay}"
            )));
        }
        Ok(Self {
            learning_rate,
            weight_decay,
            step_count: 0,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// `θ ← θ − lr·(g + wd·θ)` on weights, `b ← b − lr·g` on biases.
pub fn sgd_step(params: &mut ModelParams, grad: &Gradient, opt: &mut OptimizerState) -> Result<()> {
    if grad.layers.len() != params.layers.len() {
        return Err(Error::DimensionMismatch {
            expected: params.layers.len(),
            got: grad.layers.len(),
        });
    }
    for (li, (p, g)) in params.layers.iter().zip(&grad.layers).enumerate() {
        if p.weights.len() != g.weights.len() || p.bias.len() != g.bias.len() {
            return Err(Error::DimensionMismatch {
                expected: p.weights.len() + p.bias.len(),
                got: g.weights.len() + g.bias.len(),
            });
        }
        if let Some(pos) = g.weights.iter().chain(&g.bias).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of layer {li}, entry {pos}, at step {}",
                opt.step_count
            )));
        }
    }
    let (lr, wd) = (opt.learning_rate, opt.weight_decay);
    for (p, g) in params.layers.iter_mut().zip(&grad.layers) {
        for (w, gw) in p.weights.iter_mut().zip(&g.weights) {
            *w -= lr * (gw + wd * *w);
        }
        for (b, gb) in p.bias.iter_mut().zip(&g.bias) {
            *b -= lr * gb;
        }
    }
    opt.step_count += 1;
    if !params.is_finite() {
        return Err(Error::NonFinite(format!(
            "parameters after step {}",
            opt.step_count
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;

    fn scalar(theta: f64) -> ModelParams {
        ModelParams::glm(Layer::new(1, 1, vec![theta], vec![0.0]).unwrap())
    }

    fn grad_of(g: f64) -> Gradient {
        Gradient {
            layers: vec![Layer::new(1, 1, vec![g], vec![0.0]).unwrap()],
        }
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = scalar(1.3);
        let mut opt = OptimizerState::new(0.1, 0.0).unwrap();
        sgd_step(&mut p, &grad_of(0.0), &mut opt).unwrap();
        assert_eq!(p.layers[0].weights[0], 1.3);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn plain_and_decay_steps() {
        let mut p = scalar(1.0);
        sgd_step(
            &mut p,
            &grad_of(0.5),
            &mut OptimizerState::new(0.1, 0.0).unwrap(),
        )
        .unwrap();
        assert!((p.layers[0].weights[0] - 0.95).abs() < 1e-15);

        let mut p = scalar(1.0);
        sgd_step(
            &mut p,
            &grad_of(0.0),
            &mut OptimizerState::new(0.1, 1.0).unwrap(),
        )
        .unwrap();
        assert!((p.layers[0].weights[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn bias_is_exempt_from_decay() {
        let mut p = ModelParams::glm(Layer::new(1, 1, vec![1.0], vec![1.0]).unwrap());
        sgd_step(
            &mut p,
            &grad_of(0.0),
            &mut OptimizerState::new(0.1, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(p.layers[0].bias[0], 1.0);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = scalar(1.0);
        let err = sgd_step(
            &mut p,
            &grad_of(f64::NAN),
            &mut OptimizerState::new(0.1, 0.0).unwrap(),
        );
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(p.layers[0].weights[0], 1.0);
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(OptimizerState::new(0.0, 0.0).is_err());
        assert!(OptimizerState::new(0.1, -1.0).is_err());
    }
}
