use serde::{Deserialize, Serialize};

use super::mlp::{Grad, Mlp};
use crate::error::{Error, Result};

/// Plain SGD with optional heavy-ball momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<Grad>,
    pub step_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
}

impl OptState {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {learning_rate} must be finite and non-negative"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: None,
            step_count: 0,
        })
    }

    pub fn from_config(cfg: SgdConfig) -> Result<Self> {
        Self::new(cfg.learning_rate, cfg.momentum)
    }
}

/// `v ← μ·v + g`, `θ ← θ − lr·v`. A non-finite or mis-shaped gradient leaves
/// both the model and the optimizer untouched.
pub fn sgd_step(model: &mut Mlp, grad: &Grad, opt: &mut OptState) -> Result<()> {
    if !grad.is_congruent(model) {
        return Err(Error::shape("gradient is not congruent with the model"));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    let lr = opt.learning_rate;
    if opt.momentum > 0.0 {
        let v = opt.velocity.get_or_insert_with(|| Grad::zeros_like(model));
        if !v.is_congruent(model) {
            return Err(Error::shape(
                "optimizer state is not congruent with the model",
            ));
        }
        let mu = opt.momentum;
        for (k, layer) in model.layers.iter_mut().enumerate() {
            for ((w, vel), &g) in layer
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(v.weights[k].as_mut_slice())
                .zip(grad.weights[k].as_slice())
            {
                *vel = mu * *vel + g;
                *w -= lr * *vel;
            }
            for ((b, vel), &g) in layer
                .biases
                .iter_mut()
                .zip(v.biases[k].iter_mut())
                .zip(&grad.biases[k])
            {
                *vel = mu * *vel + g;
                *b -= lr * *vel;
            }
        }
    } else {
        for (k, layer) in model.layers.iter_mut().enumerate() {
            for (w, &g) in layer
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(grad.weights[k].as_slice())
            {
                *w -= lr * g;
            }
            for (b, &g) in layer.biases.iter_mut().zip(&grad.biases[k]) {
                *b -= lr * g;
            }
        }
    }
    opt.step_count += 1;
    Ok(())
}
