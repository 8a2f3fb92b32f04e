use serde::{Deserialize, Serialize};

use super::network::Network;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// ADAM optimizer state for every parameter of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Applies one bias-corrected update using the gradients stored in `network`.
    ///
    /// Gradients are checked for finiteness before any parameter is touched.
    pub fn step(&mut self, network: &mut Network) -> Result<()> {
        let specs = network.specs();
        let mut params = network.parameters_mut();
        for p in &params {
            if !p.grad.is_finite() {
                return Err(Error::NonFiniteGradient {
                    layer: p.layer,
                    kind: format!("{} {}", specs[p.layer].label(), p.name),
                });
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != params.len()
            || params
                .iter()
                .zip(&self.first_moment)
                .any(|(p, m)| p.value.shape() != m.shape())
        {
            return Err(Error::Internal("optimizer state does not match network parameters".into()));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            adam_update(
                p.value.values_mut(),
                p.grad.values(),
                m.values_mut(),
                v.values_mut(),
                self.learning_rate,
                self.beta1,
                self.beta2,
                self.eps,
                correction1,
                correction2,
            );
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    correction1: f64,
    correction2: f64,
) {
    for i in 0..param.len() {
        let g = grad[i];
        first[i] = beta1 * first[i] + (1.0 - beta1) * g;
        second[i] = beta2 * second[i] + (1.0 - beta2) * g * g;
        let m_hat = first[i] / correction1;
        let v_hat = second[i] / correction2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
