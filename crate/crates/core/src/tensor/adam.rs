use super::{ParamStore, Tensor};
use crate::error::{contract_err, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdamSlot {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u32,
}

/// Bias-corrected Adam. Slots are indexed like the [`ParamStore`] they update;
/// each slot counts its own steps, so parameters that join training late
/// start with fresh bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub slots: Vec<AdamSlot>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore<f32>) -> Self {
        let slots = params
            .iter()
            .map(|(_, _, t)| AdamSlot { m: vec![0.0; t.numel()], v: vec![0.0; t.numel()], step: 0 })
            .collect();
        Adam { config, slots }
    }

    /// Apply one update to every parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore<f32>, grads: &[Option<Tensor<f32>>]) -> Result<()> {
        if grads.len() != params.len() || self.slots.len() != params.len() {
            return Err(contract_err!(
                "adam: {} params, {} grads, {} slots",
                params.len(),
                grads.len(),
                self.slots.len()
            ));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        for ((id, slot), grad) in params.ids().collect::<Vec<_>>().into_iter().zip(&mut self.slots).zip(grads) {
            let Some(grad) = grad else { continue };
            let p = params.get_mut(id);
            if grad.numel() != p.numel() {
                return Err(contract_err!("adam: gradient size mismatch for parameter {}", id.index()));
            }
            slot.step += 1;
            let bc1 = 1.0 - beta1.powi(slot.step as i32);
            let bc2 = 1.0 - beta2.powi(slot.step as i32);
            for (((w, &g), m), v) in
                p.data_mut().iter_mut().zip(grad.data()).zip(&mut slot.m).zip(&mut slot.v)
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
