use serde::{Deserialize, Serialize};

use super::tensor::ComplexTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// L2 coefficient added to the gradient before the moment updates.
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction. Real and imaginary parts are independent
/// coordinates.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[ComplexTensor]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.data().len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.data().len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &[f32] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f32] {
        &self.v[i]
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [ComplexTensor], grads: &[ComplexTensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::arg(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.data().len() != self.m[i].len() {
                return Err(Error::arg(format!("adam shape mismatch on tensor {i}")));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - (c.beta1 as f64).powi(t);
        let bc2 = 1.0 - (c.beta2 as f64).powi(t);
        let step_size = (c.lr as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gd = gv + c.weight_decay * *pv;
                *mv = c.beta1 * *mv + (1.0 - c.beta1) * gd;
                *vv = c.beta2 * *vv + (1.0 - c.beta2) * gd * gd;
                let denom = vv.sqrt() / bc2_sqrt + c.eps;
                *pv -= step_size * *mv / denom;
            }
        }
        Ok(())
    }
}
