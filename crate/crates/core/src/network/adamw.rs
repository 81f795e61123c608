//! AdamW with linear learning-rate warmup and decoupled weight decay.
//! Decay applies only to tensors flagged decay-eligible by the visitor;
//! biases and layer-norm parameters are exempt.

use super::{ModelConfig, ModelParams};

pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    warmup_steps: usize,
    t: usize,
    m: ModelParams,
    v: ModelParams,
}

impl AdamW {
    pub fn new(config: &ModelConfig, lr: f64, weight_decay: f64, warmup_steps: usize) -> AdamW {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            warmup_steps,
            t: 0,
            m: ModelParams::zeros(config),
            v: ModelParams::zeros(config),
        }
    }

    /// Learning rate at 1-based step `t`: a linear ramp over the warmup
    /// steps, constant afterwards.
    pub fn lr_at(&self, t: usize) -> f64 {
        if self.warmup_steps == 0 || t >= self.warmup_steps {
            self.lr
        } else {
            self.lr * t as f64 / self.warmup_steps as f64
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.t += 1;
        let lr_t = self.lr_at(self.t);
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((((_, theta, decay), (_, g, _)), (_, m, _)), (_, v, _)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..theta.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                let mut update = m_hat / (v_hat.sqrt() + self.eps);
                if decay {
                    update += self.weight_decay * theta.data[i];
                }
                theta.data[i] -= lr_t * update;
            }
        }
    }
}
