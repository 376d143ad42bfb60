use super::mlp::{Gradients, MlpModel};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam moments, one block per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    /// L2 coefficient: the loss carries `λ‖W‖²` over weight matrices only.
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(model: &MlpModel, lr: f64, weight_decay: f64) -> Self {
        let shapes: Vec<usize> = model.param_blocks().iter().map(|b| b.len()).collect();
        Self {
            lr,
            weight_decay,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Adds the decay term to `grads` and applies one bias-corrected update.
    pub fn step(&mut self, model: &mut MlpModel, mut grads: Gradients) {
        let decay: Vec<bool> = (0..grads.len()).map(|i| model.block_is_weight(i)).collect();
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (i, block) in model.param_blocks_mut().into_iter().enumerate() {
            let g = &mut grads[i];
            if decay[i] && self.weight_decay > 0.0 {
                for (gv, w) in g.iter_mut().zip(block.iter()) {
                    *gv += 2.0 * self.weight_decay * w;
                }
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..block.len() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                block[k] -= self.lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
    }
}
