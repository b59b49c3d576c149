use super::tape::Gradients;
use super::tensor::{ParamId, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with an explicit update mask. Parameters outside the mask, or with
/// `requires_grad == false`, are never written.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    moments: Vec<Option<(Vec<f32>, Vec<f32>)>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParameterStore<f32>) -> Self {
        Adam {
            cfg,
            step: 0,
            moments: vec![None; params.len()],
        }
    }

    /// Rescales masked gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip(grads: &mut Gradients<f32>, mask: impl Fn(ParamId) -> bool, max_norm: f32) -> f32 {
        let norm = grads.norm(mask);
        if max_norm > 0.0 && norm > max_norm {
            grads.scale(max_norm / norm);
        }
        norm
    }

    pub fn step(
        &mut self,
        params: &mut ParameterStore<f32>,
        grads: &Gradients<f32>,
        mask: impl Fn(ParamId) -> bool,
    ) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step);
        let bc2 = 1.0 - beta2.powi(self.step);
        for id in params.ids() {
            if !mask(id) || !params.get(id).requires_grad {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = self.moments[id.0]
                .get_or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let w = params.get_mut(id).data_mut();
            for k in 0..g.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                w[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
