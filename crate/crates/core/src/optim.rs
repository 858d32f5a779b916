use alloc::vec;
use alloc::vec::Vec;

use crate::model::Model;

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: i32,
    moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update to every trainable parameter of `model` using its
    /// accumulated gradients.
    pub fn step(&mut self, model: &mut Model) {
        self.step += 1;
        let bc1 = 1.0 - libm::powf(self.beta1, self.step as f32);
        let bc2 = 1.0 - libm::powf(self.beta2, self.step as f32);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let moments = &mut self.moments;
        let mut slot = 0;
        model.visit_params(&mut |_, p| {
            if !p.trainable {
                return;
            }
            if moments.len() == slot {
                moments.push((vec![0.0; p.value.len()], vec![0.0; p.value.len()]));
            }
            let (m, v) = &mut moments[slot];
            slot += 1;
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] -= lr * mhat / (libm::sqrtf(vhat) + eps);
            }
        });
    }
}
