use alloc::vec;
use alloc::vec::Vec;

use super::{math, NumError, Tensor};

/// Adam with bias correction. Moment buffers are created on the first step
/// and must keep matching the parameter list afterwards.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update from the current `grad` buffers. Gradients are
    /// left untouched.
    pub fn step(&mut self, params: Vec<&mut Tensor>) -> Result<(), NumError> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(NumError::Shape {
                op: "adam_step",
                left: vec![self.first.len()],
                right: vec![params.len()],
            });
        }
        for (m, p) in self.first.iter().zip(&params) {
            if m.len() != p.numel() {
                return Err(NumError::Shape {
                    op: "adam_step",
                    left: vec![m.len()],
                    right: p.shape().to_vec(),
                });
            }
        }
        self.step_count += 1;
        let t = i32::try_from(self.step_count).unwrap_or(i32::MAX);
        let c1 = 1.0 - math::powi(self.beta1, t);
        let c2 = 1.0 - math::powi(self.beta2, t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, m), v) in params
            .into_iter()
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            if !p.requires_grad() {
                continue;
            }
            let (data, grad) = p.data_and_grad_mut();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data[i] -= lr * m_hat / (math::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}
