//! Adam with bias correction, over flat parameter slices.

use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 1e-4;

/// Optimizer state: one first/second moment buffer per parameter tensor,
/// aligned with the stack's parameter order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `params` and `grads` must match the sizes the state was
    /// built with.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim(format!(
                "adam over {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::dim(format!(
                    "adam tensor of {} elements, got {} params / {} grads",
                    m.len(),
                    p.len(),
                    g.len()
                )));
            }
            for i in 0..m.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamState::new(1e-4, &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let orig = p.clone();
        state.step(&mut [&mut p], &[vec![0.0; 3]]).unwrap();
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_is_minus_lr_times_sign() {
        let mut state = AdamState::new(1e-4, &[2]);
        let mut p = vec![0.0, 0.0];
        state.step(&mut [&mut p], &[vec![1.0, 1.0]]).unwrap();
        for v in &p {
            // bias-corrected first step: -lr * g / (|g| + eps)
            assert!((v + 1e-4).abs() < 1e-10, "delta {v}");
        }
    }

    #[test]
    fn deterministic_from_identical_state() {
        let state = AdamState::new(1e-3, &[4]);
        let grads = vec![vec![0.3, -0.7, 0.1, 2.0]];
        let mut s1 = state.clone();
        let mut s2 = state.clone();
        let mut p1 = vec![1.0, 2.0, 3.0, 4.0];
        let mut p2 = p1.clone();
        for _ in 0..5 {
            s1.step(&mut [&mut p1], &grads).unwrap();
            s2.step(&mut [&mut p2], &grads).unwrap();
        }
        assert_eq!(p1, p2);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut state = AdamState::new(1e-4, &[2]);
        let mut p = vec![0.0, 0.0, 0.0];
        assert!(state.step(&mut [&mut p], &[vec![1.0, 1.0]]).is_err());
        let mut q = vec![0.0, 0.0];
        assert!(state.step(&mut [&mut q], &[vec![1.0, 1.0, 1.0]]).is_err());
    }
}
