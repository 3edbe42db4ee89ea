//! Adam optimizer over the network's flat parameter vector.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Standard constants: beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(num_params: usize) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam: {} params, {} grads, state sized {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction, the very first Adam step is ~lr * sign(g).
        let mut adam = AdamState::new(2);
        let mut params = vec![1.0, -1.0];
        adam.step(&mut params, &[0.5, -2.0], 0.1).unwrap();
        assert!((params[0] - (1.0 - 0.1)).abs() < 1e-6);
        assert!((params[1] - (-1.0 + 0.1)).abs() < 1e-6);
    }

    #[test]
    fn converges_on_quadratic() {
        // Minimize (x - 3)^2 + (y + 2)^2.
        let mut adam = AdamState::new(2);
        let mut p = vec![0.0, 0.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 3.0), 2.0 * (p[1] + 2.0)];
            adam.step(&mut p, &g, 0.05).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 1e-3);
        assert!((p[1] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let mut adam = AdamState::new(2);
        let mut p = vec![0.0; 3];
        assert!(adam.step(&mut p, &[0.0; 3], 0.1).is_err());
    }
}
