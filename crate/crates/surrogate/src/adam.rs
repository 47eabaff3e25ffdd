//! Adam with bias correction, followed by projection of flagged tensors.

use crate::tensor::{Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Param]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// One update. Slots line up with `params` and `grads`.
    pub fn update(&mut self, params: &mut [&mut Param], grads: &[Tensor]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, p) in params.iter_mut().enumerate() {
            assert_eq!(p.value.shape(), grads[k].shape(), "gradient shape for {}", p.name);
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (j, (theta, &g)) in p.value.data_mut().iter_mut().zip(grads[k].data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *theta -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            p.project();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_closed_form() {
        let mut p = Param::new("w", Tensor::vector(vec![0.2, -0.4]), false);
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]);
        adam.update(&mut [&mut p], &[Tensor::vector(vec![1.0, 1.0])]);
        let step = 1e-3 / (1.0 + 1e-7);
        assert!((p.value.data()[0] - (0.2 - step)).abs() < 1e-15);
        assert!((p.value.data()[1] - (-0.4 - step)).abs() < 1e-15);
    }

    #[test]
    fn flagged_entry_clipped_at_zero() {
        let mut p = Param::new("w", Tensor::vector(vec![0.0005]), true);
        let mut adam = AdamState::new(AdamConfig::default(), &[&p]);
        adam.update(&mut [&mut p], &[Tensor::vector(vec![1.0])]);
        assert_eq!(p.value.data(), &[0.0]);
    }

    #[test]
    fn flagged_tensors_stay_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut w = Param::new("w", Tensor::vector((0..40).map(|_| rng.gen_range(0.0..0.01)).collect()), true);
        let mut b = Param::new("b", Tensor::vector(vec![0.0; 5]), false);
        let mut adam = AdamState::new(AdamConfig { learning_rate: 5e-3, ..Default::default() }, &[&w, &b]);
        let mut bias_went_negative = false;
        for _ in 0..50 {
            let gw = Tensor::vector((0..40).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let gb = Tensor::vector((0..5).map(|_| rng.gen_range(0.0..1.0)).collect());
            adam.update(&mut [&mut w, &mut b], &[gw, gb]);
            assert!(w.value.min() >= 0.0);
            bias_went_negative |= b.value.min() < 0.0;
        }
        assert!(bias_went_negative, "unflagged tensors are not projected");
        assert_eq!(adam.step, 50);
    }
}
