use serde::{Deserialize, Serialize};

use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { step_size: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-7 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step_size > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::error::invalid(format!("bad Adam hyperparameters {self:?}")))
        }
    }
}

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self { config, t: 0, m: vec![T::zero(); n_params], v: vec![T::zero(); n_params] }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as f64;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let corr1 = T::of(1.0 / (1.0 - c.beta1.powf(t)));
        let corr2 = T::of(1.0 / (1.0 - c.beta2.powf(t)));
        let lr = T::of(c.step_size);
        let eps = T::of(c.epsilon);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            let m_hat = self.m[i] * corr1;
            let v_hat = self.v[i] * corr2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = AdamState::<f64>::new(AdamConfig::default(), 3);
        let mut p = vec![1.0, -2.0, 0.5];
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_is_sign_times_rate() {
        let mut st = AdamState::<f64>::new(AdamConfig::default(), 3);
        let mut p = vec![0.0; 3];
        st.step(&mut p, &[0.5, -3.0, 1e-2]).unwrap();
        assert!((p[0] + 0.001).abs() < 1e-8);
        assert!((p[1] - 0.001).abs() < 1e-8);
        assert!((p[2] + 0.001).abs() < 1e-7);
    }

    #[test]
    fn converges_on_quadratic() {
        let cfg = AdamConfig { step_size: 0.05, ..AdamConfig::default() };
        let mut st = AdamState::<f64>::new(cfg, 1);
        let mut w = vec![0.0];
        for _ in 0..500 {
            let g = 2.0 * (w[0] - 3.0);
            st.step(&mut w, &[g]).unwrap();
        }
        assert!((w[0] - 3.0).abs() < 1e-2, "{}", w[0]);
    }

    #[test]
    fn length_mismatch() {
        let mut st = AdamState::<f32>::new(AdamConfig::default(), 2);
        assert!(matches!(st.step(&mut [0.0; 3], &[0.0; 3]), Err(Error::Shape(_))));
        assert!(AdamConfig { beta1: 1.0, ..AdamConfig::default() }.validate().is_err());
    }
}
