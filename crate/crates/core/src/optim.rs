//! SGD and Adam over a [`ParamStore`].

use crate::error::TrainError;
use crate::graph::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn new(lr: f64) -> Result<Self, TrainError> {
        if !(lr > 0.0) {
            return Err(TrainError::LearningRate(lr));
        }
        Ok(Sgd { lr })
    }

    /// `w -= lr * grad` for every parameter.
    pub fn step(&self, params: &mut ParamStore) {
        for p in params.params_mut() {
            for (w, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                *w -= self.lr * g;
            }
        }
    }
}

/// Adam with bias-corrected moments. Moment buffers are created lazily on
/// the first step and keyed by parameter position.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self, TrainError> {
        if !(lr > 0.0) {
            return Err(TrainError::LearningRate(lr));
        }
        Ok(Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    /// `lr = 0.001, beta1 = 0.9, beta2 = 0.999, eps = 1e-8`.
    pub fn with_defaults() -> Self {
        Self::new(1e-3, 0.9, 0.999, 1e-8).expect("positive lr")
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore) {
        if self.m.is_empty() {
            for (_, p) in params.iter() {
                self.m.push(Tensor::zeros(p.value.shape()));
                self.v.push(Tensor::zeros(p.value.shape()));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.params_mut().zip(&mut self.m).zip(&mut self.v) {
            let (w, g) = (p.value.data_mut(), p.grad.data());
            for i in 0..w.len() {
                let mi = &mut m.data_mut()[i];
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g[i];
                let vi = &mut v.data_mut()[i];
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m.data()[i] / c1;
                let v_hat = v.data()[i] / c2;
                w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64, g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(w)).unwrap();
        s.get_mut(id).grad = Tensor::scalar(g);
        s
    }

    #[test]
    fn sgd_step_by_definition() {
        let mut s = single(1.0, 0.5);
        Sgd::new(0.1).unwrap().step(&mut s);
        assert!((s.by_name("w").unwrap().value.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_gradient_is_fixed_point() {
        let mut s = single(0.3, 0.0);
        Sgd::new(0.7).unwrap().step(&mut s);
        assert_eq!(s.by_name("w").unwrap().value.data()[0], 0.3);
    }

    #[test]
    fn non_positive_lr_is_rejected() {
        assert!(Sgd::new(0.0).is_err());
        assert!(Sgd::new(-1.0).is_err());
        assert!(Adam::new(0.0, 0.9, 0.999, 1e-8).is_err());
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        // t=1: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps).
        let mut s = single(0.0, 1.0);
        let mut adam = Adam::with_defaults();
        adam.step(&mut s);
        let w = s.by_name("w").unwrap().value.data()[0];
        let expected = -1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((w - expected).abs() < 1e-15, "{w}");
    }

    #[test]
    fn adam_moments_persist_across_steps() {
        let mut s = single(0.0, 1.0);
        let mut adam = Adam::with_defaults();
        adam.step(&mut s);
        adam.step(&mut s);
        // Constant gradient: bias-corrected ratio stays 1, so two equal steps.
        let w = s.by_name("w").unwrap().value.data()[0];
        assert!((w + 2e-3).abs() < 1e-10, "{w}");
        assert_eq!(adam.steps_taken(), 2);
    }
}
