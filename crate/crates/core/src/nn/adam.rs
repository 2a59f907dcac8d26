use serde::{Deserialize, Serialize};

use crate::error::{contract_err, param_err, Result};
use crate::scalar::Scalar;

/// Bias-corrected Adam state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AdamState<T: Scalar> {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(lr > 0.0) || !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
            return Err(param_err(format!(
                "invalid Adam settings lr={lr} beta1={beta1} beta2={beta2} eps={eps}"
            )));
        }
        Ok(Self { step: 0, lr, beta1, beta2, eps, m: vec![T::zero(); n_params], v: vec![T::zero(); n_params] })
    }

    /// `lr = 1e-3`, `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
    pub fn with_defaults(n_params: usize) -> Self {
        Self::new(n_params, 1e-3, 0.9, 0.999, 1e-8).expect("default Adam settings are valid")
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.m.iter_mut().for_each(|x| *x = T::zero());
        self.v.iter_mut().for_each(|x| *x = T::zero());
    }

    /// One descent step along `grad`.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(contract_err(format!(
                "Adam state has {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - T::lit(self.beta1.powi(self.step as i32));
        let c2 = T::one() - T::lit(self.beta2.powi(self.step as i32));
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
