use serde::{Deserialize, Serialize};

use super::tensor::Real;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// Adam with bias correction. Moments are stored per parameter in the
/// canonical flat order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<F>,
    pub v: Vec<F>,
}

impl<F: Real> Adam<F> {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
        }
    }

    /// Applies one update. A non-finite gradient leaves every parameter
    /// and moment untouched and reports the first offending index.
    pub fn step(&mut self, params: &mut [F], grads: &[F], lr: f64) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::Shape {
                layer: "adam".into(),
                expected: format!("{} parameters", self.m.len()),
                found: format!("{} params, {} grads", params.len(), grads.len()),
            });
        }
        if let Some((index, g)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(NnError::NonFinite {
                what: "gradient",
                index,
                value: g.f64(),
            });
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let bc1 = F::of(1.0 - c.beta1.powi(t));
        let bc2 = F::of(1.0 - c.beta2.powi(t));
        let (lr, eps) = (F::of(lr), F::of(c.eps));
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = b1 * *m + (F::one() - b1) * *g;
            *v = b2 * *v + (F::one() - b2) * *g * *g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
