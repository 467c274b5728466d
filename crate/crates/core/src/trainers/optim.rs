use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `lr0 / 2^floor(epoch / period)`.
pub fn lr_at_epoch(lr0: f64, period: usize, epoch: usize) -> f64 {
    assert!(period >= 1, "halving period must be at least 1");
    lr0 / 2f64.powi((epoch / period) as i32)
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    m: Vec<S>,
    v: Vec<S>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { m: vec![S::zero(); len], v: vec![S::zero(); len], step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn moments(&self) -> (&[S], &[S]) {
        (&self.m, &self.v)
    }

    /// Returns the updated parameters. Fails without touching the state if
    /// any gradient is non-finite.
    pub fn step(&mut self, params: &[S], grads: &[S]) -> Result<Vec<S>> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                format!("optimizer of {}", self.m.len()),
                format!("{} params, {} grads", params.len(), grads.len()),
            ));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite { what: format!("gradient (parameter {i})") });
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let c1 = S::one() - S::of(self.beta1.powi(t));
        let c2 = S::one() - S::of(self.beta2.powi(t));
        let (lr, eps) = (S::of(self.lr), S::of(self.eps));
        let mut out = Vec::with_capacity(params.len());
        for (((&p, &g), m), v) in params.iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (S::one() - b1) * g;
            *v = b2 * *v + (S::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            out.push(p - lr * m_hat / (v_hat.sqrt() + eps));
        }
        Ok(out)
    }
}
