//! Adam over a flat parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::tensor::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Adam { learning_rate, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// Rebuilds an optimizer from saved moments.
    pub fn from_parts(learning_rate: f64, step: u64, m: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if m.len() != v.len() {
            return Err(contract_err!("moment vectors differ in length: {} vs {}", m.len(), v.len()));
        }
        Ok(Adam { learning_rate, step, m, v })
    }

    /// First and second moment estimates.
    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update; the bias correction is folded into the step size.
    pub fn update<T: Real>(&mut self, params: &mut [T], grad: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(contract_err!(
                "optimizer holds {} slots, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grad.len()
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let alpha = self.learning_rate * (1.0 - BETA2.powi(t)).sqrt() / (1.0 - BETA1.powi(t));
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            let g = g.as_f64();
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p = T::from_f64c(p.as_f64() - alpha * *m / (v.sqrt() + EPSILON));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adam::new(3, 0.01);
        let mut p = vec![1.0f64, 1.0, 1.0];
        opt.update(&mut p, &[0.5, -2.0, 0.0]).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-6);
        assert!((p[1] - 1.01).abs() < 1e-6);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut opt = Adam::new(2, 0.05);
        let mut p = vec![3.0f64, -2.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            opt.update(&mut p, &g).unwrap();
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3, "{p:?}");
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut opt = Adam::new(2, 0.0);
        let mut p = vec![0.3f32, 0.7];
        opt.update(&mut p, &[1.0, -1.0]).unwrap();
        assert_eq!(p, vec![0.3, 0.7]);
        assert!(opt.update(&mut p, &[1.0]).is_err());
    }
}
