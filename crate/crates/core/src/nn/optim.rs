use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay coefficient, applied after the moment step.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            weight_decay,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adaptive-moment optimizer with bias correction and decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training {
                step: self.step as usize,
                message: format!("non-finite gradient at coordinate {i}"),
            });
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
            *p -= lr * weight_decay * *p;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut opt = Adam::new(3, AdamConfig::new(0.1, 0.0));
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..10 {
            opt.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_sign() {
        let lr = 1e-3;
        let mut opt = Adam::new(3, AdamConfig::new(lr, 0.0));
        let mut p = vec![0.0; 3];
        opt.step(&mut p, &[3.0, -0.02, 150.0]).unwrap();
        for (pi, sign) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((pi - sign * lr).abs() < 1e-8, "{pi}");
        }
    }

    #[test]
    fn decoupled_decay_shrinks_parameters() {
        let mut opt = Adam::new(1, AdamConfig::new(0.1, 0.5));
        let mut p = vec![2.0];
        opt.step(&mut p, &[0.0]).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn quadratic_loss_decreases() {
        let loss = |p: &[f64]| p.iter().enumerate().map(|(i, x)| (i + 1) as f64 * (x - 1.0).powi(2)).sum::<f64>();
        let mut p = vec![-3.0, 4.0, 0.0, 2.5];
        let initial = loss(&p);
        let mut opt = Adam::new(4, AdamConfig::new(0.05, 0.0));
        let mut history = Vec::new();
        for _ in 0..200 {
            let g: Vec<f64> = p.iter().enumerate().map(|(i, x)| 2.0 * (i + 1) as f64 * (x - 1.0)).collect();
            opt.step(&mut p, &g).unwrap();
            history.push(loss(&p));
        }
        assert!(*history.last().unwrap() < initial * 1e-2);
        // after warm-up the loss is monotone apart from small oscillations near the optimum
        assert!(history[50] < history[10]);
    }

    #[test]
    fn nan_gradient_is_a_training_error() {
        let mut opt = Adam::new(2, AdamConfig::default());
        let mut p = vec![0.0; 2];
        assert!(matches!(opt.step(&mut p, &[f64::NAN, 0.0]), Err(Error::Training { .. })));
    }
}
