//! Bias-corrected Adam.

use crate::error::{ensure, Result};

use super::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[&Tensor<T>]) -> Self {
        Self {
            config,
            first_moment: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            second_moment: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            step: 0,
        }
    }

    /// Applies one update using each parameter's accumulated gradient. A
    /// parameter without a gradient is treated as having a zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        ensure!(
            params.len() == self.first_moment.len(),
            Dimension,
            "optimizer tracks {} tensors, got {}",
            self.first_moment.len(),
            params.len()
        );
        for (i, p) in params.iter().enumerate() {
            ensure!(
                p.numel() == self.first_moment[i].len(),
                Dimension,
                "parameter {i} has {} values, moments have {}",
                p.numel(),
                self.first_moment[i].len()
            );
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step_size = T::of(c.lr / bias1);
        let inv_sqrt_bias2 = T::of(1.0 / bias2.sqrt());
        let eps = T::of(c.eps);
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad().map(<[T]>::to_vec);
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            let data = p.data_mut();
            for j in 0..data.len() {
                let g = grad.as_ref().map_or(T::zero(), |g| g[j]);
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                data[j] -= step_size * m[j] / (v[j].sqrt() * inv_sqrt_bias2 + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(values: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[values.len()], values).unwrap().with_grad()
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = param(&[1.0, -2.0, 3.0]);
        let mut opt = AdamState::new(AdamConfig::default(), &[&p]);
        p.accumulate_grad(&[0.0; 3]).unwrap();
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 3.0]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        for g in [0.3, -5.0, 1e-3] {
            let mut p = param(&[1.0]);
            let mut opt = AdamState::new(cfg, &[&p]);
            p.accumulate_grad(&[g]).unwrap();
            opt.step(&mut [&mut p]).unwrap();
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
            let moved = 1.0 - p.data()[0];
            assert!((moved.abs() - 0.01).abs() < 1e-6, "g={g}: moved {moved}");
            assert_eq!(moved.signum(), g.signum());
        }
    }

    #[test]
    fn two_steps_follow_recurrence() {
        let cfg = AdamConfig {
            lr: 0.05,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        };
        let grads = [[0.4, -1.2], [-0.1, 2.0]];
        let mut p = param(&[0.5, 0.25]);
        let mut opt = AdamState::new(cfg, &[&p]);
        for g in grads {
            p.zero_grad();
            p.accumulate_grad(&g).unwrap();
            opt.step(&mut [&mut p]).unwrap();
        }
        // Hand-rolled recurrence.
        let mut x = [0.5, 0.25];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            for j in 0..2 {
                m[j] = 0.5 * m[j] + 0.5 * g[j];
                v[j] = 0.999 * v[j] + 0.001 * g[j] * g[j];
                let mh = m[j] / (1.0 - 0.5f64.powi(t));
                let vh = v[j] / (1.0 - 0.999f64.powi(t));
                x[j] -= 0.05 * mh / (vh.sqrt() + 1e-8);
            }
        }
        for j in 0..2 {
            assert!((p.data()[j] - x[j]).abs() < 1e-12);
            assert!((opt.first_moment[0][j] - m[j]).abs() < 1e-15);
            assert!((opt.second_moment[0][j] - v[j]).abs() < 1e-15);
        }
        assert_eq!(opt.step, 2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = param(&[1.0, 2.0]);
        let mut opt = AdamState::new(AdamConfig::default(), &[&p]);
        let mut q = param(&[1.0]);
        assert!(opt.step(&mut [&mut q]).is_err());
        assert!(opt.step(&mut []).is_err());
    }
}
