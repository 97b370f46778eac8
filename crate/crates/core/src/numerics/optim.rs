//! AdamW with a linear-warmup / half-cosine learning-rate schedule.

use super::param::Param;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.15,
        }
    }
}

/// Linear ramp from 0 to `base_lr` over `warmup` steps, then half-cosine
/// down to 0 at `total`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub warmup: u64,
    pub total: u64,
}

impl CosineSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup {
            return self.base_lr * step as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup);
        if span == 0 {
            return if step <= self.warmup { self.base_lr } else { 0.0 };
        }
        let progress = ((step - self.warmup) as f64 / span as f64).min(1.0);
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// First/second moments per parameter plus the step counter.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub config: AdamWConfig,
    pub schedule: CosineSchedule,
    step: u64,
    moments: Vec<(String, Tensor, Tensor)>,
}

impl OptimState {
    pub fn new(config: AdamWConfig, schedule: CosineSchedule, params: &[&Param]) -> Self {
        let moments = params
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    Tensor::zeros(p.value.shape()),
                    Tensor::zeros(p.value.shape()),
                )
            })
            .collect();
        OptimState {
            config,
            schedule,
            step: 0,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Learning rate the schedule assigns to `step`.
    pub fn cosine_lr(&self, step: u64) -> f64 {
        self.schedule.lr(step)
    }

    /// One AdamW update; the `t`-th call (1-based) uses `cosine_lr(t)`.
    /// Returns the learning rate used.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<f64> {
        if params.len() != self.moments.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} params, got {}",
                self.moments.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step;
        let lr = self.schedule.lr(t);
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);
        for (p, (name, m, v)) in params.iter_mut().zip(self.moments.iter_mut()) {
            if &p.name != name {
                return Err(Error::InvalidArgument(format!(
                    "optimizer param order changed: {} vs {name}",
                    p.name
                )));
            }
            let decay = if p.decay { lr * weight_decay } else { 0.0 };
            let w = p.value.data_mut();
            let g = p.grad.data();
            for i in 0..w.len() {
                w[i] -= decay * w[i];
                let mi = beta1 * m.data()[i] + (1.0 - beta1) * g[i];
                let vi = beta2 * v.data()[i] + (1.0 - beta2) * g[i] * g[i];
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                w[i] -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
            }
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = CosineSchedule {
            base_lr: 0.01,
            warmup: 500,
            total: 2000,
        };
        assert_eq!(s.lr(0), 0.0);
        assert_eq!(s.lr(500), 0.01);
        assert!(s.lr(2000).abs() < 1e-18);
        assert!((s.lr(1250) - 0.005).abs() < 1e-15);
        assert!(s.lr(250) > 0.0 && s.lr(250) < 0.01);
    }

    #[test]
    fn one_step_descends_on_square() {
        let mut p = Param::new("w", Tensor::from_vec(vec![1.0]), true);
        let sched = CosineSchedule {
            base_lr: 0.1,
            warmup: 10,
            total: 100,
        };
        let mut st = OptimState::new(AdamWConfig::default(), sched, &[&p]);
        p.grad = Tensor::from_vec(vec![2.0 * p.value.data()[0]]);
        st.step(&mut [&mut p]).unwrap();
        assert!(p.value.data()[0].abs() < 1.0);
    }
}
