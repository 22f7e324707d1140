//! AdamW with decoupled weight decay and a linear warmup / linear decay
//! learning-rate schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Linear ramp `0 → peak` over `[0, warmup]`, then linear decay to zero at
/// `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupLinear {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl WarmupLinear {
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "step {step} beyond total_steps {}",
                self.total_steps
            )));
        }
        if step <= self.warmup_steps {
            if self.warmup_steps == 0 {
                return Ok(self.peak_lr);
            }
            return Ok(self.peak_lr * (step as f64 / self.warmup_steps as f64));
        }
        let remaining = (self.total_steps - step) as f64;
        let span = (self.total_steps - self.warmup_steps) as f64;
        Ok(self.peak_lr * (remaining / span))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One AdamW update in place: `p -= lr·wd·p`, then the bias-corrected Adam
/// step.
pub fn adamw_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Shape {
            expected: (params.len(), 1),
            found: (grads.len(), state.m.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, f64::from(t));
    let bc2 = 1.0 - libm::pow(cfg.beta2, f64::from(t));
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *p -= lr * cfg.weight_decay * *p;
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> WarmupLinear {
        WarmupLinear {
            peak_lr: 5e-4,
            warmup_steps: 1250,
            total_steps: 5000,
        }
    }

    #[test]
    fn schedule_points() {
        let s = sched();
        assert_eq!(s.lr_at(0).unwrap(), 0.0);
        assert_eq!(s.lr_at(625).unwrap(), 2.5e-4);
        assert_eq!(s.lr_at(1250).unwrap(), 5e-4);
        assert_eq!(s.lr_at(5000).unwrap(), 0.0);
        assert!(s.lr_at(5001).is_err());
    }

    #[test]
    fn schedule_peaks_at_warmup_end() {
        let s = sched();
        let (argmax, max) = (0..=5000)
            .map(|k| (k, s.lr_at(k).unwrap()))
            .fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        assert_eq!(argmax, 1250);
        assert_eq!(max, 5e-4);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = [1.5, -2.0, 0.25];
        let mut st = AdamState::new(3);
        for _ in 0..5 {
            adamw_step(&mut p, &[0.0; 3], &mut st, 1e-2, &cfg).unwrap();
        }
        assert_eq!(p, [1.5, -2.0, 0.25]);
    }

    #[test]
    fn first_step_hand_value() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = [0.0];
        adamw_step(&mut p, &[1.0], &mut AdamState::new(1), 1e-3, &cfg).unwrap();
        assert!((p[0] - (-1e-3 / (1.0 + 1e-8))).abs() < 1e-18);
    }

    #[test]
    fn decay_only_step() {
        let mut p = [1.0];
        adamw_step(
            &mut p,
            &[0.0],
            &mut AdamState::new(1),
            1e-3,
            &AdamWConfig::default(),
        )
        .unwrap();
        assert!((p[0] - 0.9999).abs() < 1e-15, "{}", p[0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = [0.0; 2];
        assert!(adamw_step(
            &mut p,
            &[0.0],
            &mut AdamState::new(2),
            1e-3,
            &AdamWConfig::default()
        )
        .is_err());
    }
}
