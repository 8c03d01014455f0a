//! AdamW and the linear one-cycle learning-rate schedule.

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Linear warm-up from `peak / 25` to `peak` at step ⌊0.3·(S−1)⌋, then linear decay to 0
/// at step S−1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycle {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub start_divisor: f64,
}

impl OneCycle {
    pub fn new(peak: f64, total_steps: usize) -> Result<Self> {
        if !(peak > 0.0 && peak.is_finite()) || total_steps == 0 {
            return Err(Error::invalid("one-cycle schedule needs a positive peak and at least one step"));
        }
        Ok(Self {
            peak,
            total_steps,
            warmup_fraction: 0.3,
            start_divisor: 25.0,
        })
    }

    pub fn peak_step(&self) -> usize {
        (self.warmup_fraction * (self.total_steps - 1) as f64).floor() as usize
    }

    pub fn lr(&self, step: usize) -> f64 {
        let last = self.total_steps - 1;
        let start = self.peak / self.start_divisor;
        let peak_step = self.peak_step();
        if step >= last {
            // A single-step schedule never leaves its starting point.
            return if last == 0 { start } else { 0.0 };
        }
        if step <= peak_step {
            if peak_step == 0 {
                return start;
            }
            start + (self.peak - start) * step as f64 / peak_step as f64
        } else {
            self.peak * (last - step) as f64 / (last - peak_step) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamStore, weight_decay: f64) -> Self {
        let zeros = || (0..params.len()).map(|i| vec![0.0; params.value(i).len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update with decoupled weight decay; decay skips single-row tensors (biases,
    /// norm gains, relative biases).
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let decays = params.value(i).rows > 1 && !params.name(i).ends_with(".rel");
            let p = params.value_mut(i);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..g.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
                if decays {
                    p.data[k] -= lr * self.weight_decay * p.data[k];
                }
                p.data[k] -= lr * update;
            }
        }
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
