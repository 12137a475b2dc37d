//! AdamW with decoupled weight decay and the constant-with-warmup schedule.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::tape::ParamGrads;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.95, weight_decay: 0.01, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub warmup_start: f64,
    pub target: f64,
    pub warmup_steps: u64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { warmup_start: 1e-18, target: 1e-5, warmup_steps: 500 }
    }
}

impl LrSchedule {
    /// Linear from `warmup_start` at step 0 to `target` at `warmup_steps`, constant after.
    pub fn lr(&self, step: u64) -> f64 {
        if step >= self.warmup_steps {
            return self.target;
        }
        let frac = step as f64 / self.warmup_steps as f64;
        self.warmup_start + frac * (self.target - self.warmup_start)
    }
}

/// Moment estimates for every parameter plus the update count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: ParamStore,
    pub v: ParamStore,
    pub t: u64,
}

impl AdamWState {
    pub fn new(params: &ParamStore) -> Self {
        AdamWState { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
    }

    /// One AdamW update: `w <- w (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)`.
    /// Parameters without a gradient entry are treated as having zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamGrads, lr: f64, cfg: &AdamWConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for e in params.entries_mut() {
            let g = grads.get(&e.name);
            let m = &mut self.m.get_mut(&e.name).expect("moment shapes follow params").data;
            let v = &mut self.v.get_mut(&e.name).expect("moment shapes follow params").data;
            for i in 0..e.data.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                e.data[i] = e.data[i] * (1.0 - lr * cfg.weight_decay) - lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
    }

    pub fn round_to_f32(&mut self) {
        self.m.round_to_f32();
        self.v.round_to_f32();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_anchor_points() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(0), 1e-18);
        assert_eq!(s.lr(500), 1e-5);
        assert_eq!(s.lr(10_000), 1e-5);
        assert_eq!(s.lr(250), 1e-18 + 0.5 * (1e-5 - 1e-18));
        assert!((s.lr(250) - 5e-6).abs() < 1e-18);
    }

    #[test]
    fn schedule_is_linear_during_warmup() {
        let s = LrSchedule::default();
        for step in 1..499 {
            let d1 = s.lr(step) - s.lr(step - 1);
            let d2 = s.lr(step + 1) - s.lr(step);
            assert!((d1 - d2).abs() < 1e-20);
        }
    }

    #[test]
    fn defaults() {
        let c = AdamWConfig::default();
        assert_eq!((c.beta1, c.beta2, c.weight_decay, c.eps), (0.9, 0.95, 0.01, 1e-8));
    }

    #[test]
    fn single_step_on_quadratic() {
        let mut p = ParamStore::new();
        p.insert("w", vec![1], vec![1.0]);
        let mut st = AdamWState::new(&p);
        let grads = [("w".to_string(), vec![2.0])].into_iter().collect();
        st.step(&mut p, &grads, 0.1, &AdamWConfig::default());
        // bias-corrected m_hat = 2, v_hat = 4 -> unit step of lr; decay 0.1 * 0.01 * 1
        let expected = 1.0 * (1.0 - 0.1 * 0.01) - 0.1 * 2.0 / (2.0 + 1e-8);
        assert_eq!(p.get("w").unwrap().data[0], expected);
        assert!((expected - 0.899).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = ParamStore::new();
        p.insert("w", vec![3], vec![0.5, -1.0, 2.0]);
        let before = p.clone();
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let grads = [("w".to_string(), vec![0.0; 3])].into_iter().collect();
        for _ in 0..3 {
            st.step(&mut p, &grads, 0.1, &cfg);
        }
        assert_eq!(p, before);
    }
}
