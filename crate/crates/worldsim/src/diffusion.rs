use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Linear-beta DDPM schedule. Index `t` runs 1..=T; `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_T: usize = 200;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

impl Default for DiffusionSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_T, BETA_START, BETA_END).expect("default schedule is valid")
    }
}

/// One step of a (possibly respaced) reverse chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseStep {
    pub t: usize,
    pub alpha_bar: f64,
    pub alpha_bar_prev: f64,
}

impl ReverseStep {
    pub fn beta(&self) -> f64 {
        1.0 - self.alpha_bar / self.alpha_bar_prev
    }

    /// Posterior variance of the ancestral step.
    pub fn sigma2(&self) -> f64 {
        (1.0 - self.alpha_bar_prev) / (1.0 - self.alpha_bar) * self.beta()
    }

    /// Posterior mean given the noise estimate: `(z - beta/sqrt(1-abar) eps) / sqrt(alpha)`.
    pub fn mean(&self, z: f64, eps: f64) -> f64 {
        (z - self.beta() / (1.0 - self.alpha_bar).sqrt() * eps) / (1.0 - self.beta()).sqrt()
    }
}

impl DiffusionSchedule {
    pub fn linear(t: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t == 0 {
            return Err(SimError::Config("diffusion needs T >= 1".into()));
        }
        let betas: Vec<f64> = (0..t)
            .map(|i| if t == 1 { beta_start } else { beta_start + (beta_end - beta_start) * i as f64 / (t - 1) as f64 })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(SimError::Config("betas must lie in (0, 1)".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(DiffusionSchedule { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// `z_t = sqrt(abar) z0 + sqrt(1 - abar) eps`.
    pub fn q_sample(&self, z0: &[f64], eps: &[f64], t: usize) -> Vec<f64> {
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect()
    }

    /// Inverts [`DiffusionSchedule::q_sample`] given the true noise.
    pub fn predict_z0(&self, zt: &[f64], eps: &[f64], t: usize) -> Vec<f64> {
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        zt.iter().zip(eps).map(|(z, e)| (z - b * e) / a).collect()
    }

    /// Evenly spaced timesteps from T down to 1 for a `steps`-long chain.
    pub fn respaced(&self, steps: usize) -> Result<Vec<ReverseStep>> {
        let big_t = self.steps();
        if steps > big_t {
            return Err(SimError::Config(format!("{steps} sampling steps exceed T = {big_t}")));
        }
        if steps == 0 {
            return Ok(Vec::new());
        }
        let ts: Vec<usize> = (0..steps)
            .map(|i| if steps == 1 { big_t } else { 1 + ((big_t - 1) as f64 * i as f64 / (steps - 1) as f64).round() as usize })
            .collect();
        let mut out = Vec::with_capacity(steps);
        for (i, &t) in ts.iter().enumerate().rev() {
            let prev = if i == 0 { 0 } else { ts[i - 1] };
            out.push(ReverseStep { t, alpha_bar: self.alpha_bar(t), alpha_bar_prev: self.alpha_bar(prev) });
        }
        Ok(out)
    }
}

/// Sinusoidal embedding of a scalar position.
pub fn sinusoidal(pos: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (pos * freq).sin();
        out[half + i] = (pos * freq).cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule() {
        let s = DiffusionSchedule::default();
        assert_eq!(s.steps(), 200);
        assert_eq!(s.betas[0], 1e-4);
        assert!((s.betas[199] - 0.02).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..=200 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn forward_then_exact_reverse_recovers_z0() {
        let s = DiffusionSchedule::default();
        let z0 = [0.3, -1.2, 2.5, 0.0];
        let eps = [1.0, -0.5, 0.25, 2.0];
        for t in 1..=200 {
            let zt = s.q_sample(&z0, &eps, t);
            for (a, b) in s.predict_z0(&zt, &eps, t).iter().zip(z0) {
                assert!((a - b).abs() < 1e-5, "t={t}");
            }
        }
    }

    #[test]
    fn full_respacing_reproduces_betas() {
        let s = DiffusionSchedule::default();
        let steps = s.respaced(200).unwrap();
        assert_eq!(steps.len(), 200);
        for st in &steps {
            assert!((st.beta() - s.betas[st.t - 1]).abs() < 1e-12);
        }
        assert_eq!(steps.last().unwrap().alpha_bar_prev, 1.0);
        assert_eq!(steps.last().unwrap().sigma2(), 0.0);
        assert!(s.respaced(201).is_err());
        assert!(s.respaced(0).unwrap().is_empty());
    }

    #[test]
    fn respaced_chain_is_strictly_ordered() {
        let s = DiffusionSchedule::default();
        let steps = s.respaced(25).unwrap();
        assert_eq!(steps[0].t, 200);
        assert_eq!(steps[24].t, 1);
        assert!(steps.windows(2).all(|w| w[0].t > w[1].t));
        assert!(steps.iter().all(|st| st.beta() > 0.0 && st.beta() < 1.0));
    }

    #[test]
    fn reverse_mean_with_true_noise_at_last_step_is_z0() {
        let s = DiffusionSchedule::default();
        let st = s.respaced(200).unwrap()[199];
        let (z0, eps) = (0.7, -1.3);
        let zt = s.q_sample(&[z0], &[eps], st.t)[0];
        assert!((st.mean(zt, eps) - z0).abs() < 1e-12);
    }
}
