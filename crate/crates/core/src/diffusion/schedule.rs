//! Deterministic DDIM schedule, used both for inversion and for sampling.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerParams {
    pub train_timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub inference_steps: usize,
    /// Added to every inference timestep, so timestep 0 is never used and
    /// can label the clean latent.
    pub steps_offset: usize,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        Self {
            train_timesteps: 1000,
            beta_start: 0.00085,
            beta_end: 0.012,
            inference_steps: 65,
            steps_offset: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DdimSchedule {
    alphas_cumprod: Vec<f64>,
    /// Inference timesteps in sampling (descending) order.
    timesteps: Vec<usize>,
}

impl DdimSchedule {
    pub fn new(params: &SchedulerParams, steps: usize) -> Result<Self> {
        if params.train_timesteps == 0 {
            return Err(Error::invalid("train_timesteps", "must be positive"));
        }
        if params.steps_offset == 0 {
            return Err(Error::invalid(
                "steps_offset",
                "must be at least 1; timestep 0 labels the clean latent",
            ));
        }
        if steps > params.train_timesteps {
            return Err(Error::invalid(
                "steps",
                format!(
                    "{steps} inference steps exceed {} training timesteps",
                    params.train_timesteps
                ),
            ));
        }
        // scaled-linear betas
        let n = params.train_timesteps;
        let (s0, s1) = (params.beta_start.sqrt(), params.beta_end.sqrt());
        let mut alphas_cumprod = Vec::with_capacity(n);
        let mut acc = 1.0;
        for i in 0..n {
            let f = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            let b = s0 + (s1 - s0) * f;
            acc *= 1.0 - b * b;
            alphas_cumprod.push(acc);
        }
        let timesteps = if steps == 0 {
            Vec::new()
        } else {
            let ratio = n / steps;
            (0..steps)
                .map(|s| (s * ratio + params.steps_offset).min(n - 1))
                .rev()
                .collect()
        };
        Ok(Self {
            alphas_cumprod,
            timesteps,
        })
    }

    pub fn steps(&self) -> usize {
        self.timesteps.len()
    }

    /// Sampling order: noisiest first.
    pub fn sampling_timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// Inversion order: least noisy first.
    pub fn inversion_timesteps(&self) -> Vec<usize> {
        self.timesteps.iter().rev().copied().collect()
    }

    /// `ᾱ_t`; `None` is the clean end of the chain with `ᾱ = 1`.
    pub fn alpha_bar(&self, t: Option<usize>) -> f64 {
        t.map_or(1.0, |t| self.alphas_cumprod[t])
    }
}

/// Moves `x` from noise level `a_from` to `a_to` along the deterministic
/// DDIM path implied by the noise estimate `eps`. Serves both directions.
pub fn ddim_transfer(x: &Array2<f64>, eps: &Array2<f64>, a_from: f64, a_to: f64) -> Array2<f64> {
    let (sf, nf) = (a_from.sqrt(), (1.0 - a_from).sqrt());
    let (st, nt) = (a_to.sqrt(), (1.0 - a_to).sqrt());
    let mut out = Array2::zeros(x.dim());
    ndarray::Zip::from(&mut out)
        .and(x)
        .and(eps)
        .for_each(|o, &xv, &e| {
            let x0 = (xv - nf * e) / sf;
            *o = st * x0 + nt * e;
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_five_steps() {
        let s = DdimSchedule::new(&SchedulerParams::default(), 65).unwrap();
        assert_eq!(s.steps(), 65);
        let ts = s.sampling_timesteps();
        assert_eq!(ts[0], 64 * 15 + 1);
        assert_eq!(*ts.last().unwrap(), 1);
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn zero_steps_is_empty() {
        let s = DdimSchedule::new(&SchedulerParams::default(), 0).unwrap();
        assert_eq!(s.steps(), 0);
    }

    #[test]
    fn too_many_steps() {
        assert!(DdimSchedule::new(&SchedulerParams::default(), 1001).is_err());
    }

    #[test]
    fn alphas_decrease() {
        let s = DdimSchedule::new(&SchedulerParams::default(), 10).unwrap();
        assert_eq!(s.alpha_bar(None), 1.0);
        let a: Vec<f64> = s.inversion_timesteps().iter().map(|&t| s.alpha_bar(Some(t))).collect();
        assert!(a.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn transfer_with_zero_noise_is_a_rescale() {
        let x = Array2::from_elem((2, 2), 0.7);
        let e = Array2::zeros((2, 2));
        let y = ddim_transfer(&x, &e, 0.9, 0.4);
        let expected = 0.7 * (0.4f64 / 0.9).sqrt();
        assert!(y.iter().all(|&v| (v - expected).abs() < 1e-15));
    }
}
