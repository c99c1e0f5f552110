//! Diffusion noise schedule: β ramp and the derived α, ᾱ, σ vectors.

use crate::error::{Error, Result};

/// Schedule interpolation shape. Only a linear β ramp is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
}

/// Per-step noising parameters for `T` steps (1-indexed externally).
///
/// `sigma[t]` is the ancestral per-step sampling std `√β_t`; deterministic
/// sampling simply adds no noise.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// Errors unless `1 ≤ t ≤ T`.
    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::Invalid(format!(
                "diffusion step {t} out of range [1, {}]",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn beta_t(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.beta[t - 1])
    }

    pub fn alpha_t(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.alpha[t - 1])
    }

    /// Cumulative ᾱ_t; ᾱ_0 = 1 by convention.
    pub fn alpha_bar_t(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        self.check_step(t)?;
        Ok(self.alpha_bar[t - 1])
    }

    pub fn sigma_t(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.sigma[t - 1])
    }

    /// Desk-scale default: T = 200, β linear from 1e−4 to 0.1, which drives
    /// the terminal ᾱ below 0.05 so the reverse process can start from pure
    /// noise.
    pub fn default_desk() -> NoiseSchedule {
        make_schedule(200, 1e-4, 0.1, ScheduleKind::Linear).expect("default schedule is valid")
    }
}

/// Builds a linear β schedule and its derived vectors.
pub fn make_schedule(
    t_total: usize,
    beta_min: f64,
    beta_max: f64,
    kind: ScheduleKind,
) -> Result<NoiseSchedule> {
    let ScheduleKind::Linear = kind;
    if t_total == 0 {
        return Err(Error::config("T", "must be >= 1"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::config(
            "beta",
            format!("need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"),
        ));
    }
    let beta: Vec<f64> = (0..t_total)
        .map(|i| {
            if t_total == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (t_total - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t_total);
    let mut prod = 1.0;
    for a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    let sigma: Vec<f64> = beta.iter().map(|b| b.sqrt()).collect();
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
        sigma,
    })
}
