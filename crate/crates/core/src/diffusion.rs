//! Forward-process and posterior mathematics for discrete-time denoising diffusion.
//!
//! Timesteps are zero-indexed: step `t ∈ [0, T)` here is step `t + 1` in the
//! usual one-indexed notation, so `alpha_bars[0]` is the first noising step and
//! `alpha_bars[T - 1]` the most corrupted one. All tables are kept in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Variance used for the noise injected at each reverse step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReverseVariance {
    /// `σ²_t = β_t`
    #[default]
    Beta,
    /// `σ²_t = β̃_t`, the true posterior variance.
    PosteriorBeta,
}

/// Serializable description of a linear schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(default)]
    pub reverse_variance: ReverseVariance,
}

impl ScheduleSpec {
    /// 600 steps, β linearly spanning `[1e-4, 0.02]`.
    pub fn paper_default() -> Self {
        Self {
            steps: 600,
            beta_start: 1e-4,
            beta_end: 0.02,
            reverse_variance: ReverseVariance::Beta,
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        let mut s = build_linear_schedule(self.steps, self.beta_start, self.beta_end)?;
        s.reverse_variance = self.reverse_variance;
        Ok(s)
    }
}

/// Precomputed per-step tables for a `T`-step schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    pub posterior_betas: Vec<f64>,
    pub reverse_variance: ReverseVariance,
}

/// Scalar element type the diffusion operations accept.
pub trait Sample: Copy {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Sample for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Sample for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

pub fn build_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(invalid(format!("schedule needs at least 2 steps, got {steps}")));
    }
    if !(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0) {
        return Err(invalid(format!(
            "betas must lie in (0, 1), got [{beta_start}, {beta_end}]"
        )));
    }
    if beta_start > beta_end {
        return Err(invalid(format!(
            "beta_start {beta_start} exceeds beta_end {beta_end}"
        )));
    }
    let last = (steps - 1) as f64;
    let betas: Vec<f64> = (0..steps)
        .map(|i| beta_start + (beta_end - beta_start) * i as f64 / last)
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    let posterior_betas = (0..steps)
        .map(|t| {
            let prev = if t == 0 { 1.0 } else { alpha_bars[t - 1] };
            (1.0 - prev) / (1.0 - alpha_bars[t]) * betas[t]
        })
        .collect();
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
        posterior_betas,
        reverse_variance: ReverseVariance::Beta,
    })
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("image sizes differ: {a} vs {b}")));
    }
    Ok(())
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.steps() {
            return Err(invalid(format!(
                "timestep {t} outside schedule of {} steps",
                self.steps()
            )));
        }
        Ok(())
    }

    /// `ᾱ` of the step preceding `t` (1 before the first step).
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Standard deviation of the noise added when stepping from `t` to `t − 1`.
    pub fn reverse_std(&self, t: usize) -> f64 {
        match self.reverse_variance {
            ReverseVariance::Beta => self.betas[t].sqrt(),
            ReverseVariance::PosteriorBeta => self.posterior_betas[t].sqrt(),
        }
    }

    /// `x_t = sqrt(ᾱ_t)·x0 + sqrt(1 − ᾱ_t)·eps`.
    pub fn forward_marginal_sample<S: Sample>(&self, x0: &[S], t: usize, eps: &[S]) -> Result<Vec<S>> {
        self.check_t(t)?;
        check_same_len(x0.len(), eps.len())?;
        let a = self.alpha_bars[t].sqrt();
        let b = (1.0 - self.alpha_bars[t]).sqrt();
        Ok(x0
            .iter()
            .zip(eps)
            .map(|(&x, &e)| S::from_f64(a * x.to_f64() + b * e.to_f64()))
            .collect())
    }

    /// Inverts the forward marginal given a noise estimate.
    pub fn predict_x0_from_eps<S: Sample>(&self, x_t: &[S], eps_hat: &[S], t: usize) -> Result<Vec<S>> {
        self.check_t(t)?;
        check_same_len(x_t.len(), eps_hat.len())?;
        let ab = self.alpha_bars[t];
        if ab <= 1e-12 {
            return Err(Error::Singular(format!("alpha_bar[{t}] = {ab:e} is numerically zero")));
        }
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x_t
            .iter()
            .zip(eps_hat)
            .map(|(&x, &e)| S::from_f64((x.to_f64() - sb * e.to_f64()) / sa))
            .collect())
    }

    /// Mean of `p(x_{t−1} | x_t)` parameterized by a noise estimate. Requires `t ≥ 1`.
    pub fn posterior_mean_from_eps<S: Sample>(&self, x_t: &[S], eps_hat: &[S], t: usize) -> Result<Vec<S>> {
        self.check_t(t)?;
        if t == 0 {
            return Err(invalid("posterior mean needs t >= 1; the first step has no prior step"));
        }
        check_same_len(x_t.len(), eps_hat.len())?;
        let inv = 1.0 / self.alphas[t].sqrt();
        let coef = (1.0 - self.alphas[t]) / (1.0 - self.alpha_bars[t]).sqrt();
        Ok(x_t
            .iter()
            .zip(eps_hat)
            .map(|(&x, &e)| S::from_f64(inv * (x.to_f64() - coef * e.to_f64())))
            .collect())
    }

    /// Mean of the tractable posterior `q(x_{t−1} | x_t, x_0)`. Requires `t ≥ 1`.
    pub fn posterior_mean_from_x0<S: Sample>(&self, x_t: &[S], x0: &[S], t: usize) -> Result<Vec<S>> {
        self.check_t(t)?;
        if t == 0 {
            return Err(invalid("posterior mean needs t >= 1; the first step has no prior step"));
        }
        check_same_len(x_t.len(), x0.len())?;
        let (ab, abp) = (self.alpha_bars[t], self.alpha_bar_prev(t));
        let c0 = abp.sqrt() * self.betas[t] / (1.0 - ab);
        let ct = self.alphas[t].sqrt() * (1.0 - abp) / (1.0 - ab);
        Ok(x_t
            .iter()
            .zip(x0)
            .map(|(&x, &z)| S::from_f64(c0 * z.to_f64() + ct * x.to_f64()))
            .collect())
    }
}

/// Mean squared error between predicted and true noise.
pub fn simple_loss<S: Sample>(eps_hat: &[S], eps: &[S]) -> Result<f64> {
    check_same_len(eps_hat.len(), eps.len())?;
    if eps.is_empty() {
        return Err(invalid("loss of empty images"));
    }
    let s: f64 = eps_hat
        .iter()
        .zip(eps)
        .map(|(&a, &b)| (a.to_f64() - b.to_f64()).powi(2))
        .sum();
    Ok(s / eps.len() as f64)
}
