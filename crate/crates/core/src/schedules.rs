//! Discrete noise schedules, closed-form forward marginals, and the matching
//! continuous variance-preserving scalings `(mu(t), sigma(t))`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        })
    }
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "cosine" => Ok(Self::Cosine),
            other => Err(Error::invalid(format!("unknown schedule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub beta_min: f64,
    pub beta_max: f64,
    pub cosine_offset: f64,
    pub beta_clip: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { beta_min: 1e-4, beta_max: 0.02, cosine_offset: 0.008, beta_clip: 0.999 }
    }
}

/// Steps are 1-based in the maths; `beta[t - 1]` is `beta_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub params: ScheduleParams,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

fn cosine_g(s: f64, offset: f64) -> f64 {
    (((s + offset) / (1.0 + offset)) * FRAC_PI_2).cos().powi(2)
}

pub fn make_schedule(kind: ScheduleKind, steps: usize, params: ScheduleParams) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    let ScheduleParams { beta_min, beta_max, cosine_offset, beta_clip } = params;
    let beta: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            if !(0.0 < beta_min && beta_min <= beta_max && beta_max < 1.0) {
                return Err(Error::invalid(format!("linear schedule needs 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")));
            }
            if steps == 1 {
                vec![beta_min]
            } else {
                (0..steps)
                    .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
                    .collect()
            }
        }
        ScheduleKind::Cosine => {
            if !(cosine_offset > 0.0 && 0.0 < beta_clip && beta_clip < 1.0) {
                return Err(Error::invalid("cosine schedule needs offset > 0 and clip in (0, 1)"));
            }
            let g0 = cosine_g(0.0, cosine_offset);
            let bar = |t: usize| cosine_g(t as f64 / steps as f64, cosine_offset) / g0;
            (1..=steps).map(|t| (1.0 - bar(t) / bar(t - 1)).clamp(1e-12, beta_clip)).collect()
        }
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule { kind, steps, params, beta, alpha, alpha_bar })
}

impl NoiseSchedule {
    /// `alpha_bar_t` with the empty-product convention `alpha_bar_0 = 1`.
    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        if t == 0 { 1.0 } else { self.alpha_bar[t - 1] }
    }

    pub fn beta_at(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_at(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Posterior variance `(1 - abar_{t-1}) / (1 - abar_t) * beta_t`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar_at(t - 1)) / (1.0 - self.alpha_bar_at(t)) * self.beta_at(t)
    }

    /// Continuous time of step `t`.
    pub fn time_of(&self, t: usize) -> f64 {
        t as f64 / self.steps as f64
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::invalid(format!("step {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }

    /// `(mu(t), sigma(t))` of the continuous process matched to this schedule.
    pub fn vp_scalings(&self, t: f64) -> Result<(f64, f64)> {
        vp_scalings(t, self)
    }
}

/// `sqrt(abar_t) u0 + sqrt(1 - abar_t) eps`.
pub fn forward_marginal(u0: &[f64], t: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    if t > sched.steps {
        return Err(Error::invalid(format!("step {t} outside 0..={}", sched.steps)));
    }
    if u0.len() != eps.len() {
        return Err(Error::invalid("noise and field differ in length"));
    }
    let ab = sched.alpha_bar_at(t);
    Ok(marginal_with(u0, eps, ab))
}

pub(crate) fn marginal_with(u0: &[f64], eps: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    u0.iter().zip(eps).map(|(u, e)| a * u + b * e).collect()
}

/// `mu(t) = exp(-1/2 int_0^t beta(s) ds)` and `sigma = sqrt(1 - mu^2)`.
///
/// Linear: `beta(s) = T (beta_min + s (beta_max - beta_min))`, the rate whose
/// Euler steps are the discrete betas. Cosine: `mu(t)^2 = g(t) / g(0)`, the
/// exact interpolant of the discrete `alpha_bar` before clipping.
pub fn vp_scalings(t: f64, sched: &NoiseSchedule) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("time {t} outside [0, 1]")));
    }
    let p = &sched.params;
    let mu2 = match sched.kind {
        ScheduleKind::Linear => {
            let big_t = sched.steps as f64;
            let integral = big_t * (p.beta_min * t + 0.5 * (p.beta_max - p.beta_min) * t * t);
            (-integral).exp()
        }
        ScheduleKind::Cosine => {
            (cosine_g(t, p.cosine_offset) / cosine_g(0.0, p.cosine_offset)).clamp(0.0, 1.0)
        }
    };
    Ok((mu2.sqrt(), (1.0 - mu2).max(0.0).sqrt()))
}
