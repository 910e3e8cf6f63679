use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{Batch, Denoiser};
use crate::schedules::{make_schedule, NoiseSchedule, ScheduleKind, ScheduleParams};

/// Lower bound on `mu(t)` in the continuous sampler's division.
pub const DEFAULT_MU_FLOOR: f64 = 0.05;
/// Chains per network call; fixed so results do not depend on thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub t: f64,
    pub alpha_bar: f64,
}

/// Anything that maps noisy states at a common level to noise estimates.
pub trait NoisePredictor: Sync {
    fn predict(&self, states: &[Vec<f64>], level: NoiseLevel) -> Result<Vec<Vec<f64>>>;
}

/// Closed-form optimal predictor when the clean field is a single point.
#[derive(Debug, Clone)]
pub struct OracleEps {
    pub target: Vec<f64>,
}

impl NoisePredictor for OracleEps {
    fn predict(&self, states: &[Vec<f64>], level: NoiseLevel) -> Result<Vec<Vec<f64>>> {
        let a = level.alpha_bar.sqrt();
        let s = (1.0 - level.alpha_bar).sqrt();
        Ok(states
            .iter()
            .map(|u| u.iter().zip(&self.target).map(|(x, y)| (x - a * y) / s).collect())
            .collect())
    }
}

/// Trained network (EMA weights) with one conditioning stack per chain.
pub struct NetPredictor<'a> {
    net: Denoiser,
    params: &'a [f64],
    cond: Vec<&'a [f64]>,
    n: usize,
}

impl<'a> NetPredictor<'a> {
    pub fn new(ckpt: &'a Checkpoint, cond: Vec<&'a [f64]>) -> Result<Self> {
        let net = Denoiser::new(ckpt.network.clone())?;
        if ckpt.ema.len() != net.param_count() {
            return Err(Error::invalid("checkpoint parameters do not match its architecture"));
        }
        Ok(Self { net, params: &ckpt.ema, cond, n: ckpt.n })
    }
}

impl NoisePredictor for NetPredictor<'_> {
    fn predict(&self, states: &[Vec<f64>], level: NoiseLevel) -> Result<Vec<Vec<f64>>> {
        if states.len() != self.cond.len() {
            return Err(Error::invalid("chain count differs from conditioning count"));
        }
        let n = self.n;
        let parts: Vec<Result<Vec<Vec<f64>>>> = states
            .par_chunks(CHUNK)
            .zip(self.cond.par_chunks(CHUNK))
            .map(|(s, z)| {
                let ur: Vec<&[f64]> = s.iter().map(|v| v.as_slice()).collect();
                let t = vec![level.t; s.len()];
                let batch = Batch::pack(&ur, z, &t, n)?;
                let out = self.net.forward(self.params, &batch)?;
                Ok(out.chunks_exact(n).map(|c| c.to_vec()).collect())
            })
            .collect();
        let mut all = Vec::with_capacity(states.len());
        for p in parts {
            all.extend(p?);
        }
        Ok(all)
    }
}

/// Deterministic regressor output (scaled units) for each conditioning stack.
pub fn predict_regressor(ckpt: &Checkpoint, cond: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let pred = NetPredictor::new(ckpt, cond.to_vec())?;
    pred.predict(&vec![vec![0.0; ckpt.n]; cond.len()], NoiseLevel { t: 0.0, alpha_bar: 1.0 })
}

fn initial_states(rngs: &mut [ChaCha8Rng], n: usize) -> Vec<Vec<f64>> {
    rngs.iter_mut().map(|r| (0..n).map(|_| r.sample(StandardNormal)).collect()).collect()
}

/// Ancestral sampling with the posterior variance, no noise on the last step.
pub fn sample_ddpm<P: NoisePredictor + ?Sized>(
    pred: &P,
    sched: &NoiseSchedule,
    n: usize,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<Vec<f64>>> {
    let mut x = initial_states(rngs, n);
    for t in (1..=sched.steps).rev() {
        let ab = sched.alpha_bar_at(t);
        let eps = pred.predict(&x, NoiseLevel { t: sched.time_of(t), alpha_bar: ab })?;
        let (alpha, beta) = (sched.alpha_at(t), sched.beta_at(t));
        let coef = beta / (1.0 - ab).sqrt();
        let inv = 1.0 / alpha.sqrt();
        let sd = if t > 1 { sched.posterior_variance(t).sqrt() } else { 0.0 };
        for ((u, e), rng) in x.iter_mut().zip(&eps).zip(rngs.iter_mut()) {
            for (ui, ei) in u.iter_mut().zip(e) {
                *ui = inv * (*ui - coef * ei);
            }
            if t > 1 {
                for ui in u.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *ui += sd * z;
                }
            }
        }
    }
    Ok(x)
}

/// `steps, steps-1, .., 1`.
pub fn ddim_subsequence(steps: usize) -> Vec<usize> {
    (1..=steps).rev().collect()
}

/// DDIM over a strictly decreasing step subsequence, finishing at level 0.
pub fn sample_ddim<P: NoisePredictor + ?Sized>(
    pred: &P,
    sched: &NoiseSchedule,
    subsequence: &[usize],
    eta: f64,
    n: usize,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<Vec<f64>>> {
    if subsequence.is_empty() || subsequence.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("DDIM subsequence must be non-empty and strictly decreasing"));
    }
    for &t in subsequence {
        sched.check_step(t)?;
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid(format!("eta {eta} outside [0, 1]")));
    }
    let mut x = initial_states(rngs, n);
    for (i, &t) in subsequence.iter().enumerate() {
        let prev = subsequence.get(i + 1).copied().unwrap_or(0);
        let ab = sched.alpha_bar_at(t);
        let ab_prev = sched.alpha_bar_at(prev);
        let eps = pred.predict(&x, NoiseLevel { t: sched.time_of(t), alpha_bar: ab })?;
        let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).max(0.0).sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        for ((u, e), rng) in x.iter_mut().zip(&eps).zip(rngs.iter_mut()) {
            for (ui, ei) in u.iter_mut().zip(e) {
                let x0 = (*ui - sb * ei) / sa;
                *ui = ab_prev.sqrt() * x0 + dir * ei;
            }
            if sigma > 0.0 {
                for ui in u.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *ui += sigma * z;
                }
            }
        }
    }
    Ok(x)
}

/// Continuous-time update `u <- r u + (sigma(t-dt) - r sigma(t)) eps` with
/// `r = mu(t-dt) / max(mu(t), mu_floor)`, integrating `t` from 1 to 0.
pub fn sample_sde<P: NoisePredictor + ?Sized>(
    pred: &P,
    sched: &NoiseSchedule,
    steps: usize,
    mu_floor: f64,
    n: usize,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<Vec<f64>>> {
    if steps == 0 {
        return Err(Error::invalid("continuous sampler needs at least one step"));
    }
    if !(mu_floor > 0.0 && mu_floor < 1.0) {
        return Err(Error::invalid("mu floor must lie in (0, 1)"));
    }
    let mut x = initial_states(rngs, n);
    for i in (1..=steps).rev() {
        let t = i as f64 / steps as f64;
        let t_prev = (i - 1) as f64 / steps as f64;
        let (mu, sigma) = sched.vp_scalings(t)?;
        let (mu_p, sigma_p) = sched.vp_scalings(t_prev)?;
        let eps = pred.predict(&x, NoiseLevel { t, alpha_bar: mu * mu })?;
        let r = mu_p / mu.max(mu_floor);
        let c = sigma_p - r * sigma;
        for (u, e) in x.iter_mut().zip(&eps) {
            for (ui, ei) in u.iter_mut().zip(e) {
                *ui = r * *ui + c * ei;
            }
        }
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
    Sde,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Ddpm => "ddpm",
            SamplerKind::Ddim => "ddim",
            SamplerKind::Sde => "sde",
        })
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(Self::Ddpm),
            "ddim" => Ok(Self::Ddim),
            "sde" => Ok(Self::Sde),
            other => Err(Error::invalid(format!("unknown sampler `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub sampler: SamplerKind,
    pub schedule: ScheduleKind,
    pub steps: usize,
    pub eta: f64,
    pub samples: usize,
    pub seed: u64,
    pub mu_floor: f64,
    pub schedule_params: ScheduleParams,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerKind::Ddpm,
            schedule: ScheduleKind::Cosine,
            steps: 1000,
            eta: 0.0,
            samples: 10,
            seed: 0,
            mu_floor: DEFAULT_MU_FLOOR,
            schedule_params: ScheduleParams::default(),
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.samples == 0 {
            return Err(Error::invalid("steps and samples must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid("eta must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.sampler, self.schedule)
    }
}

/// Runs the configured sampler on one chain per entry of `chain_ids`; chain
/// `i` draws all of its noise from the stream keyed by `chain_ids[i]`.
pub fn run_sampler<P: NoisePredictor + ?Sized>(
    cfg: &SampleConfig,
    pred: &P,
    n: usize,
    chain_ids: &[u64],
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let sched = make_schedule(cfg.schedule, cfg.steps, cfg.schedule_params)?;
    let mut rngs: Vec<ChaCha8Rng> =
        chain_ids.iter().map(|&id| crate::rng::stream(cfg.seed, crate::rng::Purpose::Sample, id)).collect();
    match cfg.sampler {
        SamplerKind::Ddpm => sample_ddpm(pred, &sched, n, &mut rngs),
        SamplerKind::Ddim => sample_ddim(pred, &sched, &ddim_subsequence(cfg.steps), cfg.eta, n, &mut rngs),
        SamplerKind::Sde => sample_sde(pred, &sched, cfg.steps, cfg.mu_floor, n, &mut rngs),
    }
}
