use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, EpochLog, Example, ModelKind, ScheduleSpec, TrainingData};
use crate::error::{Error, Result};
use crate::nn::{Adam, Batch, Denoiser, DenoiserConfig, Ema};
use crate::rng::{stream, Purpose};
use crate::schedules::{marginal_with, NoiseSchedule, ScheduleKind, ScheduleParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Halve the learning rate every this many epochs (0 = constant).
    pub lr_halve_every: usize,
    pub ema_decay: f64,
    pub schedule: ScheduleKind,
    pub train_steps: usize,
    pub schedule_params: ScheduleParams,
    pub width: usize,
    pub blocks: usize,
    pub dilations: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 200,
            learning_rate: 1e-3,
            lr_halve_every: 70,
            ema_decay: 0.999,
            schedule: ScheduleKind::Cosine,
            train_steps: 1000,
            schedule_params: ScheduleParams::default(),
            width: 32,
            blocks: 4,
            dilations: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::invalid("ema decay must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn network(&self, cond_channels: usize) -> DenoiserConfig {
        let mut cfg = DenoiserConfig::new(cond_channels, self.width, self.blocks);
        if let Some(d) = &self.dilations {
            cfg.dilations = d.clone();
        }
        cfg
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_halve_every {
            0 => self.learning_rate,
            k => self.learning_rate * 0.5f64.powi((epoch / k) as i32),
        }
    }
}

/// Network input and regression target for a set of examples.
fn make_batch(
    kind: ModelKind,
    examples: &[&Example],
    sched: &NoiseSchedule,
    n: usize,
    rng: &mut impl Rng,
) -> Result<(Batch, Vec<f64>)> {
    let mut u_t = Vec::with_capacity(examples.len());
    let mut t = Vec::with_capacity(examples.len());
    let mut target = Vec::with_capacity(examples.len() * n);
    for ex in examples {
        match kind {
            ModelKind::Diffusion => {
                let k = rng.gen_range(1..=sched.steps);
                let eps: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                u_t.push(marginal_with(&ex.target, &eps, sched.alpha_bar_at(k)));
                t.push(sched.time_of(k));
                target.extend_from_slice(&eps);
            }
            ModelKind::Regressor => {
                u_t.push(vec![0.0; n]);
                t.push(0.0);
                target.extend_from_slice(&ex.target);
            }
        }
    }
    let ur: Vec<&[f64]> = u_t.iter().map(|v| v.as_slice()).collect();
    let zr: Vec<&[f64]> = examples.iter().map(|e| e.cond.as_slice()).collect();
    Ok((Batch::pack(&ur, &zr, &t, n)?, target))
}

fn eval_loss(net: &Denoiser, params: &[f64], kind: ModelKind, data: &[Example], sched: &NoiseSchedule, n: usize, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for (i, chunk) in data.chunks(64).enumerate() {
        let refs: Vec<&Example> = chunk.iter().collect();
        let mut rng = stream(seed, Purpose::Noise, u64::MAX - i as u64);
        let (batch, target) = make_batch(kind, &refs, sched, n, &mut rng)?;
        let out = net.forward(params, &batch)?;
        total += out.iter().zip(&target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
    }
    Ok(total / (data.len() * n) as f64)
}

/// Validation loss of the checkpoint's EMA weights; matches the last logged
/// value for a checkpoint trained on `data`.
pub fn validation_loss(ckpt: &Checkpoint, data: &TrainingData) -> Result<f64> {
    let net = Denoiser::new(ckpt.network.clone())?;
    let sched = ckpt.schedule.build()?;
    eval_loss(&net, &ckpt.ema, ckpt.kind, &data.val, &sched, data.n, ckpt.train_seed)
}

fn fit(kind: ModelKind, data: &TrainingData, cfg: &TrainConfig, data_seed: u64) -> Result<Checkpoint> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let n = data.n;
    let net = Denoiser::new(cfg.network(data.cond_channels))?;
    let spec = ScheduleSpec { kind: cfg.schedule, steps: cfg.train_steps, params: cfg.schedule_params };
    let sched = spec.build()?;
    let mut params = net.init(&mut stream(cfg.seed, Purpose::Init, 0));
    let mut opt = Adam::new(params.len());
    let mut ema = Ema::with_warmup(&params, cfg.ema_decay);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut good = (params.clone(), ema.shadow.clone());
    let mut aborted = None;

    'epochs: for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut stream(cfg.seed, Purpose::Batch, epoch as u64));
        let mut noise = stream(cfg.seed, Purpose::Noise, epoch as u64);
        let (mut sum, mut count) = (0.0, 0usize);
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&Example> = idx.iter().map(|&i| &data.train[i]).collect();
            let (batch, target) = make_batch(kind, &refs, &sched, n, &mut noise)?;
            let (loss, grad) = net.mse_loss_and_grad(&params, &batch, &target)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                aborted = Some(format!("non-finite loss at epoch {epoch}, step {step}"));
                break 'epochs;
            }
            opt.step(&mut params, &grad, lr);
            ema.update(&params);
            sum += loss * refs.len() as f64;
            count += refs.len();
        }
        let val_loss = eval_loss(&net, &ema.shadow, kind, &data.val, &sched, n, cfg.seed)?;
        log.push(EpochLog { epoch, train_loss: sum / count as f64, val_loss, learning_rate: lr });
        good = (params.clone(), ema.shadow.clone());
    }
    let (params, ema_shadow) = good;
    Ok(Checkpoint {
        kind,
        network: net.config.clone(),
        schedule: spec,
        n,
        target: data.target.clone(),
        train_seed: cfg.seed,
        data_seed,
        ema_decay: cfg.ema_decay,
        log,
        aborted,
        params,
        ema: ema_shadow,
    })
}

/// Trains the noise predictor on `E |eps - eps_theta(u_t, t, z)|^2` with
/// `t = k / T`, `k ~ U{1..T}`.
pub fn train(data: &TrainingData, cfg: &TrainConfig, data_seed: u64) -> Result<Checkpoint> {
    fit(ModelKind::Diffusion, data, cfg, data_seed)
}

/// Same backbone with a zero `u_t` channel and `t = 0`, regressing the field.
pub fn train_regressor(data: &TrainingData, cfg: &TrainConfig, data_seed: u64) -> Result<Checkpoint> {
    fit(ModelKind::Regressor, data, cfg, data_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::TargetNormalization;

    fn one_pair(n: usize) -> TrainingData {
        let target: Vec<f64> = (0..n).map(|j| (j as f64 * 0.4).sin()).collect();
        let cond: Vec<f64> = (0..2 * n).map(|j| (j as f64 * 0.13).cos()).collect();
        let ex = Example { cond, target };
        TrainingData { n, cond_channels: 2, target: TargetNormalization::identity(n), train: vec![ex.clone()], val: vec![ex] }
    }

    fn small(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, width: 8, blocks: 2, batch_size: 1, lr_halve_every: 0, ..Default::default() }
    }

    #[test]
    fn diffusion_overfits_one_pair() {
        let data = one_pair(16);
        let ck = train(&data, &small(200), 0).unwrap();
        let first: f64 = ck.log[..10].iter().map(|l| l.train_loss).sum::<f64>() / 10.0;
        let last: f64 = ck.log[190..].iter().map(|l| l.train_loss).sum::<f64>() / 10.0;
        assert!(last <= 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn regressor_overfits_one_pair_and_is_deterministic() {
        let data = one_pair(16);
        let cfg = TrainConfig { learning_rate: 3e-3, ema_decay: 0.0, ..small(500) };
        let ck = train_regressor(&data, &cfg, 0).unwrap();
        let pred = super::super::predict_regressor(&ck, &[data.train[0].cond.as_slice()]).unwrap();
        let t = &data.train[0].target;
        let err = crate::metrics::rel_l2(&pred[0], t).unwrap();
        assert!(err <= 0.05, "rel L2 {err}");
        let again = train_regressor(&data, &cfg, 0).unwrap();
        assert_eq!(ck.params, again.params);
        assert_eq!(ck.log, again.log);
    }

    #[test]
    fn logged_validation_loss_is_reproducible() {
        let data = one_pair(16);
        let ck = train(&data, &small(3), 0).unwrap();
        let v = validation_loss(&ck, &data).unwrap();
        assert!((v - ck.log.last().unwrap().val_loss).abs() <= 1e-12);
    }
}
