//! Denoising score-matching training, the regressor baseline, and reverse
//! samplers.

mod samplers;
mod train;

pub use samplers::{
    ddim_subsequence, predict_regressor, run_sampler, sample_ddim, sample_ddpm, sample_sde, NetPredictor,
    NoiseLevel, NoisePredictor, OracleEps, SampleConfig, SamplerKind, DEFAULT_MU_FLOOR,
};
pub use train::{train, train_regressor, validation_loss, TrainConfig};

use serde::{Deserialize, Serialize};

use crate::nn::DenoiserConfig;
use crate::schedules::{make_schedule, NoiseSchedule, ScheduleKind, ScheduleParams};
use crate::error::Result;

/// One supervised pair: conditioning stack (channel-major) and target field.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub cond: Vec<f64>,
    pub target: Vec<f64>,
}

/// Targets seen by the network are `(u - mean) / scale`, point by point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetNormalization {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl TargetNormalization {
    pub fn identity(n: usize) -> Self {
        Self { mean: vec![0.0; n], scale: 1.0 }
    }

    /// RMS scale of `fields`. With `centered`, the pointwise mean is removed
    /// first and the scale is the RMS of the deviations.
    pub fn fit<'a>(fields: impl IntoIterator<Item = &'a [f64]>, n: usize, centered: bool) -> Self {
        let fields: Vec<&[f64]> = fields.into_iter().collect();
        if fields.is_empty() {
            return Self::identity(n);
        }
        let m = fields.len() as f64;
        let mean: Vec<f64> = if centered {
            (0..n).map(|j| fields.iter().map(|f| f[j]).sum::<f64>() / m).collect()
        } else {
            vec![0.0; n]
        };
        let sq: f64 = fields.iter().flat_map(|f| f.iter().zip(&mean).map(|(v, a)| (v - a) * (v - a))).sum();
        let rms = (sq / (m * n as f64)).sqrt();
        Self { mean, scale: if rms > 0.0 { rms } else { 1.0 } }
    }

    pub fn to_model(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.mean).map(|(v, a)| (v - a) / self.scale).collect()
    }

    pub fn to_physical(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.mean).map(|(v, a)| v * self.scale + a).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub n: usize,
    pub cond_channels: usize,
    pub target: TargetNormalization,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Diffusion,
    Regressor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub params: ScheduleParams,
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.kind, self.steps, self.params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
}

/// Everything needed to rebuild and evaluate a trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub network: DenoiserConfig,
    pub schedule: ScheduleSpec,
    pub n: usize,
    pub target: TargetNormalization,
    pub train_seed: u64,
    pub data_seed: u64,
    pub ema_decay: f64,
    pub log: Vec<EpochLog>,
    /// Set when training stopped early on a non-finite loss; the parameters
    /// are then those of the last completed epoch.
    pub aborted: Option<String>,
    #[serde(skip)]
    pub params: Vec<f64>,
    #[serde(skip)]
    pub ema: Vec<f64>,
}
