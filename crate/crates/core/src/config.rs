//! Run configuration: every tunable default, resolvable from a profile, a TOML
//! file, and command-line overrides, in that order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{SampleConfig, SamplerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::fields::{GrfHyperParams, DEFAULT_ENCODING_LEVELS};
use crate::schedules::ScheduleKind;
use crate::solver2d::{PmlSpec, DEFAULT_MEMORY_CAP};
use crate::store::Splits;

/// Frequencies used at full scale (Hz).
pub const FULL_FREQUENCIES: [f64; 5] = [1.5e5, 2.5e5, 5e5, 7.5e5, 1e6];
/// Grid and frequency reduction of the desk profile relative to full scale.
pub const DESK_SCALE: f64 = 32.0;
/// 2D frequency of the desk profile: 25 points per wavelength at `c = 1500`
/// on the 64 x 64 grid.
pub const DESK_2D_FREQUENCY: f64 = 1.5e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n: usize,
    pub length: f64,
    pub frequencies: Vec<f64>,
    /// Frequency used by single-frequency commands; the lowest one if unset.
    pub frequency: Option<f64>,
    pub splits: Splits,
    /// Draw `(alpha, ell)` per field from the configured ranges.
    pub draw_shape: bool,
    pub source_center: usize,
    pub source_radius: f64,
    pub encoding_levels: usize,
    /// Subtract the pointwise training mean from the targets before scaling.
    pub center_targets: bool,
}

impl DataConfig {
    pub fn dx(&self) -> f64 {
        self.length / (self.n - 1) as f64
    }

    pub fn frequency(&self) -> f64 {
        self.frequency.unwrap_or_else(|| self.frequencies.iter().cloned().fold(f64::INFINITY, f64::min))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Solver2dConfig {
    pub n: usize,
    pub dx: f64,
    pub frequency: f64,
    pub source_radius: f64,
    pub pml: PmlSpec,
    pub memory_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Evaluate on the first `test_limit` test inputs only.
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub steps: Vec<usize>,
    /// `(sampler, schedule)` pairs.
    pub samplers: Vec<(SamplerKind, ScheduleKind)>,
    pub samples: usize,
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivityConfig {
    pub directions: usize,
    pub s_steps: usize,
    /// Probes per group.
    pub probes_per_group: usize,
    /// Near probes sit within this many grid points after the source.
    pub near_span: usize,
    /// Far probes sit within this many grid points of the right end.
    pub far_span: usize,
    /// Relative size `||dc||_inf / c0` of the perturbation in the WKB check.
    pub wkb_relative_perturbation: f64,
    /// Step used for the small-perturbation probe comparison.
    pub small_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub grf: GrfHyperParams,
    pub data: DataConfig,
    pub solver2d: Solver2dConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
    pub sensitivity: SensitivityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        RunConfig::profile(Profile::Desk).data
    }
}

impl Default for Solver2dConfig {
    fn default() -> Self {
        RunConfig::profile(Profile::Desk).solver2d
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        RunConfig::profile(Profile::Desk).eval
    }
}

impl Default for AblationConfig {
    fn default() -> Self {
        RunConfig::profile(Profile::Desk).ablation
    }
}

impl Default for SensitivityConfig {
    fn default() -> Self {
        RunConfig::profile(Profile::Desk).sensitivity
    }
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        let scale = match profile {
            Profile::Desk => DESK_SCALE,
            Profile::Full => 1.0,
        };
        let (n, splits, n2d, directions, s_steps) = match profile {
            Profile::Desk => (128, Splits { train: 2000, val: 250, test: 250 }, 64, 20, 21),
            Profile::Full => (4096, Splits { train: 8190, val: 1020, test: 500 }, 256, 100, 100),
        };
        let dx2d = 1e-3 * 256.0 / n2d as f64;
        let data = DataConfig {
            n,
            length: 1.0,
            frequencies: FULL_FREQUENCIES.iter().map(|f| f / scale).collect(),
            frequency: None,
            splits,
            draw_shape: true,
            source_center: 0,
            source_radius: 0.0,
            encoding_levels: DEFAULT_ENCODING_LEVELS,
            center_targets: false,
        };
        Self {
            profile,
            seed: 0,
            threads: None,
            out_dir: None,
            grf: GrfHyperParams::default(),
            data,
            solver2d: Solver2dConfig {
                n: n2d,
                dx: dx2d,
                frequency: match profile {
                    Profile::Desk => DESK_2D_FREQUENCY,
                    Profile::Full => FULL_FREQUENCIES[0],
                },
                source_radius: 10.0 * n2d as f64 / 256.0,
                pml: PmlSpec::default(),
                memory_cap: DEFAULT_MEMORY_CAP,
            },
            train: TrainConfig::default(),
            sample: SampleConfig::default(),
            eval: EvalConfig {
                test_limit: match profile {
                    Profile::Desk => Some(50),
                    Profile::Full => None,
                },
            },
            ablation: AblationConfig {
                steps: vec![10, 50, 100, 1000],
                samplers: vec![
                    (SamplerKind::Ddpm, ScheduleKind::Linear),
                    (SamplerKind::Ddpm, ScheduleKind::Cosine),
                    (SamplerKind::Ddim, ScheduleKind::Cosine),
                    (SamplerKind::Sde, ScheduleKind::Cosine),
                ],
                samples: 10,
                test_limit: match profile {
                    Profile::Desk => Some(50),
                    Profile::Full => None,
                },
            },
            sensitivity: SensitivityConfig {
                directions,
                s_steps,
                probes_per_group: 4,
                near_span: 8,
                far_span: 10,
                wkb_relative_perturbation: 0.005,
                small_s: 0.02,
            },
        }
    }

    /// Profile defaults overlaid with the keys present in a TOML file.
    pub fn load(path: &Path, profile: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, profile)
    }

    pub fn from_toml(text: &str, profile: Option<Profile>) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let file_profile = match user.get("profile").and_then(|v| v.as_str()) {
            Some("desk") => Some(Profile::Desk),
            Some("full") => Some(Profile::Full),
            Some(other) => return Err(Error::Config(format!("unknown profile `{other}`"))),
            None => None,
        };
        let base = Self::profile(profile.or(file_profile).unwrap_or(Profile::Desk));
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let mut cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(p) = profile {
            cfg.profile = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.grf.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.sample.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.data.n < 3 || self.data.length <= 0.0 {
            return Err(Error::Config("data grid needs n >= 3 and a positive length".into()));
        }
        if self.data.frequencies.is_empty() || self.data.frequencies.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config("need at least one positive frequency".into()));
        }
        if self.data.splits.train == 0 {
            return Err(Error::Config("training split is empty".into()));
        }
        self.solver2d.pml.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.sensitivity.directions < 2 || self.sensitivity.s_steps < 2 {
            return Err(Error::Config("sensitivity needs at least 2 directions and 2 s values".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
