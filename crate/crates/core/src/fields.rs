//! Heterogeneous sound-speed media from spectral Gaussian random fields, and
//! the conditioning stack fed to the surrogate models.
//!
//! A realization is complex white noise shaped by the envelope
//! `exp(-(ell*K)^alpha)` on the unit-spacing FFT frequency grid, brought back
//! with an inverse real FFT, mean-centered, and mapped to
//! `c = c_bg + sigma_c * u`. Draws that leave `(c_min, c_max)` anywhere are
//! rejected and redrawn.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CoefficientField, Shape};
use crate::spectral::{fftfreq, irfft, irfft2, rfftfreq};

/// Rejection attempts per field before giving up.
pub const MAX_ATTEMPTS: usize = 1000;

pub const DEFAULT_ENCODING_LEVELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrfHyperParams {
    pub alpha: f64,
    pub ell: f64,
    pub c_bg: f64,
    pub sigma_c: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub alpha_range: (f64, f64),
    pub ell_range: (f64, f64),
}

impl Default for GrfHyperParams {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            ell: 0.5,
            c_bg: 1500.0,
            sigma_c: 500.0,
            c_min: 1300.0,
            c_max: 1700.0,
            alpha_range: (0.5, 2.5),
            ell_range: (0.35, 0.7),
        }
    }
}

impl GrfHyperParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.ell, self.c_bg, self.sigma_c, self.c_min, self.c_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("non-finite GRF hyperparameter"));
        }
        if self.alpha <= 0.0 || self.ell <= 0.0 {
            return Err(Error::invalid(format!(
                "alpha={} and ell={} must be positive",
                self.alpha, self.ell
            )));
        }
        if !(self.c_min < self.c_bg && self.c_bg < self.c_max) {
            return Err(Error::invalid(format!(
                "need c_min < c_bg < c_max, got {} / {} / {}",
                self.c_min, self.c_bg, self.c_max
            )));
        }
        if self.sigma_c < 0.0 {
            return Err(Error::invalid("sigma_c must be non-negative"));
        }
        let (a0, a1) = self.alpha_range;
        let (l0, l1) = self.ell_range;
        if !(0.0 < a0 && a0 <= a1 && 0.0 < l0 && l0 <= l1) {
            return Err(Error::invalid("alpha_range / ell_range must be positive intervals"));
        }
        Ok(())
    }

    /// Copy with `alpha` and `ell` drawn uniformly from their ranges.
    pub fn with_drawn_shape<R: Rng>(&self, rng: &mut R) -> Self {
        let draw = |rng: &mut R, (lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let alpha = draw(rng, self.alpha_range);
        let ell = draw(rng, self.ell_range);
        Self { alpha, ell, ..self.clone() }
    }
}

/// `exp(-(ell*K)^alpha)` elementwise.
pub fn spectral_envelope(kgrid: &[f64], alpha: f64, ell: f64) -> Result<Vec<f64>> {
    if !(alpha.is_finite() && ell.is_finite()) || alpha <= 0.0 || ell <= 0.0 {
        return Err(Error::invalid(format!("envelope needs finite alpha, ell > 0 (got {alpha}, {ell})")));
    }
    kgrid
        .iter()
        .map(|&k| {
            if !k.is_finite() || k < 0.0 {
                Err(Error::invalid(format!("wavenumber {k} must be finite and non-negative")))
            } else {
                Ok((-(ell * k).powf(alpha)).exp())
            }
        })
        .collect()
}

/// `|K|` on the half spectrum used by the real inverse transform.
pub fn wavenumber_grid(shape: Shape) -> Vec<f64> {
    match shape {
        Shape::D1(n) => rfftfreq(n),
        Shape::D2 { rows, cols } => {
            let kx = fftfreq(rows);
            let ky = rfftfreq(cols);
            kx.iter()
                .flat_map(|a| ky.iter().map(move |b| (a * a + b * b).sqrt()))
                .collect()
        }
    }
}

/// One mean-centered GRF realization (before mapping to sound speed).
pub fn grf_realization<R: Rng>(shape: Shape, envelope: &[f64], rng: &mut R) -> Vec<f64> {
    let spectrum: Vec<Complex64> = envelope
        .iter()
        .map(|&lam| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) * lam
        })
        .collect();
    let mut u = match shape {
        Shape::D1(n) => irfft(&spectrum, n),
        Shape::D2 { rows, cols } => irfft2(&spectrum, rows, cols),
    };
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    u.iter_mut().for_each(|v| *v -= mean);
    u
}

/// Rejection-sampled sound-speed field with the fixed `hp.alpha`, `hp.ell`.
pub fn sample_grf(shape: Shape, dx: f64, hp: &GrfHyperParams, seed: u64) -> Result<CoefficientField> {
    shape.validate()?;
    hp.validate()?;
    let envelope = spectral_envelope(&wavenumber_grid(shape), hp.alpha, hp.ell)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let u = grf_realization(shape, &envelope, &mut rng);
        let values: Vec<f64> = u.iter().map(|v| hp.c_bg + hp.sigma_c * v).collect();
        if values.iter().all(|&c| hp.c_min < c && c < hp.c_max) {
            let mut field = CoefficientField::new(values, shape, dx)?;
            field.seed = seed;
            return Ok(field);
        }
    }
    Err(Error::GenerationFailure {
        attempts: MAX_ATTEMPTS,
        detail: format!("{hp:?}"),
    })
}

/// Draws `(alpha, ell)` from the configured ranges, then samples a field.
pub fn sample_grf_family(shape: Shape, dx: f64, hp: &GrfHyperParams, seed: u64) -> Result<CoefficientField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let drawn = hp.with_drawn_shape(&mut rng);
    sample_grf(shape, dx, &drawn, seed)
}

/// Dataset-level statistics used to standardize the speed channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedNormalization {
    pub mean: f64,
    pub std: f64,
}

impl SpeedNormalization {
    pub fn from_fields<'a>(fields: impl IntoIterator<Item = &'a CoefficientField>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for f in fields {
            for &v in &f.values {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        let mean = sum / n.max(1) as f64;
        let var = (sq / n.max(1) as f64 - mean * mean).max(0.0);
        Self { mean, std: if var > 0.0 { var.sqrt() } else { 1.0 } }
    }
}

/// Source region: all grid points within `radius` (grid units) of `center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDisk {
    pub center: Vec<usize>,
    pub radius: f64,
}

impl SourceDisk {
    pub fn mask(&self, shape: Shape) -> Result<Vec<f64>> {
        let dims = shape.dims();
        if self.center.len() != dims.len() {
            return Err(Error::invalid("source center dimensionality does not match grid"));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::invalid("source radius must be finite and non-negative"));
        }
        for (&c, &n) in self.center.iter().zip(&dims) {
            if (c as f64) - self.radius < 0.0 || (c as f64) + self.radius > (n - 1) as f64 {
                return Err(Error::invalid(format!(
                    "source disk (center {:?}, radius {}) intersects the grid boundary",
                    self.center, self.radius
                )));
            }
        }
        let r2 = self.radius * self.radius;
        Ok(match shape {
            Shape::D1(n) => (0..n)
                .map(|j| {
                    let d = j as f64 - self.center[0] as f64;
                    if d * d <= r2 { 1.0 } else { 0.0 }
                })
                .collect(),
            Shape::D2 { rows, cols } => (0..rows * cols)
                .map(|p| {
                    let di = (p / cols) as f64 - self.center[0] as f64;
                    let dj = (p % cols) as f64 - self.center[1] as f64;
                    if di * di + dj * dj <= r2 { 1.0 } else { 0.0 }
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelKind {
    Speed,
    Mask,
    Sin { axis: usize, level: usize },
    Cos { axis: usize, level: usize },
}

/// Clean conditioning channels `[speed, mask, PE...]` sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningStack {
    pub shape: Shape,
    pub kinds: Vec<ChannelKind>,
    pub channels: Vec<Vec<f64>>,
    pub encoding_levels: usize,
}

impl ConditioningStack {
    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, kind: ChannelKind) -> Option<&[f64]> {
        self.kinds.iter().position(|&k| k == kind).map(|i| self.channels[i].as_slice())
    }

    /// Channel-major concatenation, the layout the denoiser consumes.
    pub fn flatten(&self) -> Vec<f64> {
        self.channels.concat()
    }
}

/// Number of conditioning channels for a grid dimensionality and level count.
pub fn conditioning_channels(ndim: usize, levels: usize) -> usize {
    2 + 2 * ndim * levels
}

/// Sinusoidal coordinate encodings for axis coordinates `x in [0, 1]`.
fn encoding(axis_coord: &[f64], level: usize) -> (Vec<f64>, Vec<f64>) {
    let f = (1u64 << level) as f64 * PI;
    (
        axis_coord.iter().map(|x| (f * x).sin()).collect(),
        axis_coord.iter().map(|x| (f * x).cos()).collect(),
    )
}

pub fn build_conditioning(
    c: &CoefficientField,
    norm: SpeedNormalization,
    source: &SourceDisk,
    levels: usize,
) -> Result<ConditioningStack> {
    if levels == 0 {
        return Err(Error::invalid("encoding levels must be at least 1"));
    }
    if !(norm.std > 0.0 && norm.std.is_finite() && norm.mean.is_finite()) {
        return Err(Error::invalid("speed normalization needs finite mean and std > 0"));
    }
    let shape = c.shape;
    let mask = source.mask(shape)?;
    let speed: Vec<f64> = c.values.iter().map(|v| (v - norm.mean) / norm.std).collect();
    let mut kinds = vec![ChannelKind::Speed, ChannelKind::Mask];
    let mut channels = vec![speed, mask];
    // coordinate of every grid point along each axis, normalized to [0, 1]
    let coords: Vec<Vec<f64>> = match shape {
        Shape::D1(n) => vec![(0..n).map(|j| j as f64 / (n - 1) as f64).collect()],
        Shape::D2 { rows, cols } => vec![
            (0..rows * cols).map(|p| (p % cols) as f64 / (cols - 1) as f64).collect(),
            (0..rows * cols).map(|p| (p / cols) as f64 / (rows - 1) as f64).collect(),
        ],
    };
    for level in 0..levels {
        for (axis, coord) in coords.iter().enumerate() {
            let (s, co) = encoding(coord, level);
            kinds.push(ChannelKind::Sin { axis, level });
            channels.push(s);
            kinds.push(ChannelKind::Cos { axis, level });
            channels.push(co);
        }
    }
    Ok(ConditioningStack { shape, kinds, channels, encoding_levels: levels })
}
