//! Glue between the stages: dataset generation, conversion to network
//! examples, and evaluation of trained models on the test split.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::diffusion::{
    predict_regressor, run_sampler, Checkpoint, TargetNormalization, Example, ModelKind, NetPredictor, SampleConfig, TrainingData,
};
use crate::error::{Error, Result};
use crate::fields::{build_conditioning, conditioning_channels, sample_grf, sample_grf_family, SourceDisk, SpeedNormalization};
use crate::grid::{CoefficientField, Shape};
use crate::metrics::ErrorReport;
use crate::rng::{child_seed, Purpose};
use crate::sensitivity::Evaluator;
use crate::solver1d::{angular, solve_helmholtz_1d};
use crate::store::{DatasetManifest, DatasetRecord, FORMAT_VERSION};

/// Medium `i` of the dataset rooted at `seed`.
pub fn dataset_medium(cfg: &RunConfig, seed: u64, i: usize) -> Result<CoefficientField> {
    let shape = Shape::D1(cfg.data.n);
    let s = child_seed(seed, Purpose::Field, i as u64);
    if cfg.data.draw_shape {
        sample_grf_family(shape, cfg.data.dx(), &cfg.grf, s)
    } else {
        sample_grf(shape, cfg.data.dx(), &cfg.grf, s)
    }
}

/// Draws the media, solves each at `frequency_hz`, and computes the
/// dataset-level statistics from the training split.
pub fn generate_dataset(cfg: &RunConfig, frequency_hz: f64) -> Result<(Vec<DatasetRecord>, DatasetManifest)> {
    let d = &cfg.data;
    let shape = Shape::D1(d.n);
    let source = SourceDisk { center: vec![d.source_center], radius: d.source_radius };
    let mask = source.mask(shape)?;
    let total = d.splits.total();
    let records: Vec<Result<DatasetRecord>> = (0..total)
        .into_par_iter()
        .map(|i| {
            let c = dataset_medium(cfg, cfg.seed, i)?;
            let u = solve_helmholtz_1d(&c, frequency_hz)?;
            Ok(DatasetRecord { index: i as u64, c: c.values, mask: mask.clone(), u: u.values })
        })
        .collect();
    let records: Vec<DatasetRecord> = records.into_iter().collect::<Result<_>>()?;
    let train = &records[d.splits.ranges()[0].clone()];
    let fields: Vec<CoefficientField> =
        train.iter().map(|r| CoefficientField::new(r.c.clone(), shape, d.dx())).collect::<Result<_>>()?;
    let normalization = SpeedNormalization::from_fields(&fields);
    let re: Vec<Vec<f64>> = train.iter().map(|r| r.u.iter().map(|v| v.re).collect()).collect();
    let target = TargetNormalization::fit(re.iter().map(|v| v.as_slice()), d.n, d.center_targets);
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        frequency_hz,
        shape,
        dx: d.dx(),
        length: d.length,
        grf: cfg.grf.clone(),
        draw_shape: d.draw_shape,
        source,
        encoding_levels: d.encoding_levels,
        normalization,
        target,
        splits: d.splits,
        root_seed: cfg.seed,
        records: total,
        sha256: String::new(),
    };
    Ok((records, manifest))
}

/// Conditioning stack (channel-major) for one medium.
pub fn conditioning(c: &[f64], m: &DatasetManifest) -> Result<Vec<f64>> {
    let field = CoefficientField::new(c.to_vec(), m.shape, m.dx)?;
    Ok(build_conditioning(&field, m.normalization, &m.source, m.encoding_levels)?.flatten())
}

fn examples(records: &[DatasetRecord], m: &DatasetManifest) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            Ok(Example {
                cond: conditioning(&r.c, m)?,
                target: m.target.to_model(&r.u.iter().map(|v| v.re).collect::<Vec<_>>()),
            })
        })
        .collect()
}

pub fn training_data(records: &[DatasetRecord], m: &DatasetManifest) -> Result<TrainingData> {
    let [tr, va, _] = m.splits.ranges();
    Ok(TrainingData {
        n: m.shape.len(),
        cond_channels: conditioning_channels(m.shape.ndim(), m.encoding_levels),
        target: m.target.clone(),
        train: examples(&records[tr], m)?,
        val: examples(&records[va], m)?,
    })
}

/// Test records, optionally truncated.
pub fn test_split<'a>(records: &'a [DatasetRecord], m: &DatasetManifest, limit: Option<usize>) -> &'a [DatasetRecord] {
    let r = m.splits.ranges()[2].clone();
    let end = limit.map_or(r.end, |l| (r.start + l).min(r.end));
    &records[r.start..end]
}

/// Predicted `Re u` fields, `samples` per test input (one for the regressor),
/// in physical units. Chain `i * samples + s` is sample `s` of input `i`.
pub fn predict(
    ckpt: &Checkpoint,
    test: &[DatasetRecord],
    m: &DatasetManifest,
    sample: &SampleConfig,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if ckpt.n != m.shape.len() {
        return Err(Error::invalid("checkpoint grid differs from the dataset grid"));
    }
    let conds: Vec<Vec<f64>> = test.iter().map(|r| conditioning(&r.c, m)).collect::<Result<_>>()?;
    let out: Vec<Vec<Vec<f64>>> = match ckpt.kind {
        ModelKind::Regressor => {
            let refs: Vec<&[f64]> = conds.iter().map(|v| v.as_slice()).collect();
            predict_regressor(ckpt, &refs)?.into_iter().map(|p| vec![p]).collect()
        }
        ModelKind::Diffusion => {
            let s = sample.samples;
            let refs: Vec<&[f64]> = conds.iter().flat_map(|v| std::iter::repeat_n(v.as_slice(), s)).collect();
            let ids: Vec<u64> = test.iter().flat_map(|r| (0..s as u64).map(move |k| r.index * s as u64 + k)).collect();
            let pred = NetPredictor::new(ckpt, refs)?;
            let flat = run_sampler(sample, &pred, ckpt.n, &ids)?;
            flat.chunks(s).map(|c| c.to_vec()).collect()
        }
    };
    Ok(out
        .into_iter()
        .map(|per| per.into_iter().map(|f| ckpt.target.to_physical(&f)).collect())
        .collect())
}

/// Per-sample errors of `Re u` predictions against the reference solutions.
pub fn score(predictions: &[Vec<Vec<f64>>], test: &[DatasetRecord], m: &DatasetManifest) -> Result<ErrorReport> {
    let omega = angular(m.frequency_hz);
    let mut rep = ErrorReport::default();
    for (per, r) in predictions.iter().zip(test) {
        let truth: Vec<f64> = r.u.iter().map(|v| v.re).collect();
        for p in per {
            rep.push(p, &truth, &r.c, omega, m.shape, m.dx)?;
        }
    }
    Ok(rep)
}

/// Trained model as a sensitivity evaluator: one diffusion sample (or the
/// regressor output) per medium, returned as `Re u` with zero imaginary part.
pub struct ModelEvaluator<'a> {
    pub ckpt: &'a Checkpoint,
    pub manifest: &'a DatasetManifest,
    pub sample: SampleConfig,
}

impl ModelEvaluator<'_> {
    fn run(&self, ids: &[u64], media: &[CoefficientField]) -> Result<Vec<Vec<Complex64>>> {
        let conds: Vec<Vec<f64>> = media.iter().map(|c| conditioning(&c.values, self.manifest)).collect::<Result<_>>()?;
        let refs: Vec<&[f64]> = conds.iter().map(|v| v.as_slice()).collect();
        let raw = match self.ckpt.kind {
            ModelKind::Regressor => predict_regressor(self.ckpt, &refs)?,
            ModelKind::Diffusion => {
                let pred = NetPredictor::new(self.ckpt, refs)?;
                let one = SampleConfig { samples: 1, ..self.sample.clone() };
                run_sampler(&one, &pred, self.ckpt.n, ids)?
            }
        };
        Ok(raw
            .iter()
            .map(|y| self.ckpt.target.to_physical(y).into_iter().map(|v| Complex64::new(v, 0.0)).collect())
            .collect())
    }
}

impl Evaluator for ModelEvaluator<'_> {
    fn evaluate(&self, ids: &[u64], media: &[CoefficientField]) -> Vec<Result<Vec<Complex64>>> {
        match self.run(ids, media) {
            Ok(fields) => fields.into_iter().map(Ok).collect(),
            Err(e) => {
                let msg = e.to_string();
                media.iter().map(|_| Err(Error::invalid(msg.clone()))).collect()
            }
        }
    }
}
