//! Command-line front end. Every stage reads and writes inside one run
//! directory; file names carry the frequency so several frequencies can share
//! a directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{Profile, RunConfig};
use crate::diffusion::{train, train_regressor, Checkpoint, ModelKind, SampleConfig, SamplerKind};
use crate::error::{Error, Result};
use crate::grid::{CoefficientField, Shape};
use crate::metrics::ErrorReport;
use crate::pipeline::{generate_dataset, predict, score, test_split, training_data, ModelEvaluator};
use crate::plot::{Figure, Series};
use crate::schedules::ScheduleKind;
use crate::sensitivity::{
    run_homotopy, spearman, wkb_check, wkb_perturbation, Density, Evaluator, HomotopyStudy, ProbeGroup,
    ReferenceSolver1D, SensitivityReport,
};
use crate::store::{self, DatasetManifest, DatasetRecord};

#[derive(Debug, Parser)]
#[command(name = "helmdiff", version, about = "Helmholtz surrogate workbench")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Draw media, solve them, and write the dataset.
    GenData,
    /// Train the conditional diffusion model.
    Train,
    /// Train the deterministic regressor.
    TrainBaseline,
    /// Draw samples for the test inputs.
    Sample,
    /// Relative L2 / H1 / energy errors of every trained model.
    Eval,
    /// Error grid over samplers, schedules and step counts.
    AblateSamplers,
    /// Homotopy sensitivity study and WKB scaling check.
    Sensitivity,
    /// Summary document from the CSV tables in the run directory.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::TrainBaseline => "train-baseline",
            Command::Sample => "sample",
            Command::Eval => "eval",
            Command::AblateSamplers => "ablate-samplers",
            Command::Sensitivity => "sensitivity",
            Command::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// TOML file overriding profile defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true, value_name = "DIR", env = "HDL_OUT")]
    pub out: Option<PathBuf>,
    /// Root seed for data, training and sampling.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Frequency in Hz for single-frequency stages.
    #[arg(long, global = true, value_name = "HZ")]
    pub freq: Option<f64>,
    /// `ddpm`, `ddim` or `sde`, optionally suffixed with `-linear` or `-cosine`.
    #[arg(long, global = true, value_name = "NAME")]
    pub sampler: Option<String>,
    /// Sampler steps T.
    #[arg(long, global = true, value_name = "N")]
    pub steps: Option<usize>,
    /// Samples per test input.
    #[arg(long, global = true, value_name = "S")]
    pub samples: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
}

/// Parses `ddpm`, `ddim-linear`, ... into a sampler and optional schedule.
pub fn parse_sampler(name: &str) -> Result<(SamplerKind, Option<ScheduleKind>)> {
    match name.split_once('-') {
        Some((s, k)) => Ok((s.parse()?, Some(k.parse()?))),
        None => Ok((name.parse()?, None)),
    }
}

/// Profile defaults, then the TOML file, then flags.
pub fn resolve(opts: &Options) -> Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::load(path, opts.profile)?,
        None => RunConfig::profile(opts.profile.unwrap_or(Profile::Desk)),
    };
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
        cfg.sample.seed = seed;
    }
    if let Some(f) = opts.freq {
        cfg.data.frequency = Some(f);
    }
    if let Some(name) = &opts.sampler {
        let (sampler, schedule) = parse_sampler(name)?;
        cfg.sample.sampler = sampler;
        if let Some(k) = schedule {
            cfg.sample.schedule = k;
        }
    }
    if let Some(s) = opts.steps {
        cfg.sample.steps = s;
    }
    if let Some(s) = opts.samples {
        cfg.sample.samples = s;
    }
    if let Some(t) = opts.threads {
        cfg.threads = Some(t);
    }
    if let Some(out) = &opts.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn freq_tag(f: f64) -> String {
    format!("{f}")
}

pub fn data_path(out: &Path, f: f64) -> PathBuf {
    out.join(format!("data_{}.hdld", freq_tag(f)))
}

pub fn checkpoint_path(out: &Path, kind: ModelKind, f: f64) -> PathBuf {
    let name = match kind {
        ModelKind::Diffusion => "diffusion",
        ModelKind::Regressor => "regressor",
    };
    out.join(format!("{name}_{}.ckpt", freq_tag(f)))
}

fn model_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Diffusion => "diffusion",
        ModelKind::Regressor => "regressor",
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    store::write_atomic(path, &bytes)
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| Error::invalid(format!("{}: {e}", path.display())))).collect()
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    train_seed: u64,
    sample_seed: u64,
    frequency_hz: f64,
    threads: Option<usize>,
}

/// Runs one command: echoes the resolved config and seeds into the run
/// directory, then executes the stage.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<()> {
    let out = out_dir(cfg);
    std::fs::create_dir_all(&out)?;
    let name = command.name();
    store::write_atomic(&out.join(format!("config.{name}.toml")), cfg.to_toml()?.as_bytes())?;
    let record = RunRecord {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        train_seed: cfg.train.seed,
        sample_seed: cfg.sample.seed,
        frequency_hz: cfg.data.frequency(),
        threads: cfg.threads,
    };
    let json = serde_json::to_vec_pretty(&record).map_err(|e| Error::invalid(e.to_string()))?;
    store::write_atomic(&out.join(format!("run.{name}.json")), &json)?;
    let result = match command {
        Command::GenData => gen_data(cfg, &out),
        Command::Train => train_model(cfg, &out, ModelKind::Diffusion),
        Command::TrainBaseline => train_model(cfg, &out, ModelKind::Regressor),
        Command::Sample => sample(cfg, &out),
        Command::Eval => eval(cfg, &out),
        Command::AblateSamplers => ablate(cfg, &out),
        Command::Sensitivity => sensitivity(cfg, &out),
        Command::Report => report(&out),
    };
    result.map_err(|e| Error::Stage { stage: name, source: Box::new(e) })
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let cfg = match resolve(&cli.opts) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Some(t) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: thread pool: {e}");
            return 2;
        }
    }
    match execute(cli.command, &cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let f = cfg.data.frequency();
    let (records, manifest) = generate_dataset(cfg, f)?;
    let path = data_path(out, f);
    let m = store::write_dataset(&records, &manifest, &path)?;
    println!("{}: {} records, sha256 {}", path.display(), m.records, m.sha256);
    Ok(())
}

pub fn load_data(out: &Path, f: f64) -> Result<(Vec<DatasetRecord>, DatasetManifest)> {
    let path = data_path(out, f);
    if !path.exists() {
        return Err(Error::invalid(format!("{} not found; run gen-data first", path.display())));
    }
    store::read_dataset(&path)
}

fn load_checkpoint(out: &Path, kind: ModelKind, f: f64) -> Result<Checkpoint> {
    let path = checkpoint_path(out, kind, f);
    if !path.exists() {
        return Err(Error::invalid(format!("{} not found; train the {} first", path.display(), model_name(kind))));
    }
    store::read_checkpoint(&path)
}

#[derive(Serialize)]
struct LogRow {
    epoch: usize,
    train_loss: f64,
    val_loss: f64,
    learning_rate: f64,
}

fn train_model(cfg: &RunConfig, out: &Path, kind: ModelKind) -> Result<()> {
    let f = cfg.data.frequency();
    let (records, manifest) = load_data(out, f)?;
    let data = training_data(&records, &manifest)?;
    let ckpt = match kind {
        ModelKind::Diffusion => train(&data, &cfg.train, manifest.root_seed)?,
        ModelKind::Regressor => train_regressor(&data, &cfg.train, manifest.root_seed)?,
    };
    let path = checkpoint_path(out, kind, f);
    store::write_checkpoint(&ckpt, &path)?;
    let rows: Vec<LogRow> = ckpt
        .log
        .iter()
        .map(|l| LogRow { epoch: l.epoch, train_loss: l.train_loss, val_loss: l.val_loss, learning_rate: l.learning_rate })
        .collect();
    write_csv(&out.join(format!("train_log_{}_{}.csv", model_name(kind), freq_tag(f))), &rows)?;
    if let Some(why) = &ckpt.aborted {
        return Err(Error::TrainingFailure(format!("{why}; last good epoch saved to {}", path.display())));
    }
    println!("{}: {} epochs", path.display(), ckpt.log.len());
    Ok(())
}

#[derive(Serialize)]
struct SampleRow {
    test_index: u64,
    sample: usize,
    point: usize,
    re_u: f64,
}

fn sample(cfg: &RunConfig, out: &Path) -> Result<()> {
    let f = cfg.data.frequency();
    let (records, m) = load_data(out, f)?;
    let ckpt = load_checkpoint(out, ModelKind::Diffusion, f)?;
    let test = test_split(&records, &m, cfg.eval.test_limit);
    let preds = predict(&ckpt, test, &m, &cfg.sample)?;
    let mut rows = Vec::new();
    for (rec, per) in test.iter().zip(&preds) {
        for (s, field) in per.iter().enumerate() {
            rows.extend(field.iter().enumerate().map(|(j, &v)| SampleRow { test_index: rec.index, sample: s, point: j, re_u: v }));
        }
    }
    let path = out.join(format!("samples_{}_{}-{}.csv", freq_tag(f), cfg.sample.label(), cfg.sample.steps));
    write_csv(&path, &rows)?;
    println!("{}: {} inputs x {} samples", path.display(), test.len(), cfg.sample.samples);
    Ok(())
}

/// One row of `eval_<freq>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub frequency: f64,
    pub model: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Serialize)]
struct PerSampleRow {
    frequency: f64,
    model: String,
    test_index: u64,
    sample: usize,
    rel_l2: f64,
    rel_h1: f64,
    rel_energy: f64,
}

/// Errors of one model on the configured test inputs.
pub fn evaluate_model(
    ckpt: &Checkpoint,
    records: &[DatasetRecord],
    m: &DatasetManifest,
    sample: &SampleConfig,
    limit: Option<usize>,
) -> Result<ErrorReport> {
    let test = test_split(records, m, limit);
    let preds = predict(ckpt, test, m, sample)?;
    score(&preds, test, m)
}

fn eval(cfg: &RunConfig, out: &Path) -> Result<()> {
    let f = cfg.data.frequency();
    let (records, m) = load_data(out, f)?;
    let mut rows = Vec::new();
    let mut per_sample = Vec::new();
    for kind in [ModelKind::Diffusion, ModelKind::Regressor] {
        if !checkpoint_path(out, kind, f).exists() {
            continue;
        }
        let ckpt = load_checkpoint(out, kind, f)?;
        let rep = evaluate_model(&ckpt, &records, &m, &cfg.sample, cfg.eval.test_limit)?;
        let name = model_name(kind);
        for (metric, s) in rep.summaries() {
            rows.push(EvalRow { frequency: f, model: name.into(), metric: metric.into(), mean: s.mean, std: s.std, n: s.n });
        }
        let test = test_split(&records, &m, cfg.eval.test_limit);
        let per = rep.rel_l2.len() / test.len();
        for i in 0..rep.rel_l2.len() {
            per_sample.push(PerSampleRow {
                frequency: f,
                model: name.into(),
                test_index: test[i / per].index,
                sample: i % per,
                rel_l2: rep.rel_l2[i],
                rel_h1: rep.rel_h1[i],
                rel_energy: rep.rel_energy[i],
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid("no trained model found for this frequency"));
    }
    write_csv(&out.join(format!("eval_{}.csv", freq_tag(f))), &rows)?;
    write_csv(&out.join(format!("eval_{}_samples.csv", freq_tag(f))), &per_sample)?;
    for r in &rows {
        println!("{} {} {} {:.4} +- {:.4} (n={})", r.frequency, r.model, r.metric, r.mean, r.std, r.n);
    }
    Ok(())
}

/// One row of `ablation_<freq>.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub frequency: f64,
    pub sampler: String,
    pub schedule: String,
    pub steps: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Evaluates the diffusion checkpoint over the configured sampler grid.
pub fn ablation_rows(
    cfg: &RunConfig,
    ckpt: &Checkpoint,
    records: &[DatasetRecord],
    m: &DatasetManifest,
) -> Result<Vec<AblationRow>> {
    let a = &cfg.ablation;
    let mut rows = Vec::new();
    for &(sampler, schedule) in &a.samplers {
        for &steps in &a.steps {
            let sc = SampleConfig { sampler, schedule, steps, samples: a.samples, ..cfg.sample.clone() };
            let rep = evaluate_model(ckpt, records, m, &sc, a.test_limit)?;
            for (metric, s) in rep.summaries() {
                rows.push(AblationRow {
                    frequency: m.frequency_hz,
                    sampler: sampler.to_string(),
                    schedule: schedule.to_string(),
                    steps,
                    metric: metric.into(),
                    mean: s.mean,
                    std: s.std,
                    n: s.n,
                });
            }
        }
    }
    Ok(rows)
}

fn ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let f = cfg.data.frequency();
    let (records, m) = load_data(out, f)?;
    let ckpt = load_checkpoint(out, ModelKind::Diffusion, f)?;
    let rows = ablation_rows(cfg, &ckpt, &records, &m)?;
    write_csv(&out.join(format!("ablation_{}.csv", freq_tag(f))), &rows)?;
    for r in rows.iter().filter(|r| r.metric == "rel_l2") {
        println!("{}-{} T={}: {:.4} +- {:.4}", r.sampler, r.schedule, r.steps, r.mean, r.std);
    }
    Ok(())
}

#[derive(Serialize)]
struct ResponseRow<'a> {
    evaluator: &'a str,
    direction: usize,
    s: f64,
    probe: usize,
    group: ProbeGroup,
    amplitude: f64,
}

#[derive(Serialize)]
struct VarianceRow<'a> {
    evaluator: &'a str,
    s: f64,
    variance: f64,
}

#[derive(Serialize)]
struct KdeRow<'a> {
    evaluator: &'a str,
    s: f64,
    probe: usize,
    group: ProbeGroup,
    x: f64,
    density: f64,
    spike: bool,
}

/// One row of `sensitivity_<freq>_summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub evaluator: String,
    pub quantity: String,
    pub value: f64,
}

#[derive(Serialize)]
struct WkbRow {
    frequency: f64,
    probe: usize,
    group: ProbeGroup,
    kx: f64,
    ratio: f64,
}

/// Frequency of the sensitivity stage: the configured one, else the highest.
pub fn sensitivity_frequency(cfg: &RunConfig) -> f64 {
    cfg.data.frequency.unwrap_or_else(|| cfg.data.frequencies.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// Summary quantities of one evaluator's homotopy run.
pub fn summarize_report(name: &str, rep: &SensitivityReport, fields: &crate::sensitivity::HomotopyFields, small: usize) -> Result<Vec<SummaryRow>> {
    let row = |q: &str, v: f64| SummaryRow { evaluator: name.into(), quantity: q.into(), value: v };
    let integrals: Vec<f64> = rep.kde.iter().flatten().map(Density::integral).collect();
    let worst = integrals.iter().map(|i| (i - 1.0).abs()).fold(0.0, f64::max);
    Ok(vec![
        row("variance_at_s0", rep.variance_vs_s[0]),
        row("spearman_variance_vs_s", spearman(&rep.s_grid, &rep.variance_vs_s)?),
        row("kde_max_mass_error", worst),
        row("near_relative_change", rep.relative_change(fields, small, ProbeGroup::Near)),
        row("far_relative_change", rep.relative_change(fields, small, ProbeGroup::Far)),
    ])
}

/// Index of the `s` grid point closest to `s`, skipping 0.
pub fn small_s_index(grid: &[f64], s: f64) -> usize {
    (1..grid.len()).min_by(|&a, &b| (grid[a] - s).abs().total_cmp(&(grid[b] - s).abs())).unwrap_or(1)
}

fn kde_figure(name: &str, rep: &SensitivityReport, s: usize, f: f64) -> Figure {
    let mut fig = Figure::new(format!("{name}: |u| across directions, s = {:.3}, f = {f} Hz", rep.s_grid[s]), "|u|", "density");
    for (p, probe) in rep.probes.iter().enumerate() {
        let label = format!("{} x[{}]", probe.group, probe.index);
        match &rep.kde[s][p] {
            Density::Smooth { grid, density, .. } => {
                fig.push(Series::filled(label, grid.clone(), density.clone()));
            }
            Density::Spike { at } => fig.vlines.push((label, *at)),
        }
    }
    fig
}

fn sensitivity(cfg: &RunConfig, out: &Path) -> Result<()> {
    let f = sensitivity_frequency(cfg);
    let sc = &cfg.sensitivity;
    let (n, dx) = (cfg.data.n, cfg.data.dx());
    let study = HomotopyStudy::grf_1d(n, dx, &cfg.grf, sc, cfg.seed)?;
    let tag = freq_tag(f);

    let data = if data_path(out, f).exists() { Some(load_data(out, f)?) } else { None };
    let mut ckpts = Vec::new();
    for kind in [ModelKind::Diffusion, ModelKind::Regressor] {
        if data.is_some() && checkpoint_path(out, kind, f).exists() {
            ckpts.push((kind, load_checkpoint(out, kind, f)?));
        }
    }
    let reference = ReferenceSolver1D { frequency_hz: f };
    let mut evaluators: Vec<(&str, Box<dyn Evaluator + '_>)> = vec![("reference", Box::new(reference))];
    if let Some((_, m)) = &data {
        for (kind, ckpt) in &ckpts {
            evaluators.push((model_name(*kind), Box::new(ModelEvaluator { ckpt, manifest: m, sample: cfg.sample.clone() })));
        }
    }

    let small = small_s_index(&study.s_grid, sc.small_s);
    let (mut responses, mut variances, mut kdes, mut summary) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut var_fig = Figure::new(format!("Directional variance of |u|, f = {f} Hz"), "s", "mean variance");
    var_fig.log_y = true;
    for (name, ev) in &evaluators {
        let (rep, fields) = run_homotopy(&study, ev.as_ref(), None)?;
        for (d, per_s) in rep.responses.iter().enumerate() {
            for (s, per_p) in per_s.iter().enumerate() {
                for (p, &a) in per_p.iter().enumerate() {
                    let probe = rep.probes[p];
                    responses.push(ResponseRow { evaluator: name, direction: d, s: rep.s_grid[s], probe: probe.index, group: probe.group, amplitude: a });
                }
            }
        }
        for (s, &v) in rep.variance_vs_s.iter().enumerate() {
            variances.push(VarianceRow { evaluator: name, s: rep.s_grid[s], variance: v });
        }
        for (s, row) in rep.kde.iter().enumerate() {
            for (p, dens) in row.iter().enumerate() {
                let probe = rep.probes[p];
                let base = |x: f64, density: f64, spike: bool| KdeRow { evaluator: name, s: rep.s_grid[s], probe: probe.index, group: probe.group, x, density, spike };
                match dens {
                    Density::Smooth { grid, density, .. } => {
                        kdes.extend(grid.iter().zip(density).map(|(&x, &d)| base(x, d, false)));
                    }
                    Density::Spike { at } => kdes.push(base(*at, f64::INFINITY, true)),
                }
            }
        }
        summary.extend(summarize_report(name, &rep, &fields, small)?);
        var_fig.push(Series::line(*name, rep.s_grid.clone(), rep.variance_vs_s.clone()).with_markers());
        let ns = rep.s_grid.len();
        for s in [0, small, ns / 2, ns - 1] {
            let svg = kde_figure(name, &rep, s, f).to_svg();
            store::write_atomic(&out.join(format!("kde_{name}_{tag}_s{s}.svg")), svg.as_bytes())?;
        }
    }
    write_csv(&out.join(format!("sensitivity_{tag}_responses.csv")), &responses)?;
    write_csv(&out.join(format!("sensitivity_{tag}_variance.csv")), &variances)?;
    write_csv(&out.join(format!("sensitivity_{tag}_kde.csv")), &kdes)?;
    store::write_atomic(&out.join(format!("variance_vs_s_{tag}.svg")), var_fig.to_svg().as_bytes())?;

    let base = CoefficientField::constant(cfg.grf.c_bg, Shape::D1(n), dx)?;
    let dc = wkb_perturbation(n, cfg.grf.c_bg, sc.wkb_relative_perturbation);
    let fit = wkb_check(&cfg.data.frequencies, &base, &dc, &study.probes)?;
    let wkb_rows: Vec<WkbRow> = fit
        .points
        .iter()
        .map(|p| WkbRow { frequency: p.frequency_hz, probe: p.probe.index, group: p.probe.group, kx: p.kx, ratio: p.ratio })
        .collect();
    write_csv(&out.join("wkb.csv"), &wkb_rows)?;
    let row = |q: &str, v: f64| SummaryRow { evaluator: "wkb".into(), quantity: q.into(), value: v };
    summary.extend([
        row("slope_vs_k", fit.fit_k.slope),
        row("r2_vs_k", fit.fit_k.r2),
        row("slope_vs_kx", fit.fit_kx.slope),
        row("r2_vs_kx", fit.fit_kx.r2),
        row("bound_constant", fit.bound_constant),
        row("bound_holds", if fit.bound_holds() { 1.0 } else { 0.0 }),
    ]);
    let mut wkb_fig = Figure::new("Relative response to a uniform speed shift", "k x", "|du / u0|");
    for g in [ProbeGroup::Near, ProbeGroup::Far] {
        let pts: Vec<_> = fit.points.iter().filter(|p| p.probe.group == g).collect();
        let mut s = Series::line(g.to_string(), pts.iter().map(|p| p.kx).collect(), pts.iter().map(|p| p.ratio).collect());
        s.markers = true;
        wkb_fig.push(s);
    }
    store::write_atomic(&out.join("wkb.svg"), wkb_fig.to_svg().as_bytes())?;
    write_csv(&out.join(format!("sensitivity_{tag}_summary.csv")), &summary)?;
    for r in &summary {
        println!("{} {} {:.6}", r.evaluator, r.quantity, r.value);
    }
    Ok(())
}

fn csv_files(out: &Path, prefix: &str, exclude: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with(prefix) && name.ends_with(".csv") && (exclude.is_empty() || !name.contains(exclude))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Markdown summary of every `eval_*.csv`, `ablation_*.csv` and sensitivity
/// summary in the run directory. The lower-error model per metric is bold.
pub fn render_report(out: &Path) -> Result<String> {
    let mut evals: Vec<EvalRow> = Vec::new();
    for p in csv_files(out, "eval_", "_samples")? {
        evals.extend(read_csv::<EvalRow>(&p)?);
    }
    if evals.is_empty() {
        return Err(Error::invalid("no eval tables in the run directory; run eval first"));
    }
    let mut doc = String::from("# Diffusion vs. regressor\n\nRelative errors of `Re u` on the test split, mean +- std over samples.\n\n");
    let mut by_freq: BTreeMap<String, Vec<&EvalRow>> = BTreeMap::new();
    for r in &evals {
        by_freq.entry(format!("{:020.6}", r.frequency)).or_default().push(r);
    }
    doc.push_str("| frequency (Hz) | metric | diffusion | regressor |\n|---|---|---|---|\n");
    for rows in by_freq.values() {
        let f = rows[0].frequency;
        for metric in ["rel_l2", "rel_h1", "rel_energy"] {
            let get = |model: &str| rows.iter().find(|r| r.model == model && r.metric == metric);
            let (d, r) = (get("diffusion"), get("regressor"));
            let cell = |x: Option<&&EvalRow>, other: Option<&&EvalRow>| match x {
                None => "n/a".to_string(),
                Some(x) => {
                    let text = format!("{:.4} +- {:.4}", x.mean, x.std);
                    if other.is_some_and(|o| x.mean < o.mean) { format!("**{text}**") } else { text }
                }
            };
            doc.push_str(&format!("| {f} | {metric} | {} | {} |\n", cell(d, r), cell(r, d)));
        }
    }
    for p in csv_files(out, "ablation_", "")? {
        let rows: Vec<AblationRow> = read_csv(&p)?;
        if rows.is_empty() {
            continue;
        }
        doc.push_str(&format!("\n## Sampler ablation, f = {} Hz (rel L2)\n\n", rows[0].frequency));
        let mut steps: Vec<usize> = rows.iter().map(|r| r.steps).collect();
        steps.sort_unstable();
        steps.dedup();
        doc.push_str("| sampler |");
        for s in &steps {
            doc.push_str(&format!(" T={s} |"));
        }
        doc.push_str("\n|---|");
        doc.push_str(&"---|".repeat(steps.len()));
        doc.push('\n');
        let mut labels: Vec<String> = Vec::new();
        for r in &rows {
            let l = format!("{}-{}", r.sampler, r.schedule);
            if !labels.contains(&l) {
                labels.push(l);
            }
        }
        for l in labels {
            doc.push_str(&format!("| {l} |"));
            for s in &steps {
                match rows.iter().find(|r| format!("{}-{}", r.sampler, r.schedule) == l && r.steps == *s && r.metric == "rel_l2") {
                    Some(r) => doc.push_str(&format!(" {:.4} |", r.mean)),
                    None => doc.push_str(" n/a |"),
                }
            }
            doc.push('\n');
        }
    }
    for p in csv_files(out, "sensitivity_", "")?.into_iter().filter(|p| p.to_string_lossy().ends_with("_summary.csv")) {
        let rows: Vec<SummaryRow> = read_csv(&p)?;
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        doc.push_str(&format!("\n## Sensitivity ({name})\n\n| evaluator | quantity | value |\n|---|---|---|\n"));
        for r in rows {
            doc.push_str(&format!("| {} | {} | {:.6} |\n", r.evaluator, r.quantity, r.value));
        }
    }
    Ok(doc)
}

fn report(out: &Path) -> Result<()> {
    let doc = render_report(out)?;
    let path = out.join("report.md");
    store::write_atomic(&path, doc.as_bytes())?;
    println!("{}", path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_names() {
        assert_eq!(parse_sampler("ddpm").unwrap(), (SamplerKind::Ddpm, None));
        assert_eq!(parse_sampler("ddim-linear").unwrap(), (SamplerKind::Ddim, Some(ScheduleKind::Linear)));
        assert!(parse_sampler("euler").is_err());
        assert!(parse_sampler("sde-quadratic").is_err());
    }

    #[test]
    fn flags_override_config() {
        let opts = Options {
            seed: Some(9),
            freq: Some(7812.5),
            sampler: Some("ddim-cosine".into()),
            steps: Some(50),
            samples: Some(3),
            ..Default::default()
        };
        let cfg = resolve(&opts).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed, cfg.sample.seed), (9, 9, 9));
        assert_eq!(cfg.data.frequency(), 7812.5);
        assert_eq!(cfg.sample.sampler, SamplerKind::Ddim);
        assert_eq!((cfg.sample.steps, cfg.sample.samples), (50, 3));
    }

    #[test]
    fn cli_parses_every_subcommand() {
        for name in ["gen-data", "train", "train-baseline", "sample", "eval", "ablate-samplers", "sensitivity", "report"] {
            let cli = Cli::try_parse_from(["helmdiff", name, "--profile", "desk", "--steps", "10"]).unwrap();
            assert_eq!(cli.command.name(), name);
        }
        assert!(Cli::try_parse_from(["helmdiff", "bogus"]).is_err());
    }

    #[test]
    fn report_marks_lower_error() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            EvalRow { frequency: 10.0, model: "diffusion".into(), metric: "rel_l2".into(), mean: 0.02, std: 0.01, n: 5 },
            EvalRow { frequency: 10.0, model: "regressor".into(), metric: "rel_l2".into(), mean: 0.05, std: 0.0, n: 5 },
        ];
        write_csv(&dir.path().join("eval_10.csv"), &rows).unwrap();
        let doc = render_report(dir.path()).unwrap();
        assert!(doc.contains("**0.0200 +- 0.0100**"));
        assert!(doc.contains("| 0.0500 +- 0.0000 |"));
        let text = std::fs::read_to_string(dir.path().join("eval_10.csv")).unwrap();
        assert!(text.starts_with("frequency,model,metric,mean,std,n\n"));
    }

    #[test]
    fn missing_inputs_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.out_dir = Some(dir.path().to_path_buf());
        match execute(Command::Train, &cfg) {
            Err(Error::Stage { stage, source }) => {
                assert_eq!(stage, "train");
                assert!(source.to_string().contains("gen-data"));
            }
            other => panic!("{other:?}"),
        }
        assert!(dir.path().join("config.train.toml").exists());
    }
}
