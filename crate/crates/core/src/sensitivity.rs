//! Homotopy sensitivity study.
//!
//! Media are moved along straight lines `c(s) = (1 - s) c0 + s c_d` towards
//! `D` random directions and an evaluator (reference solver or trained model)
//! is probed along the way. Spread across directions at fixed `s` is summarized
//! by kernel density estimates and a domain-averaged variance curve.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SensitivityConfig;
use crate::error::{Error, Result};
use crate::fields::{sample_grf, GrfHyperParams};
use crate::grid::{CoefficientField, Shape};
use crate::rng::{child_seed, Purpose};
use crate::solver1d::{angular, solve_helmholtz_1d};

/// Number of points on a KDE evaluation grid.
pub const KDE_POINTS: usize = 256;
/// Probes where `|u0|` falls below this are left out of the WKB check.
pub const AMPLITUDE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeGroup {
    Near,
    Far,
}

impl std::fmt::Display for ProbeGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProbeGroup::Near => "near",
            ProbeGroup::Far => "far",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub index: usize,
    pub group: ProbeGroup,
}

/// Near probes spread over the `near_span` points after the source at `x = 0`,
/// far probes over the last `far_span` points.
pub fn probe_layout_1d(n: usize, cfg: &SensitivityConfig) -> Result<Vec<Probe>> {
    let p = cfg.probes_per_group;
    if p == 0 || cfg.near_span < p || cfg.far_span < p || cfg.near_span + cfg.far_span >= n {
        return Err(Error::invalid(format!(
            "cannot place {p} probes per group in spans {}/{} on {n} points",
            cfg.near_span, cfg.far_span
        )));
    }
    let mut probes: Vec<Probe> =
        (1..=p).map(|i| Probe { index: i * cfg.near_span / p, group: ProbeGroup::Near }).collect();
    probes.extend((0..p).map(|i| Probe { index: n - 1 - i * cfg.far_span / p, group: ProbeGroup::Far }));
    Ok(probes)
}

/// `count` evenly spaced values from 0 to 1 inclusive.
pub fn s_grid(count: usize) -> Vec<f64> {
    let last = (count - 1) as f64;
    (0..count).map(|i| if i + 1 == count { 1.0 } else { i as f64 / last }).collect()
}

#[derive(Debug, Clone)]
pub struct HomotopyStudy {
    pub c0: CoefficientField,
    pub directions: Vec<CoefficientField>,
    pub s_grid: Vec<f64>,
    pub probes: Vec<Probe>,
}

impl HomotopyStudy {
    /// Constant background `c0 = c_bg` and GRF endpoints drawn from the
    /// direction stream of `seed`.
    pub fn grf_1d(
        n: usize,
        dx: f64,
        grf: &GrfHyperParams,
        cfg: &SensitivityConfig,
        seed: u64,
    ) -> Result<Self> {
        let shape = Shape::D1(n);
        let c0 = CoefficientField::constant(grf.c_bg, shape, dx)?;
        let directions = (0..cfg.directions)
            .map(|d| sample_grf(shape, dx, grf, child_seed(seed, Purpose::Direction, d as u64)))
            .collect::<Result<Vec<_>>>()?;
        let study = Self { c0, directions, s_grid: s_grid(cfg.s_steps), probes: probe_layout_1d(n, cfg)? };
        study.validate()?;
        Ok(study)
    }

    pub fn validate(&self) -> Result<()> {
        if self.directions.len() < 2 {
            return Err(Error::invalid("need at least two directions"));
        }
        if self.directions.iter().any(|d| d.shape != self.c0.shape) {
            return Err(Error::invalid("directions must share the baseline grid"));
        }
        let s = &self.s_grid;
        if s.first() != Some(&0.0) || s.last() != Some(&1.0) || s.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("s grid must be increasing from 0 to 1"));
        }
        if self.probes.iter().any(|p| p.index >= self.c0.len()) {
            return Err(Error::invalid("probe outside the grid"));
        }
        Ok(())
    }

    pub fn medium(&self, d: usize, s: usize) -> Result<CoefficientField> {
        self.c0.lerp(&self.directions[d], self.s_grid[s])
    }

    /// Evaluation id of `(direction, s index)`.
    pub fn id(&self, d: usize, s: usize) -> u64 {
        (d * self.s_grid.len() + s) as u64
    }
}

/// Maps media to wavefields. `ids` label the calls so stochastic evaluators
/// can draw reproducible noise per call.
pub trait Evaluator: Sync {
    fn evaluate(&self, ids: &[u64], media: &[CoefficientField]) -> Vec<Result<Vec<Complex64>>>;
}

/// The 1D reference solver at a fixed frequency.
pub struct ReferenceSolver1D {
    pub frequency_hz: f64,
}

impl Evaluator for ReferenceSolver1D {
    fn evaluate(&self, _ids: &[u64], media: &[CoefficientField]) -> Vec<Result<Vec<Complex64>>> {
        media.par_iter().map(|c| solve_helmholtz_1d(c, self.frequency_hz).map(|u| u.values)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Density {
    Smooth { grid: Vec<f64>, density: Vec<f64>, bandwidth: f64 },
    /// All values coincide.
    Spike { at: f64 },
}

impl Density {
    /// Trapezoid integral; a spike counts as unit mass.
    pub fn integral(&self) -> f64 {
        match self {
            Density::Spike { .. } => 1.0,
            Density::Smooth { grid, density, .. } => trapezoid(grid, density),
        }
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^(-1/5)`, falling back to the
/// standard deviation alone when the IQR vanishes.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian KDE on a grid spanning the data +-3 bandwidths, renormalized to
/// unit mass on that grid. `bandwidth = None` selects Silverman's rule.
pub fn kde(values: &[f64], bandwidth: Option<f64>) -> Result<Density> {
    if values.len() < 2 {
        return Err(Error::invalid("KDE needs at least two values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("KDE of non-finite values"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(Density::Spike { at: lo });
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::invalid(format!("bandwidth {h} must be positive"))),
        None => silverman_bandwidth(values),
    };
    let (a, b) = (lo - 3.0 * h, hi + 3.0 * h);
    let step = (b - a) / (KDE_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..KDE_POINTS).map(|i| a + i as f64 * step).collect();
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let mut density: Vec<f64> = grid
        .iter()
        .map(|&x| norm * values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    let mass = trapezoid(&grid, &density);
    density.iter_mut().for_each(|d| *d /= mass);
    Ok(Density::Smooth { grid, density, bandwidth: h })
}

/// Population variance, shifted by the first value so identical inputs give
/// exactly zero.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let x0 = values[0];
    let (s1, s2) = values.iter().fold((0.0, 0.0), |(a, b), v| (a + (v - x0), b + (v - x0) * (v - x0)));
    (s2 / n - (s1 / n) * (s1 / n)).max(0.0)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("spearman needs two equal series of length >= 2"));
    }
    Ok(pearson(&ranks(x), &ranks(y)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("fit needs two equal series of length >= 2"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("fit abscissae are all equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit { slope, intercept, r2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub s_grid: Vec<f64>,
    pub probes: Vec<Probe>,
    /// `responses[d][s][probe]`, amplitudes `|u|`.
    pub responses: Vec<Vec<Vec<f64>>>,
    /// `kde[s][probe]` over directions.
    pub kde: Vec<Vec<Density>>,
    /// Variance across directions of `|u|`, averaged over the grid, per `s`.
    pub variance_vs_s: Vec<f64>,
    pub wkb: Option<WkbFit>,
}

impl SensitivityReport {
    /// Mean over directions and group probes of `|u(s) - u(0)| / |u(0)|` at
    /// grid index `s`.
    pub fn relative_change(&self, fields: &HomotopyFields, s: usize, group: ProbeGroup) -> f64 {
        let mut acc = Vec::new();
        for d in 0..fields.values.len() {
            for p in self.probes.iter().filter(|p| p.group == group) {
                let u0 = fields.values[d][0][p.index];
                acc.push((fields.values[d][s][p.index] - u0).norm() / u0.norm());
            }
        }
        acc.iter().sum::<f64>() / acc.len() as f64
    }
}

/// Complex fields for every `(direction, s)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct HomotopyFields {
    pub values: Vec<Vec<Vec<Complex64>>>,
}

/// Evaluates all `D x S` media. Every failure is collected; any failure
/// yields [`Error::PartialReport`].
pub fn evaluate_homotopy<E: Evaluator + ?Sized>(study: &HomotopyStudy, evaluator: &E) -> Result<HomotopyFields> {
    study.validate()?;
    let (nd, ns) = (study.directions.len(), study.s_grid.len());
    let mut ids = Vec::with_capacity(nd * ns);
    let mut media = Vec::with_capacity(nd * ns);
    for d in 0..nd {
        for s in 0..ns {
            ids.push(study.id(d, s));
            media.push(study.medium(d, s)?);
        }
    }
    let results = evaluator.evaluate(&ids, &media);
    if results.len() != media.len() {
        return Err(Error::invalid("evaluator returned the wrong number of fields"));
    }
    let n = study.c0.len();
    let mut failures = Vec::new();
    let mut flat = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(u) if u.len() == n && u.iter().all(|v| v.is_finite()) => flat.push(u),
            Ok(_) => failures.push(format!("direction {} s[{}]: bad field", i / ns, i % ns)),
            Err(e) => failures.push(format!("direction {} s[{}]: {e}", i / ns, i % ns)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::PartialReport { failed: failures.len(), total: nd * ns, first: failures.join("; ") });
    }
    let mut it = flat.into_iter();
    let values = (0..nd).map(|_| (0..ns).map(|_| it.next().expect("counted")).collect()).collect();
    Ok(HomotopyFields { values })
}

/// Probe responses, KDEs and the variance curve of evaluated fields.
pub fn summarize(study: &HomotopyStudy, fields: &HomotopyFields, bandwidth: Option<f64>) -> Result<SensitivityReport> {
    let (nd, ns, n) = (study.directions.len(), study.s_grid.len(), study.c0.len());
    let responses: Vec<Vec<Vec<f64>>> = fields
        .values
        .iter()
        .map(|per_s| per_s.iter().map(|u| study.probes.iter().map(|p| u[p.index].norm()).collect()).collect())
        .collect();
    let kde_rows = (0..ns)
        .map(|s| {
            (0..study.probes.len())
                .map(|p| kde(&(0..nd).map(|d| responses[d][s][p]).collect::<Vec<_>>(), bandwidth))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let variance_vs_s = (0..ns)
        .map(|s| {
            (0..n)
                .map(|j| variance(&(0..nd).map(|d| fields.values[d][s][j].norm()).collect::<Vec<_>>()))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    Ok(SensitivityReport {
        s_grid: study.s_grid.clone(),
        probes: study.probes.clone(),
        responses,
        kde: kde_rows,
        variance_vs_s,
        wkb: None,
    })
}

pub fn run_homotopy<E: Evaluator + ?Sized>(
    study: &HomotopyStudy,
    evaluator: &E,
    bandwidth: Option<f64>,
) -> Result<(SensitivityReport, HomotopyFields)> {
    let fields = evaluate_homotopy(study, evaluator)?;
    Ok((summarize(study, &fields, bandwidth)?, fields))
}

/// One-sided difference quotient `(S(c0 + ds (c_d - c0)) - S(c0)) / ds` of the
/// reference solver.
pub fn directional_derivative(
    c0: &CoefficientField,
    target: &CoefficientField,
    frequency_hz: f64,
    ds: f64,
) -> Result<Vec<Complex64>> {
    let u0 = solve_helmholtz_1d(c0, frequency_hz)?.values;
    let u1 = solve_helmholtz_1d(&c0.lerp(target, ds)?, frequency_hz)?.values;
    Ok(u0.iter().zip(&u1).map(|(a, b)| (b - a) / ds).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WkbPoint {
    pub frequency_hz: f64,
    pub probe: Probe,
    /// `k x` with `k = omega / c0`.
    pub kx: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WkbFit {
    pub points: Vec<WkbPoint>,
    /// Probes left out because `|u0|` vanished there.
    pub skipped: Vec<(f64, usize)>,
    /// `ratio` against `k x`, all probes pooled.
    pub fit_kx: LinearFit,
    /// Probe-averaged `ratio` against `k`.
    pub fit_k: LinearFit,
    /// `||dc||_inf / c0`.
    pub relative_perturbation: f64,
    /// Smallest `C` with `ratio <= C (k x) ||dc||_inf / c0` at every point.
    pub bound_constant: f64,
}

impl WkbFit {
    pub fn bound_holds(&self) -> bool {
        self.points.iter().all(|p| p.ratio <= self.bound_constant * p.kx * self.relative_perturbation * (1.0 + 1e-12))
    }
}

/// Relative response `|u(c0 + dc) - u(c0)| / |u(c0)|` of the 1D reference
/// solver at each probe and frequency, with the linear fits used to check the
/// travel-distance and frequency growth. `c0` is taken as the mean of `base`.
pub fn wkb_check(frequencies: &[f64], base: &CoefficientField, delta_c: &[f64], probes: &[Probe]) -> Result<WkbFit> {
    if delta_c.len() != base.len() {
        return Err(Error::invalid("perturbation and medium differ in length"));
    }
    if frequencies.len() < 2 {
        return Err(Error::invalid("WKB fit needs at least two frequencies"));
    }
    let c0 = base.mean();
    let rel = delta_c.iter().fold(0.0f64, |m, v| m.max(v.abs())) / c0;
    if rel > 0.01 {
        return Err(Error::invalid(format!("perturbation {rel:.3e} exceeds 1% of c0")));
    }
    let perturbed = CoefficientField::new(
        base.values.iter().zip(delta_c).map(|(c, d)| c + d).collect(),
        base.shape,
        base.dx,
    )?;
    let mut points = Vec::new();
    let mut skipped = Vec::new();
    let mut per_freq = Vec::new();
    for &f in frequencies {
        let u0 = solve_helmholtz_1d(base, f)?.values;
        let u1 = solve_helmholtz_1d(&perturbed, f)?.values;
        let k = angular(f) / c0;
        let mut acc = Vec::new();
        for &p in probes {
            let a = u0[p.index].norm();
            if a < AMPLITUDE_FLOOR {
                skipped.push((f, p.index));
                continue;
            }
            let ratio = (u1[p.index] - u0[p.index]).norm() / a;
            acc.push(ratio);
            points.push(WkbPoint { frequency_hz: f, probe: p, kx: k * p.index as f64 * base.dx, ratio });
        }
        if !acc.is_empty() {
            per_freq.push((k, acc.iter().sum::<f64>() / acc.len() as f64));
        }
    }
    if points.len() < 2 {
        return Err(Error::invalid("too few usable probes for the WKB fit"));
    }
    let fit_kx = linear_fit(
        &points.iter().map(|p| p.kx).collect::<Vec<_>>(),
        &points.iter().map(|p| p.ratio).collect::<Vec<_>>(),
    )?;
    let fit_k = linear_fit(
        &per_freq.iter().map(|p| p.0).collect::<Vec<_>>(),
        &per_freq.iter().map(|p| p.1).collect::<Vec<_>>(),
    )?;
    let bound_constant = if rel == 0.0 {
        0.0
    } else {
        points.iter().filter(|p| p.kx > 0.0).map(|p| p.ratio / (p.kx * rel)).fold(0.0, f64::max)
    };
    Ok(WkbFit { points, skipped, fit_kx, fit_k, relative_perturbation: rel, bound_constant })
}

/// Uniform shift `dc = relative * c0`. Smooth on every wavelength, so the
/// geometric-optics phase estimate applies without backscatter.
pub fn wkb_perturbation(n: usize, c0: f64, relative: f64) -> Vec<f64> {
    vec![relative * c0; n]
}

/// Expected value of `u0 e^{i phi}` for Gaussian phase noise of the given
/// variance: `u0 exp(-variance / 2)`.
pub fn phase_collapse_demo(u0: &[Complex64], phase_variance: f64) -> Result<Vec<Complex64>> {
    if !(phase_variance >= 0.0) {
        return Err(Error::invalid(format!("phase variance {phase_variance} must be >= 0")));
    }
    let a = (-0.5 * phase_variance).exp();
    Ok(u0.iter().map(|u| u * a).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn desk() -> RunConfig {
        RunConfig::default()
    }

    #[test]
    fn probes_fall_in_their_spans() {
        let cfg = desk().sensitivity;
        let probes = probe_layout_1d(128, &cfg).unwrap();
        assert_eq!(probes.len(), 8);
        for p in &probes {
            match p.group {
                ProbeGroup::Near => assert!((1..=cfg.near_span).contains(&p.index)),
                ProbeGroup::Far => assert!(p.index >= 127 - cfg.far_span && p.index < 128),
            }
        }
        assert!(probe_layout_1d(10, &cfg).is_err());
    }

    #[test]
    fn s_grid_endpoints_exact() {
        let s = s_grid(7);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[6], 1.0);
    }

    #[test]
    fn homotopy_endpoints() {
        let cfg = desk();
        let study = HomotopyStudy::grf_1d(64, 1.0 / 64.0, &cfg.grf, &cfg.sensitivity, 3).unwrap();
        let last = study.s_grid.len() - 1;
        assert_eq!(study.medium(2, 0).unwrap().values, study.c0.values);
        assert_eq!(study.medium(2, last).unwrap().values, study.directions[2].values);
    }

    #[test]
    fn reference_spread_vanishes_at_zero() {
        let cfg = desk();
        let mut sens = cfg.sensitivity.clone();
        sens.directions = 5;
        sens.s_steps = 4;
        let study = HomotopyStudy::grf_1d(64, 1.0 / 64.0, &cfg.grf, &sens, 1).unwrap();
        let (rep, _) = run_homotopy(&study, &ReferenceSolver1D { frequency_hz: 4687.5 }, None).unwrap();
        assert_eq!(rep.variance_vs_s[0], 0.0);
        assert!(rep.kde[0].iter().all(|k| matches!(k, Density::Spike { .. })));
        assert!(rep.variance_vs_s[3] > 0.0);
    }

    struct Failing;
    impl Evaluator for Failing {
        fn evaluate(&self, ids: &[u64], media: &[CoefficientField]) -> Vec<Result<Vec<Complex64>>> {
            ids.iter()
                .zip(media)
                .map(|(&i, c)| {
                    if i % 3 == 0 {
                        Err(Error::invalid("boom"))
                    } else {
                        Ok(vec![Complex64::new(1.0, 0.0); c.len()])
                    }
                })
                .collect()
        }
    }

    #[test]
    fn failures_are_listed() {
        let cfg = desk();
        let mut sens = cfg.sensitivity.clone();
        sens.directions = 2;
        sens.s_steps = 3;
        let study = HomotopyStudy::grf_1d(64, 1.0 / 64.0, &cfg.grf, &sens, 1).unwrap();
        match evaluate_homotopy(&study, &Failing) {
            Err(Error::PartialReport { failed, total, first }) => {
                assert_eq!((failed, total), (2, 6));
                assert!(first.contains("boom"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn difference_quotient_converges() {
        let cfg = desk();
        let c0 = CoefficientField::constant(1500.0, Shape::D1(128), 1.0 / 128.0).unwrap();
        let target = sample_grf(Shape::D1(128), 1.0 / 128.0, &cfg.grf, 9).unwrap();
        let f = 4687.5;
        let d1 = directional_derivative(&c0, &target, f, 1e-2).unwrap();
        let d2 = directional_derivative(&c0, &target, f, 5e-3).unwrap();
        let d4 = directional_derivative(&c0, &target, f, 2.5e-3).unwrap();
        let diff = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let e1 = diff(&d1, &d2);
        let e2 = diff(&d2, &d4);
        // first-order quotient: successive gaps halve
        assert!((e1 / e2 - 2.0).abs() < 0.1, "{e1} {e2}");
        let rich: Vec<Complex64> = d2.iter().zip(&d4).map(|(a, b)| 2.0 * b - a).collect();
        let rich2: Vec<Complex64> = d1.iter().zip(&d2).map(|(a, b)| 2.0 * b - a).collect();
        assert!(diff(&rich, &rich2) < 0.3 * e2);
    }

    #[test]
    fn kde_symmetric_pair() {
        let Density::Smooth { grid, density, .. } = kde(&[-1.0, 1.0], Some(1.0)).unwrap() else { panic!() };
        for i in 0..grid.len() {
            assert!((grid[i] + grid[grid.len() - 1 - i]).abs() < 1e-12);
            assert!((density[i] - density[grid.len() - 1 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn kde_unit_mass_and_spike() {
        let d = kde(&[0.1, 0.4, 0.45, 2.0], None).unwrap();
        assert!((d.integral() - 1.0).abs() < 1e-3);
        assert_eq!(kde(&[3.0; 5], None).unwrap(), Density::Spike { at: 3.0 });
        assert!(kde(&[1.0], None).is_err());
        assert!(kde(&[1.0, f64::NAN], None).is_err());
    }

    #[test]
    fn kde_matches_normal_pdf() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let Density::Smooth { grid, density, .. } = kde(&xs, None).unwrap() else { panic!() };
        let sup = grid
            .iter()
            .zip(&density)
            .map(|(x, d)| (d - (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.02, "{sup}");
    }

    #[test]
    fn spearman_and_fit() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&x, &[1.0, 4.0, 9.0, 16.0, 25.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 1.0, 2.0], &[3.0, 3.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        let f = linear_fit(&x, &[3.0, 5.0, 7.0, 9.0, 11.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn variance_exact_zero() {
        assert_eq!(variance(&[0.1, 0.1, 0.1]), 0.0);
        assert!((variance(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wkb_zero_perturbation() {
        let cfg = desk();
        let base = CoefficientField::constant(1500.0, Shape::D1(128), 1.0 / 128.0).unwrap();
        let probes = probe_layout_1d(128, &cfg.sensitivity).unwrap();
        let fit = wkb_check(&cfg.data.frequencies, &base, &[0.0; 128], &probes).unwrap();
        assert!(fit.points.iter().all(|p| p.ratio == 0.0));
        assert!(wkb_check(&cfg.data.frequencies, &base, &[20.0; 128], &probes).is_err());
    }

    #[test]
    fn wkb_far_exceeds_near() {
        let cfg = desk();
        let base = CoefficientField::constant(1500.0, Shape::D1(128), 1.0 / 128.0).unwrap();
        let probes = probe_layout_1d(128, &cfg.sensitivity).unwrap();
        let dc = wkb_perturbation(128, 1500.0, 0.005);
        let fit = wkb_check(&cfg.data.frequencies, &base, &dc, &probes).unwrap();
        for f in &cfg.data.frequencies {
            let mean = |g: ProbeGroup| {
                let v: Vec<f64> =
                    fit.points.iter().filter(|p| p.frequency_hz == *f && p.probe.group == g).map(|p| p.ratio).collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            assert!(mean(ProbeGroup::Far) > mean(ProbeGroup::Near));
        }
        assert!(fit.bound_holds());
        assert!(fit.fit_k.slope > 0.0 && fit.fit_k.r2 >= 0.8, "{:?}", fit.fit_k);
        assert!(fit.bound_constant.is_finite() && fit.bound_constant > 0.0);
    }

    #[test]
    fn phase_collapse() {
        let u = vec![Complex64::new(0.3, -1.2); 4];
        assert_eq!(phase_collapse_demo(&u, 0.0).unwrap(), u);
        let half = phase_collapse_demo(&u, 2.0 * 2f64.ln()).unwrap();
        assert!((half[0] - u[0] * 0.5).norm() < 1e-15);
        assert!(phase_collapse_demo(&u, -1.0).is_err());
    }

    #[test]
    fn phase_collapse_monte_carlo() {
        let u0 = Complex64::new(0.8, 0.6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for v in [0.1f64, 0.5, 1.0] {
            let m = 100_000;
            let sum: Complex64 = (0..m)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    u0 * Complex64::from_polar(1.0, v.sqrt() * z)
                })
                .sum();
            let mc = sum / m as f64;
            let want = phase_collapse_demo(&[u0], v).unwrap()[0];
            assert!((mc - want).norm() / want.norm() < 0.01, "{v}");
        }
    }
}
