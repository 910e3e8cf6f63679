//! Homotopy sensitivity of the reference solver at the highest desk
//! frequency: variance vs s, probe KDEs, the WKB scaling fit, and the
//! phase-averaging attenuation that deterministic surrogates suffer.
//!
//!     cargo run --release --example sensitivity_study -- [out_dir]

use std::path::PathBuf;

use helmdiff::cli::{sensitivity_frequency, small_s_index};
use helmdiff::config::RunConfig;
use helmdiff::plot::{Figure, Series};
use helmdiff::sensitivity::{
    phase_collapse_demo, run_homotopy, spearman, wkb_check, wkb_perturbation, Density, HomotopyStudy, ProbeGroup,
    ReferenceSolver1D,
};
use helmdiff::{CoefficientField, Shape};
use num_complex::Complex64;

fn main() -> helmdiff::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/examples".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = RunConfig::default();
    let sc = &cfg.sensitivity;
    let f = sensitivity_frequency(&cfg);
    let (n, dx) = (cfg.data.n, cfg.data.dx());
    let study = HomotopyStudy::grf_1d(n, dx, &cfg.grf, sc, cfg.seed)?;
    let (rep, fields) = run_homotopy(&study, &ReferenceSolver1D { frequency_hz: f }, None)?;

    println!("f = {f} Hz, {} directions x {} steps", sc.directions, sc.s_steps);
    for (s, v) in rep.s_grid.iter().zip(&rep.variance_vs_s) {
        println!("  s {s:.3}  mean variance of |u| {v:.4e}");
    }
    println!("Spearman(variance, s) = {:.3}", spearman(&rep.s_grid, &rep.variance_vs_s)?);
    let small = small_s_index(&rep.s_grid, sc.small_s);
    for g in [ProbeGroup::Near, ProbeGroup::Far] {
        println!("  {g} probes: mean |du/u0| at s={:.2}: {:.3e}", rep.s_grid[small], rep.relative_change(&fields, small, g));
    }

    let last = rep.s_grid.len() - 1;
    let mut fig = Figure::new(format!("|u| across directions at s = 1, f = {f} Hz"), "|u|", "density");
    for (p, probe) in rep.probes.iter().enumerate() {
        if let Density::Smooth { grid, density, .. } = &rep.kde[last][p] {
            fig.push(Series::filled(format!("{} x[{}]", probe.group, probe.index), grid.clone(), density.clone()));
        }
    }
    std::fs::write(out.join("kde_s1.svg"), fig.to_svg())?;

    let c0 = cfg.grf.c_bg;
    let base = CoefficientField::constant(c0, Shape::D1(n), dx)?;
    let dc = wkb_perturbation(n, c0, sc.wkb_relative_perturbation);
    let fit = wkb_check(&cfg.data.frequencies, &base, &dc, &study.probes)?;
    println!(
        "WKB: |du/u0| vs k slope {:.3e} (R2 {:.3}), vs kx slope {:.3e} (R2 {:.3}), C = {:.3}, bound holds: {}",
        fit.fit_k.slope,
        fit.fit_k.r2,
        fit.fit_kx.slope,
        fit.fit_kx.r2,
        fit.bound_constant,
        fit.bound_holds()
    );

    let u0 = vec![Complex64::new(1.0, 0.0)];
    for v in [0.0, 0.25, 1.0, 2.0 * std::f64::consts::LN_2, 4.0] {
        println!("phase variance {v:.3}: mean-field amplitude {:.4}", phase_collapse_demo(&u0, v)?[0].norm());
    }
    Ok(())
}
