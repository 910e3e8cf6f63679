//! 1D reference solver: convergence against the outgoing plane wave and the
//! wavefield in one GRF medium at every desk frequency.
//!
//!     cargo run --release --example helmholtz_1d -- [out_dir]

use std::path::PathBuf;

use helmdiff::config::RunConfig;
use helmdiff::fields::sample_grf_family;
use helmdiff::metrics::rel_l2;
use helmdiff::plot::{Figure, Series};
use helmdiff::solver1d::{angular, plane_wave_1d, solve_helmholtz_1d};
use helmdiff::{CoefficientField, Shape};

fn main() -> helmdiff::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/examples".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = RunConfig::default();

    println!("{:>10} {:>6} {:>12} {:>7}", "f [Hz]", "n", "rel L2", "order");
    for &f in &cfg.data.frequencies {
        let mut prev: Option<f64> = None;
        for n in [129usize, 257, 513, 1025] {
            let dx = 1.0 / (n - 1) as f64;
            let u = solve_helmholtz_1d(&CoefficientField::constant(1500.0, Shape::D1(n), dx)?, f)?;
            let e = rel_l2(&u.values, &plane_wave_1d(n, dx, angular(f), 1500.0))?;
            let order = prev.map_or(String::new(), |p| format!("{:.3}", (p / e).log2()));
            println!("{f:>10} {n:>6} {e:>12.4e} {order:>7}");
            prev = Some(e);
        }
    }

    let (n, dx) = (cfg.data.n, cfg.data.dx());
    let c = sample_grf_family(Shape::D1(n), dx, &cfg.grf, 7)?;
    let x: Vec<f64> = (0..n).map(|j| j as f64 * dx).collect();
    let mut fig = Figure::new("Re u in one GRF medium", "x [m]", "Re u / omega");
    for &f in &cfg.data.frequencies {
        let u = solve_helmholtz_1d(&c, f)?;
        fig.push(Series::line(format!("{f} Hz"), x.clone(), u.values.iter().map(|v| v.re / u.omega).collect()));
    }
    std::fs::write(out.join("helmholtz_1d.svg"), fig.to_svg())?;
    println!("figure in {}", out.join("helmholtz_1d.svg").display());
    Ok(())
}
