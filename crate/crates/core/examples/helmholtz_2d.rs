//! 2D solver with PML: absorption sweep, boundary frame, and the 4x
//! self-refinement check on the desk grid. The refined solve needs ~1 GB.
//!
//!     cargo run --release --example helmholtz_2d -- [out_dir]

use std::path::PathBuf;

use helmdiff::config::RunConfig;
use helmdiff::fields::{sample_grf, SourceDisk};
use helmdiff::plot::{Figure, Series};
use helmdiff::solver2d::{boundary_frame_ratio, pml_sweep, self_refinement_error, solve_helmholtz_2d, PmlSpec};
use helmdiff::Shape;

fn main() -> helmdiff::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/examples".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = RunConfig::default();
    let s = &cfg.solver2d;
    println!("grid {0}x{0}, dx {1} m, f {2} Hz, PML {3:?}", s.n, s.dx, s.frequency, s.pml);

    let sigmas = [0.0, 5e4, 1e5, 2e5, 4e5, 8e5, 1.6e6, 3.2e6];
    let specs: Vec<PmlSpec> = sigmas.iter().map(|&sigma_max| PmlSpec { sigma_max, ..s.pml }).collect();
    let frames = pml_sweep(s.n, s.dx, 1500.0, s.frequency, s.source_radius, &specs, s.memory_cap)?;
    for (sg, fr) in sigmas.iter().zip(&frames) {
        println!("sigma_max {sg:>9.1e}: frame / peak {fr:.3e}");
    }
    let mut fig = Figure::new("Boundary frame amplitude vs absorption", "sigma_max [1/s]", "frame / peak");
    fig.log_y = true;
    fig.push(Series::line("thickness 12", sigmas[1..].to_vec(), frames[1..].to_vec()).with_markers());
    std::fs::write(out.join("pml_sweep.svg"), fig.to_svg())?;

    let shape = Shape::D2 { rows: s.n, cols: s.n };
    let c = sample_grf(shape, s.dx, &cfg.grf, 3)?;
    let mask = SourceDisk { center: vec![s.n / 2, s.n / 2], radius: s.source_radius }.mask(shape)?;
    let u = solve_helmholtz_2d(&c, s.frequency, &mask, Some(&s.pml))?;
    println!("GRF medium: frame / peak {:.3e}", boundary_frame_ratio(&u));

    let err = self_refinement_error(s.n, s.dx, 1500.0, s.frequency, s.source_radius, &s.pml, 4, s.memory_cap)?;
    println!("homogeneous medium vs 4x refined solve (interior): rel L2 {err:.4}");
    Ok(())
}
