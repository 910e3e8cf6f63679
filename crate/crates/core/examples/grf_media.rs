//! Spectral GRF sound-speed media: draws a few fields, checks the bounds,
//! and compares the empirical power spectrum with the envelope.
//!
//!     cargo run --release --example grf_media -- [out_dir]

use std::path::PathBuf;

use helmdiff::config::RunConfig;
use helmdiff::fields::{grf_realization, sample_grf_family, spectral_envelope, wavenumber_grid};
use helmdiff::metrics::power_spectrum;
use helmdiff::plot::{Figure, Series};
use helmdiff::rng::{child_seed, Purpose};
use helmdiff::spectral::rfftfreq;
use helmdiff::Shape;
use rand::SeedableRng;

fn main() -> helmdiff::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/examples".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = RunConfig::default();
    let (n, dx, hp) = (cfg.data.n, cfg.data.dx(), &cfg.grf);
    let shape = Shape::D1(n);
    let x: Vec<f64> = (0..n).map(|j| j as f64 * dx).collect();

    let mut fig = Figure::new("GRF sound-speed samples", "x [m]", "c [m/s]");
    for i in 0..4 {
        let c = sample_grf_family(shape, dx, hp, child_seed(cfg.seed, Purpose::Field, i))?;
        println!("field {i}: min {:.1} max {:.1} mean {:.1}", c.min(), c.max(), c.mean());
        fig.push(Series::line(format!("draw {i}"), x.clone(), c.values));
    }
    std::fs::write(out.join("grf_samples.svg"), fig.to_svg())?;

    // empirical power at fixed (alpha, ell) against 2 lambda^2
    let env = spectral_envelope(&wavenumber_grid(shape), hp.alpha, hp.ell)?;
    let draws = 500;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut power = vec![0.0; n];
    for _ in 0..draws {
        let u = grf_realization(shape, &env, &mut rng);
        for (acc, p) in power.iter_mut().zip(power_spectrum(&u, shape)) {
            *acc += p / draws as f64;
        }
    }
    let k = rfftfreq(n);
    // centered spectrum: index n/2 + j holds frequency j
    let emp: Vec<f64> = (1..n / 2).map(|j| power[n / 2 + j]).collect();
    let theory: Vec<f64> = (1..n / 2).map(|j| 2.0 * env[j] * env[j]).collect();
    let worst = emp.iter().zip(&theory).skip(n / 8).take(n / 4).map(|(e, t)| (e / t - 1.0).abs()).fold(0.0, f64::max);
    println!("mid-band power vs 2 lambda^2: worst relative deviation {:.1}% over {draws} draws", 100.0 * worst);
    let mut spec = Figure::new("Power spectrum", "K [cycles/sample]", "E|F|^2");
    spec.log_y = true;
    spec.push(Series::line("empirical", k[1..n / 2].to_vec(), emp));
    spec.push(Series::line("2 lambda(K)^2", k[1..n / 2].to_vec(), theory));
    std::fs::write(out.join("grf_spectrum.svg"), spec.to_svg())?;
    println!("figures in {}", out.display());
    Ok(())
}
