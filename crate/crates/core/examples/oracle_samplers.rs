//! Noise schedules and the three reverse samplers driven by the closed-form
//! optimal predictor of a single target field.
//!
//!     cargo run --release --example oracle_samplers

use helmdiff::diffusion::{run_sampler, OracleEps, SampleConfig, SamplerKind};
use helmdiff::metrics::rel_l2;
use helmdiff::schedules::{make_schedule, vp_scalings, ScheduleKind, ScheduleParams};

fn main() -> helmdiff::Result<()> {
    for kind in [ScheduleKind::Linear, ScheduleKind::Cosine] {
        let s = make_schedule(kind, 1000, ScheduleParams::default())?;
        let gap = (1..=1000)
            .map(|k| {
                let (mu, _) = vp_scalings(k as f64 / 1000.0, &s).unwrap();
                (mu * mu - s.alpha_bar_at(k)).abs()
            })
            .fold(0.0, f64::max);
        println!(
            "{kind}: abar(1) {:.6} abar(500) {:.4} abar(1000) {:.2e}, max |mu^2 - abar| {gap:.1e}",
            s.alpha_bar_at(1),
            s.alpha_bar_at(500),
            s.alpha_bar_at(1000)
        );
    }

    let n = 128;
    let oracle = OracleEps { target: (0..n).map(|j| (0.15 * j as f64).sin()).collect() };
    let ids: Vec<u64> = (0..10).collect();
    for (sampler, steps) in [
        (SamplerKind::Ddpm, 10),
        (SamplerKind::Ddpm, 1000),
        (SamplerKind::Ddim, 10),
        (SamplerKind::Ddim, 1000),
        (SamplerKind::Sde, 10),
        (SamplerKind::Sde, 1000),
    ] {
        let cfg = SampleConfig { sampler, steps, ..Default::default() };
        let out = run_sampler(&cfg, &oracle, n, &ids)?;
        let err: f64 = out.iter().map(|s| rel_l2(s, &oracle.target).unwrap()).sum::<f64>() / out.len() as f64;
        println!("{:>5} T={steps:<5} mean rel L2 over 10 chains: {err:.3e}", sampler.to_string());
    }
    Ok(())
}
