//! 1D surrogate comparison: generates the desk dataset, trains the conditional
//! diffusion model and the regressor with one budget, and scores both on the
//! same test inputs.
//!
//!     cargo run --release --example train_1d -- [epochs] [test_inputs]
//!
//! The default of 20 epochs runs in a few minutes; the acceptance budget is
//! the `TrainConfig` default.

use std::time::Instant;

use helmdiff::config::RunConfig;
use helmdiff::diffusion::{train, train_regressor, SampleConfig, SamplerKind};
use helmdiff::pipeline::{generate_dataset, predict, score, test_split, training_data};
use helmdiff::schedules::ScheduleKind;

fn main() -> helmdiff::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let limit: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let mut cfg = RunConfig::default();
    cfg.train.epochs = epochs;
    cfg.train.lr_halve_every = (epochs / 3).max(1);

    let f = cfg.data.frequency();
    let t0 = Instant::now();
    let (records, manifest) = generate_dataset(&cfg, f)?;
    println!("{} records at {f} Hz in {:.1}s", records.len(), t0.elapsed().as_secs_f64());
    let data = training_data(&records, &manifest)?;
    let test = test_split(&records, &manifest, Some(limit));

    for (name, ckpt) in [
        ("regressor", train_regressor(&data, &cfg.train, cfg.seed)?),
        ("diffusion", train(&data, &cfg.train, cfg.seed)?),
    ] {
        let last = ckpt.log.last().expect("at least one epoch");
        println!("{name}: {epochs} epochs, final train {:.5} val {:.5}", last.train_loss, last.val_loss);
        let samplers: Vec<SampleConfig> = match name {
            "regressor" => vec![cfg.sample.clone()],
            _ => [(ScheduleKind::Cosine, 1000), (ScheduleKind::Cosine, 10), (ScheduleKind::Linear, 10)]
                .iter()
                .map(|&(schedule, steps)| SampleConfig { sampler: SamplerKind::Ddpm, schedule, steps, ..cfg.sample.clone() })
                .collect(),
        };
        for sc in samplers {
            let rep = score(&predict(&ckpt, test, &manifest, &sc)?, test, &manifest)?;
            let cols: Vec<String> = rep.summaries().iter().map(|(k, s)| format!("{k} {:.4} +- {:.4}", s.mean, s.std)).collect();
            let tag = if name == "regressor" { String::new() } else { format!(" {}-{}", sc.label(), sc.steps) };
            println!("  {name}{tag}: {}", cols.join(", "));
        }
    }
    Ok(())
}
