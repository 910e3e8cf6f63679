//! Every CLI stage in order on a reduced configuration, written to one run
//! directory. The same stages are available as `helmdiff <command>`.
//!
//!     cargo run --release --example full_pipeline -- [out_dir]

use std::path::PathBuf;

use helmdiff::cli::{execute, Command};
use helmdiff::config::RunConfig;
use helmdiff::store::Splits;

fn main() -> helmdiff::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/pipeline".into()));
    let mut cfg = RunConfig::default();
    cfg.out_dir = Some(out.clone());
    cfg.data.frequency = Some(cfg.data.frequencies[0]);
    cfg.data.splits = Splits { train: 400, val: 50, test: 50 };
    cfg.train.epochs = 10;
    cfg.train.lr_halve_every = 4;
    cfg.eval.test_limit = Some(10);
    cfg.ablation.test_limit = Some(5);
    cfg.ablation.steps = vec![10, 50, 100];
    cfg.sensitivity.directions = 10;
    cfg.sensitivity.s_steps = 11;
    cfg.sensitivity.small_s = 0.1;
    for c in [
        Command::GenData,
        Command::Train,
        Command::TrainBaseline,
        Command::Sample,
        Command::Eval,
        Command::AblateSamplers,
        Command::Sensitivity,
        Command::Report,
    ] {
        println!("== {}", c.name());
        execute(c, &cfg)?;
    }
    println!("outputs in {}", out.display());
    Ok(())
}
