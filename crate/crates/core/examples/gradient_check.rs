//! Central finite differences against the hand-written backward pass, one
//! line per parameter group.
//!
//!     cargo run --release --example gradient_check

use helmdiff::nn::{Batch, Denoiser, DenoiserConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> helmdiff::Result<()> {
    let mut cfg = DenoiserConfig::new(3, 8, 2);
    cfg.context_dim = 8;
    cfg.time_hidden = 16;
    let net = Denoiser::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut p = net.init(&mut rng);
    p.iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
    let n = 24;
    let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let z: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let batch = Batch::pack(&[&u], &[&z], &[0.4], n)?;
    let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (loss, grad) = net.mse_loss_and_grad(&p, &batch, &target)?;
    println!("{} parameters, loss {loss:.6}", net.param_count());
    let f = |q: &[f64]| -> f64 {
        let out = net.forward(q, &batch).unwrap();
        out.iter().zip(&target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / n as f64
    };
    for (name, off, len) in net.groups() {
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for i in *off..off + len {
            let (mut a, mut b) = (p.clone(), p.clone());
            a[i] += 1e-5;
            b[i] -= 1e-5;
            let fd = (f(&a) - f(&b)) / 2e-5;
            diff = diff.max((fd - grad[i]).abs());
            scale = scale.max(fd.abs().max(grad[i].abs()));
        }
        println!("{name:<16} {len:>6} params  max rel diff {:.2e}", diff / scale.max(1e-12));
    }
    Ok(())
}
