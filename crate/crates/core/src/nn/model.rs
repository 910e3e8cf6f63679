//! Conditional noise predictor: sinusoidal time embedding and context MLP,
//! input convolution over `[u_t, z]`, residual blocks with joint LayerNorm,
//! FiLM modulation and two circular convolutions, and a bias-free head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    dense_backward, dense_forward, embed_time, layer_norm, layer_norm_backward, sigmoid, silu, silu_grad, ConvShape, LnCache,
    KERNEL, TIME_FEATURES,
};
use crate::error::{Error, Result};

/// Samples per forward/backward pass inside a training batch.
const MICRO_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Conditioning channels; the network input adds one channel for `u_t`.
    pub cond_channels: usize,
    pub width: usize,
    pub blocks: usize,
    pub context_dim: usize,
    pub time_hidden: usize,
    /// Dilation of both convolutions in each block.
    pub dilations: Vec<usize>,
}

impl DenoiserConfig {
    pub fn new(cond_channels: usize, width: usize, blocks: usize) -> Self {
        let dilations = (0..blocks).map(|b| 3usize.pow(b as u32)).collect();
        Self { cond_channels, width, blocks, context_dim: 64, time_hidden: 256, dilations }
    }

    pub fn in_channels(&self) -> usize {
        self.cond_channels + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.blocks == 0 || self.context_dim == 0 || self.time_hidden == 0 {
            return Err(Error::invalid("denoiser dimensions must be positive"));
        }
        if self.dilations.len() != self.blocks || self.dilations.contains(&0) {
            return Err(Error::invalid("need one positive dilation per block"));
        }
        Ok(())
    }

    /// Parameter count from the layer shapes.
    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockOffsets {
    ln_scale: usize,
    ln_shift: usize,
    film_w: usize,
    film_b: usize,
    conv1_w: usize,
    conv1_b: usize,
    conv2_w: usize,
    conv2_b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    time_w1: usize,
    time_b1: usize,
    time_w2: usize,
    time_b2: usize,
    in_w: usize,
    in_b: usize,
    blocks: Vec<BlockOffsets>,
    head_w: usize,
    total: usize,
    groups: Vec<(String, usize, usize)>,
}

impl Layout {
    fn new(cfg: &DenoiserConfig) -> Self {
        let mut groups = Vec::new();
        let mut at = 0usize;
        let mut take = |name: String, len: usize| {
            let off = at;
            groups.push((name, off, len));
            at += len;
            off
        };
        let (c, ctx, hid) = (cfg.width, cfg.context_dim, cfg.time_hidden);
        let time_w1 = take("time.w1".into(), hid * TIME_FEATURES);
        let time_b1 = take("time.b1".into(), hid);
        let time_w2 = take("time.w2".into(), ctx * hid);
        let time_b2 = take("time.b2".into(), ctx);
        let in_w = take("input.w".into(), c * cfg.in_channels() * KERNEL);
        let in_b = take("input.b".into(), c);
        let blocks = (0..cfg.blocks)
            .map(|b| BlockOffsets {
                ln_scale: take(format!("block{b}.ln_scale"), c),
                ln_shift: take(format!("block{b}.ln_shift"), c),
                film_w: take(format!("block{b}.film.w"), 2 * c * ctx),
                film_b: take(format!("block{b}.film.b"), 2 * c),
                conv1_w: take(format!("block{b}.conv1.w"), c * c * KERNEL),
                conv1_b: take(format!("block{b}.conv1.b"), c),
                conv2_w: take(format!("block{b}.conv2.w"), c * c * KERNEL),
                conv2_b: take(format!("block{b}.conv2.b"), c),
            })
            .collect();
        let head_w = take("head.w".into(), c * KERNEL);
        Self { time_w1, time_b1, time_w2, time_b2, in_w, in_b, blocks, head_w, total: at, groups }
    }
}

/// A batch of network inputs. `x` holds `[u_t, z...]` channel-major over the
/// batch, `t` the per-sample time in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub n: usize,
}

impl Batch {
    /// Packs per-sample `u_t` rows and conditioning stacks (channel-major,
    /// `channels * n` each).
    pub fn pack(u_t: &[&[f64]], cond: &[&[f64]], t: &[f64], n: usize) -> Result<Self> {
        let batch = u_t.len();
        if cond.len() != batch || t.len() != batch || batch == 0 {
            return Err(Error::invalid("batch parts differ in length"));
        }
        let zc = cond[0].len() / n;
        if u_t.iter().any(|u| u.len() != n) || cond.iter().any(|z| z.len() != zc * n) {
            return Err(Error::invalid("field length mismatch in batch"));
        }
        let bn = batch * n;
        let mut x = vec![0.0; (zc + 1) * bn];
        for b in 0..batch {
            x[b * n..(b + 1) * n].copy_from_slice(u_t[b]);
            for c in 0..zc {
                let dst = (c + 1) * bn + b * n;
                x[dst..dst + n].copy_from_slice(&cond[b][c * n..(c + 1) * n]);
            }
        }
        Ok(Self { x, t: t.to_vec(), n })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    /// Samples `lo..hi` as their own batch.
    pub fn slice(&self, lo: usize, hi: usize) -> Batch {
        let (b, n) = (self.len(), self.n);
        let channels = self.x.len() / (b * n);
        let mut x = Vec::with_capacity(channels * (hi - lo) * n);
        for c in 0..channels {
            x.extend_from_slice(&self.x[c * b * n + lo * n..c * b * n + hi * n]);
        }
        Batch { x, t: self.t[lo..hi].to_vec(), n }
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

struct BlockCache {
    ln: LnCache,
    h: Vec<f64>,
    film: Vec<f64>,
    g: Vec<f64>,
    sig_g: Vec<f64>,
    col1: Vec<f64>,
    y1: Vec<f64>,
    sig_y1: Vec<f64>,
    col2: Vec<f64>,
}

/// Intermediate values of one forward pass, consumed by [`Denoiser::backward`].
pub struct ForwardCache {
    batch: usize,
    n: usize,
    emb: Vec<f64>,
    a1: Vec<f64>,
    s1: Vec<f64>,
    ctx: Vec<f64>,
    col_in: Vec<f64>,
    blocks: Vec<BlockCache>,
    z_out: Vec<f64>,
    sig_z: Vec<f64>,
    col_head: Vec<f64>,
}

/// The fixed architecture; weights are passed in as flat slices.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    layout: Layout,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(Self { config, layout })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// `(name, offset, length)` of every parameter group.
    pub fn groups(&self) -> &[(String, usize, usize)] {
        &self.layout.groups
    }

    /// Uniform `+-1/sqrt(fan_in)` weights, unit LayerNorm scale.
    pub fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let cfg = &self.config;
        let mut w = vec![0.0; self.layout.total];
        let c = cfg.width;
        let mut fill = |w: &mut [f64], off: usize, len: usize, fan_in: usize| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for v in &mut w[off..off + len] {
                *v = rng.gen_range(-a..a);
            }
        };
        let l = &self.layout;
        fill(&mut w, l.time_w1, cfg.time_hidden * TIME_FEATURES, TIME_FEATURES);
        fill(&mut w, l.time_b1, cfg.time_hidden, TIME_FEATURES);
        fill(&mut w, l.time_w2, cfg.context_dim * cfg.time_hidden, cfg.time_hidden);
        fill(&mut w, l.time_b2, cfg.context_dim, cfg.time_hidden);
        fill(&mut w, l.in_w, c * cfg.in_channels() * KERNEL, cfg.in_channels() * KERNEL);
        fill(&mut w, l.in_b, c, cfg.in_channels() * KERNEL);
        for b in &l.blocks {
            w[b.ln_scale..b.ln_scale + c].fill(1.0);
            fill(&mut w, b.film_w, 2 * c * cfg.context_dim, cfg.context_dim);
            fill(&mut w, b.film_b, 2 * c, cfg.context_dim);
            fill(&mut w, b.conv1_w, c * c * KERNEL, c * KERNEL);
            fill(&mut w, b.conv1_b, c, c * KERNEL);
            fill(&mut w, b.conv2_w, c * c * KERNEL, c * KERNEL);
            fill(&mut w, b.conv2_b, c, c * KERNEL);
        }
        fill(&mut w, l.head_w, c * KERNEL, c * KERNEL);
        w
    }

    fn check(&self, params: &[f64], input: &Batch) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, architecture needs {}",
                params.len(),
                self.layout.total
            )));
        }
        if input.n < 2 || input.x.len() != self.config.in_channels() * input.len() * input.n {
            return Err(Error::invalid("input does not match the network's channel count"));
        }
        Ok(())
    }

    /// Predicted output (one channel, `B * N` values, sample-major).
    pub fn forward(&self, params: &[f64], input: &Batch) -> Result<Vec<f64>> {
        self.check(params, input)?;
        Ok(self.run(params, input, false).0)
    }

    pub fn forward_cached(&self, params: &[f64], input: &Batch) -> Result<(Vec<f64>, ForwardCache)> {
        self.check(params, input)?;
        let (out, cache) = self.run(params, input, true);
        Ok((out, cache.expect("cache requested")))
    }

    fn run(&self, p: &[f64], input: &Batch, keep: bool) -> (Vec<f64>, Option<ForwardCache>) {
        let cfg = &self.config;
        let l = &self.layout;
        let (batch, n) = (input.len(), input.n);
        let (c, ctx_dim, hid) = (cfg.width, cfg.context_dim, cfg.time_hidden);
        let bn = batch * n;
        let slice = |off: usize, len: usize| &p[off..off + len];

        let mut emb = Vec::with_capacity(batch * TIME_FEATURES);
        for &t in &input.t {
            emb.extend_from_slice(&embed_time(t));
        }
        let a1 = dense_forward(slice(l.time_w1, hid * TIME_FEATURES), slice(l.time_b1, hid), &emb, batch, TIME_FEATURES, hid);
        let s1: Vec<f64> = a1.iter().map(|&v| silu(v)).collect();
        let ctx = dense_forward(slice(l.time_w2, ctx_dim * hid), slice(l.time_b2, ctx_dim), &s1, batch, hid, ctx_dim);

        let conv_in = ConvShape { cin: cfg.in_channels(), cout: c, dilation: 1, batch, n };
        let (mut z, col_in) =
            conv_in.forward(slice(l.in_w, c * cfg.in_channels() * KERNEL), Some(slice(l.in_b, c)), &input.x);

        let mut caches = Vec::new();
        for (bo, &dil) in l.blocks.iter().zip(&cfg.dilations) {
            let (h, ln) = layer_norm(&z, slice(bo.ln_scale, c), slice(bo.ln_shift, c), batch, n);
            let film = dense_forward(slice(bo.film_w, 2 * c * ctx_dim), slice(bo.film_b, 2 * c), &ctx, batch, ctx_dim, 2 * c);
            let mut g = vec![0.0; c * bn];
            for ch in 0..c {
                for b in 0..batch {
                    let gamma = 1.0 + film[b * 2 * c + ch];
                    let beta = film[b * 2 * c + c + ch];
                    let lo = ch * bn + b * n;
                    for q in lo..lo + n {
                        g[q] = gamma * h[q] + beta;
                    }
                }
            }
            let (a, sig_g) = silu_with_sigmoid(&g);
            let conv = ConvShape { cin: c, cout: c, dilation: dil, batch, n };
            let (y1, col1) = conv.forward(slice(bo.conv1_w, c * c * KERNEL), Some(slice(bo.conv1_b, c)), &a);
            let (a2, sig_y1) = silu_with_sigmoid(&y1);
            let (y2, col2) = conv.forward(slice(bo.conv2_w, c * c * KERNEL), Some(slice(bo.conv2_b, c)), &a2);
            for (zi, yi) in z.iter_mut().zip(&y2) {
                *zi += yi;
            }
            if keep {
                caches.push(BlockCache { ln, h, film, g, sig_g, col1, y1, sig_y1, col2 });
            }
        }

        let (act, sig_z) = silu_with_sigmoid(&z);
        let head = ConvShape { cin: c, cout: 1, dilation: 1, batch, n };
        let (out, col_head) = head.forward(slice(l.head_w, c * KERNEL), None, &act);
        let cache = keep.then(|| ForwardCache {
            batch,
            n,
            emb,
            a1,
            s1,
            ctx,
            col_in,
            blocks: caches,
            z_out: z,
            sig_z,
            col_head,
        });
        (out, cache)
    }

    /// Gradient of a scalar loss given `dL/d(output)`.
    pub fn backward(&self, p: &[f64], cache: &ForwardCache, dout: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.layout.total];
        self.backward_into(p, cache, dout, &mut grad);
        grad
    }

    /// Adds the gradient to `grad`.
    pub fn backward_into(&self, p: &[f64], cache: &ForwardCache, dout: &[f64], grad: &mut [f64]) {
        let cfg = &self.config;
        let l = &self.layout;
        let (batch, n) = (cache.batch, cache.n);
        let (c, ctx_dim, hid) = (cfg.width, cfg.context_dim, cfg.time_hidden);
        let bn = batch * n;

        let head = ConvShape { cin: c, cout: 1, dilation: 1, batch, n };
        let dact = head.backward(&p[l.head_w..], &cache.col_head, dout, &mut grad[l.head_w..], None);
        let mut dz = silu_back(&dact, &cache.z_out, &cache.sig_z);
        let mut dctx = vec![0.0; batch * ctx_dim];

        for ((bo, &dil), bc) in l.blocks.iter().zip(&cfg.dilations).zip(&cache.blocks).rev() {
            let conv = ConvShape { cin: c, cout: c, dilation: dil, batch, n };
            let w2 = &p[bo.conv2_w..bo.conv2_w + c * c * KERNEL];
            let (dw2, db2) = two_groups(grad, bo.conv2_w, c * c * KERNEL, bo.conv2_b, c);
            let da2 = conv.backward(w2, &bc.col2, &dz, dw2, Some(db2));
            let dy1 = silu_back(&da2, &bc.y1, &bc.sig_y1);
            let w1 = &p[bo.conv1_w..bo.conv1_w + c * c * KERNEL];
            let (dw1, db1) = two_groups(grad, bo.conv1_w, c * c * KERNEL, bo.conv1_b, c);
            let da = conv.backward(w1, &bc.col1, &dy1, dw1, Some(db1));

            let mut dh = vec![0.0; c * bn];
            let mut dfilm = vec![0.0; batch * 2 * c];
            for ch in 0..c {
                for b in 0..batch {
                    let gamma = 1.0 + bc.film[b * 2 * c + ch];
                    let lo = ch * bn + b * n;
                    let (mut dgam, mut dbet) = (0.0, 0.0);
                    for q in lo..lo + n {
                        let s = bc.sig_g[q];
                        let dg = da[q] * s * (1.0 + bc.g[q] * (1.0 - s));
                        dh[q] = dg * gamma;
                        dgam += dg * bc.h[q];
                        dbet += dg;
                    }
                    dfilm[b * 2 * c + ch] = dgam;
                    dfilm[b * 2 * c + c + ch] = dbet;
                }
            }
            let fw = &p[bo.film_w..bo.film_w + 2 * c * ctx_dim];
            let (dfw, dfb) = two_groups(grad, bo.film_w, 2 * c * ctx_dim, bo.film_b, 2 * c);
            let dc = dense_backward(fw, &cache.ctx, &dfilm, batch, ctx_dim, 2 * c, dfw, dfb);
            for (a, b) in dctx.iter_mut().zip(&dc) {
                *a += b;
            }
            let scale = &p[bo.ln_scale..bo.ln_scale + c];
            let (ds, dsh) = two_groups(grad, bo.ln_scale, c, bo.ln_shift, c);
            let dzl = layer_norm_backward(&bc.ln, scale, &dh, batch, n, ds, dsh);
            for (a, b) in dz.iter_mut().zip(&dzl) {
                *a += b;
            }
        }

        let cin = cfg.in_channels();
        let conv_in = ConvShape { cin, cout: c, dilation: 1, batch, n };
        let (dwi, dbi) = two_groups(grad, l.in_w, c * cin * KERNEL, l.in_b, c);
        conv_in.backward(&p[l.in_w..l.in_w + c * cin * KERNEL], &cache.col_in, &dz, dwi, Some(dbi));

        let w2 = &p[l.time_w2..l.time_w2 + ctx_dim * hid];
        let (dw2, db2) = two_groups(grad, l.time_w2, ctx_dim * hid, l.time_b2, ctx_dim);
        let ds1 = dense_backward(w2, &cache.s1, &dctx, batch, hid, ctx_dim, dw2, db2);
        let da1: Vec<f64> = ds1.iter().zip(&cache.a1).map(|(d, &a)| d * silu_grad(a)).collect();
        let w1 = &p[l.time_w1..l.time_w1 + hid * TIME_FEATURES];
        let (dw1, db1) = two_groups(grad, l.time_w1, hid * TIME_FEATURES, l.time_b1, hid);
        dense_backward(w1, &cache.emb, &da1, batch, TIME_FEATURES, hid, dw1, db1);
    }

    /// Mean squared error over all outputs and its gradient. The batch is
    /// processed in fixed micro-batches and their gradients summed in order.
    pub fn mse_loss_and_grad(&self, params: &[f64], input: &Batch, target: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(params, input)?;
        let (batch, n) = (input.len(), input.n);
        if target.len() != batch * n {
            return Err(Error::invalid("target length differs from the network output"));
        }
        let m = (batch * n) as f64;
        let (mut loss, mut grad) = (0.0, vec![0.0; params.len()]);
        for lo in (0..batch).step_by(MICRO_BATCH) {
            let hi = (lo + MICRO_BATCH).min(batch);
            let part = input.slice(lo, hi);
            let (out, cache) = self.run(params, &part, true);
            let tgt = &target[lo * n..hi * n];
            loss += out.iter().zip(tgt).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / m;
            let dout: Vec<f64> = out.iter().zip(tgt).map(|(o, t)| 2.0 * (o - t) / m).collect();
            self.backward_into(params, &cache.expect("cache requested"), &dout, &mut grad);
        }
        Ok((loss, grad))
    }
}

/// `(silu(x), sigmoid(x))` elementwise.
fn silu_with_sigmoid(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let sig: Vec<f64> = x.iter().map(|&v| sigmoid(v)).collect();
    (x.iter().zip(&sig).map(|(v, s)| v * s).collect(), sig)
}

/// `dL/dx` of `silu(x)` from the cached sigmoid.
fn silu_back(dy: &[f64], x: &[f64], sig: &[f64]) -> Vec<f64> {
    dy.iter().zip(x).zip(sig).map(|((d, &v), &s)| d * s * (1.0 + v * (1.0 - s))).collect()
}

/// Disjoint mutable views of two groups that are adjacent or ordered.
fn two_groups(grad: &mut [f64], a: usize, alen: usize, b: usize, blen: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a + alen <= b);
    let (lo, hi) = grad.split_at_mut(b);
    (&mut lo[a..a + alen], &mut hi[..blen])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy(seed: u64) -> (Denoiser, Vec<f64>, Batch, Vec<f64>) {
        let mut cfg = DenoiserConfig::new(3, 4, 2);
        cfg.context_dim = 6;
        cfg.time_hidden = 8;
        cfg.dilations = vec![1, 2];
        let net = Denoiser::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = net.init(&mut rng);
        for v in p.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
        let n = 16;
        let u: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let z: Vec<Vec<f64>> = (0..2).map(|_| (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let t = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let ur: Vec<&[f64]> = u.iter().map(|v| v.as_slice()).collect();
        let zr: Vec<&[f64]> = z.iter().map(|v| v.as_slice()).collect();
        let batch = Batch::pack(&ur, &zr, &t, n).unwrap();
        let target: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (net, p, batch, target)
    }

    #[test]
    fn param_count_matches_shape_arithmetic() {
        let cfg = DenoiserConfig::new(10, 32, 4);
        let time = 128 * 256 + 256 + 256 * 64 + 64;
        let input = 32 * 11 * 3 + 32;
        let block = 2 * 32 + (64 * 64 + 64) + 2 * (32 * 32 * 3 + 32);
        assert_eq!(cfg.param_count(), time + input + 4 * block + 32 * 3);
        assert_eq!(cfg.param_count(), 92_384);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let (net, p, batch, _) = toy(1);
        let out = net.forward(&vec![0.0; p.len()], &batch).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences_for_every_group() {
        for seed in [11, 12, 13] {
            let (net, p, batch, target) = toy(seed);
            let (_, grad) = net.mse_loss_and_grad(&p, &batch, &target).unwrap();
            let loss = |q: &[f64]| {
                let out = net.forward(q, &batch).unwrap();
                out.iter().zip(&target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / out.len() as f64
            };
            for (name, off, len) in net.groups() {
                let (mut num, mut den) = (0.0f64, 0.0f64);
                for i in *off..off + len {
                    let h = 1e-5;
                    let mut qp = p.clone();
                    qp[i] += h;
                    let mut qm = p.clone();
                    qm[i] -= h;
                    let fd = (loss(&qp) - loss(&qm)) / (2.0 * h);
                    num = num.max((fd - grad[i]).abs());
                    den = den.max(fd.abs().max(grad[i].abs()));
                }
                assert!(num <= 1e-5 * den.max(1e-8), "seed {seed} {name}: {num} vs scale {den}");
            }
        }
    }

    #[test]
    fn shape_errors() {
        let (net, p, batch, _) = toy(2);
        assert!(net.forward(&p[1..], &batch).is_err());
        let short = Batch { x: batch.x[1..].to_vec(), ..batch.clone() };
        assert!(net.forward(&p, &short).is_err());
    }
}
