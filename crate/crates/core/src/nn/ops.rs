//! Kernels for the fixed denoiser architecture. Activations are stored
//! channel-major across the batch: `x[c * (B * N) + b * N + n]`.

use std::f64::consts::FRAC_PI_2;

pub const TIME_FEATURES: usize = 128;
pub const LN_EPS: f64 = 1e-5;

/// `C = alpha * op(A) * op(B) + beta * C` for row-major `A: m x k`, `B: k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds checked above; strides describe the row-major (or
    // transposed) layout of buffers of exactly those sizes.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

pub fn time_frequencies() -> [f64; TIME_FEATURES / 2] {
    let mut w = [0.0; TIME_FEATURES / 2];
    for (r, v) in w.iter_mut().enumerate() {
        *v = FRAC_PI_2 * 10f64.powf(3.0 * r as f64 / 63.0);
    }
    w
}

/// `[cos(w_1 t) .. cos(w_64 t), sin(w_1 t) .. sin(w_64 t)]`.
pub fn embed_time(t: f64) -> [f64; TIME_FEATURES] {
    let mut out = [0.0; TIME_FEATURES];
    let half = TIME_FEATURES / 2;
    for (r, w) in time_frequencies().iter().enumerate() {
        let (s, c) = (w * t).sin_cos();
        out[r] = c;
        out[half + r] = s;
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Dense layer over a batch: `y[b] = W x[b] + bias`, `W: out x in`, rows of
/// `x` and `y` are samples.
pub fn dense_forward(w: &[f64], bias: &[f64], x: &[f64], batch: usize, inp: usize, out: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(batch * out);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    gemm(batch, inp, out, x, false, w, true, 1.0, &mut y);
    y
}

/// Accumulates weight and bias gradients and returns `dL/dx`.
#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    batch: usize,
    inp: usize,
    out: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    gemm(out, batch, inp, dy, true, x, false, 1.0, dw);
    for row in dy.chunks_exact(out) {
        for (g, d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
    let mut dx = vec![0.0; batch * inp];
    gemm(batch, out, inp, dy, false, w, false, 0.0, &mut dx);
    dx
}

/// Geometry of a circular 1D convolution with kernel 3 and dilation `d`.
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub dilation: usize,
    pub batch: usize,
    pub n: usize,
}

pub const KERNEL: usize = 3;

impl ConvShape {
    fn cols(&self) -> usize {
        self.batch * self.n
    }

    /// Source offset of tap `k` reduced to `0..n`.
    #[inline]
    fn shift(&self, k: usize) -> usize {
        let n = self.n as isize;
        ((k as isize - 1) * self.dilation as isize).rem_euclid(n) as usize
    }

    /// `col[(i * 3 + k) * BN + b * N + n] = x[i][b][n + (k - 1) d mod N]`.
    pub fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (bn, n) = (self.cols(), self.n);
        let mut col = Vec::with_capacity(self.cin * KERNEL * bn);
        for i in 0..self.cin {
            for k in 0..KERNEL {
                let o = self.shift(k);
                for b in 0..self.batch {
                    let src = &x[i * bn + b * n..i * bn + (b + 1) * n];
                    col.extend_from_slice(&src[o..]);
                    col.extend_from_slice(&src[..o]);
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f64]) -> Vec<f64> {
        let (bn, n) = (self.cols(), self.n);
        let mut x = vec![0.0; self.cin * bn];
        for i in 0..self.cin {
            for k in 0..KERNEL {
                let o = self.shift(k);
                let src = &col[(i * KERNEL + k) * bn..(i * KERNEL + k + 1) * bn];
                for b in 0..self.batch {
                    let dst = &mut x[i * bn + b * n..i * bn + (b + 1) * n];
                    let s = &src[b * n..(b + 1) * n];
                    for (d, v) in dst[o..].iter_mut().zip(&s[..n - o]) {
                        *d += v;
                    }
                    for (d, v) in dst[..o].iter_mut().zip(&s[n - o..]) {
                        *d += v;
                    }
                }
            }
        }
        x
    }

    /// Returns the output and the column buffer needed by the backward pass.
    pub fn forward(&self, w: &[f64], bias: Option<&[f64]>, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let bn = self.cols();
        let col = self.im2col(x);
        let mut y = vec![0.0; self.cout * bn];
        if let Some(bias) = bias {
            for (row, b) in y.chunks_exact_mut(bn).zip(bias) {
                row.fill(*b);
            }
        }
        gemm(self.cout, self.cin * KERNEL, bn, w, false, &col, false, 1.0, &mut y);
        (y, col)
    }

    pub fn backward(&self, w: &[f64], col: &[f64], dy: &[f64], dw: &mut [f64], db: Option<&mut [f64]>) -> Vec<f64> {
        let bn = self.cols();
        let ck = self.cin * KERNEL;
        gemm(self.cout, bn, ck, dy, false, col, true, 1.0, dw);
        if let Some(db) = db {
            for (g, row) in db.iter_mut().zip(dy.chunks_exact(bn)) {
                *g += row.iter().sum::<f64>();
            }
        }
        let mut dcol = vec![0.0; ck * bn];
        gemm(ck, self.cout, bn, w, true, dy, false, 0.0, &mut dcol);
        self.col2im(&dcol)
    }
}

/// Per-sample statistics of a joint LayerNorm.
#[derive(Debug, Clone)]
pub struct LnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Normalizes each sample jointly over all `C x N` features, then applies a
/// per-channel affine map.
pub fn layer_norm(x: &[f64], scale: &[f64], shift: &[f64], batch: usize, n: usize) -> (Vec<f64>, LnCache) {
    let ch = scale.len();
    let bn = batch * n;
    let count = (ch * n) as f64;
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; batch];
    for b in 0..batch {
        let sample = |c: usize| &x[c * bn + b * n..c * bn + (b + 1) * n];
        let mean = (0..ch).map(|c| sample(c).iter().sum::<f64>()).sum::<f64>() / count;
        let var = (0..ch)
            .map(|c| sample(c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
            .sum::<f64>()
            / count;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[b] = is;
        for c in 0..ch {
            let lo = c * bn + b * n;
            for p in lo..lo + n {
                xhat[p] = (x[p] - mean) * is;
            }
        }
    }
    let mut y = vec![0.0; x.len()];
    for c in 0..ch {
        for p in c * bn..(c + 1) * bn {
            y[p] = xhat[p] * scale[c] + shift[c];
        }
    }
    (y, LnCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    cache: &LnCache,
    scale: &[f64],
    dy: &[f64],
    batch: usize,
    n: usize,
    dscale: &mut [f64],
    dshift: &mut [f64],
) -> Vec<f64> {
    let ch = scale.len();
    let bn = batch * n;
    let count = (ch * n) as f64;
    let mut dxhat = vec![0.0; dy.len()];
    for c in 0..ch {
        for p in c * bn..(c + 1) * bn {
            dscale[c] += dy[p] * cache.xhat[p];
            dshift[c] += dy[p];
            dxhat[p] = dy[p] * scale[c];
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for b in 0..batch {
        let (mut s1, mut s2) = (0.0, 0.0);
        for c in 0..ch {
            let lo = c * bn + b * n;
            for p in lo..lo + n {
                s1 += dxhat[p];
                s2 += dxhat[p] * cache.xhat[p];
            }
        }
        let (m1, m2) = (s1 / count, s2 / count);
        for c in 0..ch {
            let lo = c * bn + b * n;
            for p in lo..lo + n {
                dx[p] = cache.inv_std[b] * (dxhat[p] - m1 - cache.xhat[p] * m2);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn randv(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn time_embedding_values() {
        let w = time_frequencies();
        assert!((w[0] - FRAC_PI_2).abs() < 1e-15);
        assert!((w[63] - FRAC_PI_2 * 1e3).abs() < 1e-9);
        assert!(w.windows(2).all(|p| p[1] > p[0]));
        let e = embed_time(0.0);
        assert!(e[..64].iter().all(|&v| v == 1.0) && e[64..].iter().all(|&v| v == 0.0));
        for i in 0..1000 {
            assert!(embed_time(i as f64 / 999.0).iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s = ConvShape { cin: 3, cout: 2, dilation: 2, batch: 2, n: 7 };
        let w = randv(&mut rng, 2 * 3 * 3);
        let bias = randv(&mut rng, 2);
        let x = randv(&mut rng, 3 * 14);
        let (y, _) = s.forward(&w, Some(&bias), &x);
        for o in 0..2 {
            for b in 0..2 {
                for p in 0..7 {
                    let mut acc = bias[o];
                    for i in 0..3 {
                        for k in 0..3 {
                            let q = (p as isize + (k as isize - 1) * 2).rem_euclid(7) as usize;
                            acc += w[(o * 3 + i) * 3 + k] * x[i * 14 + b * 7 + q];
                        }
                    }
                    assert!((y[o * 14 + b * 7 + p] - acc).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn layer_norm_constant_input_gives_shift() {
        let (y, _) = layer_norm(&[3.0; 8], &[2.0, 2.0], &[0.5, -1.0], 1, 4);
        assert_eq!(y, vec![0.5, 0.5, 0.5, 0.5, -1.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn layer_norm_unit_affine_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = randv(&mut rng, 4 * 16);
        let (y, _) = layer_norm(&x, &[1.0; 4], &[0.0; 4], 1, 16);
        let mean = y.iter().sum::<f64>() / 64.0;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3);
    }

    #[test]
    fn layer_norm_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let (ch, n, batch) = (2, 16, 2);
        let x = randv(&mut rng, ch * n * batch);
        let scale = randv(&mut rng, ch);
        let shift = randv(&mut rng, ch);
        let proj = randv(&mut rng, x.len());
        let loss = |x: &[f64]| -> f64 {
            let (y, _) = layer_norm(x, &scale, &shift, batch, n);
            y.iter().zip(&proj).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = layer_norm(&x, &scale, &shift, batch, n);
        let (mut ds, mut dh) = (vec![0.0; ch], vec![0.0; ch]);
        let dx = layer_norm_backward(&cache, &scale, &proj, batch, n, &mut ds, &mut dh);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() <= 1e-5 * fd.abs().max(dx[i].abs()).max(1e-3), "{i}: {fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn silu_derivative() {
        for x in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let fd = (silu(x + 1e-6) - silu(x - 1e-6)) / 2e-6;
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
