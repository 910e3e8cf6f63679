//! Thin FFT helpers with numpy's conventions (`fftfreq`, `rfftfreq`,
//! `irfft`, `irfft2`, unnormalized forward transforms).

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Sample frequencies of a length-`n` DFT with unit spacing.
pub fn fftfreq(n: usize) -> Vec<f64> {
    let nf = n as f64;
    (0..n)
        .map(|i| {
            let k = if i < n.div_ceil(2) { i as i64 } else { i as i64 - n as i64 };
            k as f64 / nf
        })
        .collect()
}

/// Non-negative sample frequencies of a length-`n` real DFT.
pub fn rfftfreq(n: usize) -> Vec<f64> {
    (0..n / 2 + 1).map(|i| i as f64 / n as f64).collect()
}

/// Forward complex DFT in place (no normalization).
pub fn fft_inplace(buf: &mut [Complex64]) {
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(buf.len()).process(buf);
}

/// Inverse complex DFT in place, normalized by `1/n`.
pub fn ifft_inplace(buf: &mut [Complex64]) {
    let n = buf.len();
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
}

/// Forward real DFT returning the `n/2 + 1` non-negative modes.
pub fn rfft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_inplace(&mut buf);
    buf.truncate(x.len() / 2 + 1);
    buf
}

/// Inverse real DFT of a half spectrum to `n` real samples. Like numpy, the
/// imaginary parts of the DC and (even-`n`) Nyquist bins are discarded.
pub fn irfft(half: &[Complex64], n: usize) -> Vec<f64> {
    assert_eq!(half.len(), n / 2 + 1, "half spectrum length");
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    full[0] = Complex64::new(half[0].re, 0.0);
    for k in 1..half.len() {
        if 2 * k == n {
            full[k] = Complex64::new(half[k].re, 0.0);
        } else {
            full[k] = half[k];
            full[n - k] = half[k].conj();
        }
    }
    ifft_inplace(&mut full);
    full.into_iter().map(|v| v.re).collect()
}

/// Inverse 2D real DFT: complex inverse along rows' axis (axis 0), then
/// `irfft` along the last axis. `half` is `rows x (cols/2 + 1)` row-major.
pub fn irfft2(half: &[Complex64], rows: usize, cols: usize) -> Vec<f64> {
    let hc = cols / 2 + 1;
    assert_eq!(half.len(), rows * hc, "half spectrum shape");
    let mut work = half.to_vec();
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    let mut planner = FftPlanner::new();
    let inv_rows = planner.plan_fft_inverse(rows);
    for j in 0..hc {
        for i in 0..rows {
            column[i] = work[i * hc + j];
        }
        inv_rows.process(&mut column);
        for i in 0..rows {
            work[i * hc + j] = column[i] / rows as f64;
        }
    }
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        out.extend(irfft(&work[i * hc..(i + 1) * hc], cols));
    }
    out
}

/// Forward 2D complex DFT (no normalization), row-major.
pub fn fft2(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    assert_eq!(data.len(), rows * cols);
    let mut planner = FftPlanner::new();
    let along_cols = planner.plan_fft_forward(cols);
    let along_rows = planner.plan_fft_forward(rows);
    let mut out = data.to_vec();
    for row in out.chunks_mut(cols) {
        along_cols.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for j in 0..cols {
        for i in 0..rows {
            column[i] = out[i * cols + j];
        }
        along_rows.process(&mut column);
        for i in 0..rows {
            out[i * cols + j] = column[i];
        }
    }
    out
}
