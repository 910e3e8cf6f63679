//! Relative error norms, the energy functional, and Fourier power spectra.
//!
//! Discrete gradients are forward differences with circular wrap on the last
//! point of every axis.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Shape;
use crate::spectral::{fft2, fft_inplace};

/// Scalar types a field can hold.
pub trait FieldValue: Copy {
    fn sub(self, other: Self) -> Self;
    fn norm_sqr(self) -> f64;
    fn to_complex(self) -> Complex64;
}

impl FieldValue for f64 {
    fn sub(self, other: Self) -> Self {
        self - other
    }
    fn norm_sqr(self) -> f64 {
        self * self
    }
    fn to_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
}

impl FieldValue for Complex64 {
    fn sub(self, other: Self) -> Self {
        self - other
    }
    fn norm_sqr(self) -> f64 {
        Complex64::norm_sqr(&self)
    }
    fn to_complex(self) -> Complex64 {
        self
    }
}

fn check_pair<T>(pred: &[T], truth: &[T]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::invalid(format!("field lengths differ ({} vs {})", pred.len(), truth.len())));
    }
    Ok(())
}

fn sq_norm<T: FieldValue>(u: &[T]) -> f64 {
    u.iter().map(|v| v.norm_sqr()).sum()
}

fn diff<T: FieldValue>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(x, y)| x.sub(*y)).collect()
}

/// `sum |D u|^2` over all axes (forward differences, circular wrap).
fn grad_sq<T: FieldValue>(u: &[T], shape: Shape, dx: f64) -> f64 {
    match shape {
        Shape::D1(n) => (0..n).map(|j| u[(j + 1) % n].sub(u[j]).norm_sqr()).sum::<f64>() / (dx * dx),
        Shape::D2 { rows, cols } => {
            let mut acc = 0.0;
            for i in 0..rows {
                for j in 0..cols {
                    let p = i * cols + j;
                    acc += u[i * cols + (j + 1) % cols].sub(u[p]).norm_sqr();
                    acc += u[((i + 1) % rows) * cols + j].sub(u[p]).norm_sqr();
                }
            }
            acc / (dx * dx)
        }
    }
}

fn cell(shape: Shape, dx: f64) -> f64 {
    dx.powi(shape.ndim() as i32)
}

pub fn rel_l2<T: FieldValue>(pred: &[T], truth: &[T]) -> Result<f64> {
    check_pair(pred, truth)?;
    let den = sq_norm(truth);
    if den == 0.0 {
        return Err(Error::invalid("relative error against a zero field"));
    }
    Ok((sq_norm(&diff(pred, truth)) / den).sqrt())
}

/// `||v||_{H1}^2 = sum (|v|^2 + |Dv|^2) dx^d`.
pub fn h1_norm_sq<T: FieldValue>(u: &[T], shape: Shape, dx: f64) -> f64 {
    (sq_norm(u) + grad_sq(u, shape, dx)) * cell(shape, dx)
}

pub fn rel_h1<T: FieldValue>(pred: &[T], truth: &[T], shape: Shape, dx: f64) -> Result<f64> {
    check_pair(pred, truth)?;
    if truth.len() != shape.len() {
        return Err(Error::invalid("field length does not match grid"));
    }
    let den = h1_norm_sq(truth, shape, dx);
    if den == 0.0 {
        return Err(Error::invalid("relative error against a zero field"));
    }
    Ok((h1_norm_sq(&diff(pred, truth), shape, dx) / den).sqrt())
}

/// `E(u) = sum (|Du|^2 + (w/c)^2 |u|^2) dx^d`.
pub fn energy<T: FieldValue>(u: &[T], c: &[f64], omega: f64, shape: Shape, dx: f64) -> Result<f64> {
    if u.len() != c.len() || u.len() != shape.len() {
        return Err(Error::invalid("field, medium and grid sizes differ"));
    }
    if let Some(bad) = c.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid(format!("sound speed {bad} must be positive")));
    }
    let pot: f64 = u.iter().zip(c).map(|(v, ci)| v.norm_sqr() * omega * omega / (ci * ci)).sum();
    Ok((grad_sq(u, shape, dx) + pot) * cell(shape, dx))
}

pub fn rel_energy_error<T: FieldValue>(
    pred: &[T],
    truth: &[T],
    c: &[f64],
    omega: f64,
    shape: Shape,
    dx: f64,
) -> Result<f64> {
    check_pair(pred, truth)?;
    let et = energy(truth, c, omega, shape, dx)?;
    if et == 0.0 {
        return Err(Error::invalid("reference field has zero energy"));
    }
    Ok((energy(pred, c, omega, shape, dx)? - et).abs() / et)
}

/// `|F u|^2` with the zero frequency moved to the center (index `n / 2`).
pub fn power_spectrum<T: FieldValue>(u: &[T], shape: Shape) -> Vec<f64> {
    let data: Vec<Complex64> = u.iter().map(|v| v.to_complex()).collect();
    match shape {
        Shape::D1(n) => {
            let mut buf = data;
            fft_inplace(&mut buf);
            (0..n).map(|k| buf[(k + n - n / 2) % n].norm_sqr()).collect()
        }
        Shape::D2 { rows, cols } => {
            let f = fft2(&data, rows, cols);
            let mut out = vec![0.0; rows * cols];
            for i in 0..rows {
                for j in 0..cols {
                    let si = (i + rows - rows / 2) % rows;
                    let sj = (j + cols - cols / 2) % cols;
                    out[i * cols + j] = f[si * cols + sj].norm_sqr();
                }
            }
            out
        }
    }
}

/// Mean of a centered spectrum over integer radial shells; entry `r` holds
/// shell `r` (in grid-frequency index units).
pub fn radial_average(spectrum: &[f64], shape: Shape) -> Vec<f64> {
    let (rows, cols) = match shape {
        Shape::D1(n) => (1, n),
        Shape::D2 { rows, cols } => (rows, cols),
    };
    let rmax = (rows / 2).max(cols / 2) + 1;
    let (mut sum, mut cnt) = (vec![0.0; rmax + 1], vec![0usize; rmax + 1]);
    for i in 0..rows {
        for j in 0..cols {
            let di = i as f64 - (rows / 2) as f64 * if rows > 1 { 1.0 } else { 0.0 };
            let dj = j as f64 - (cols / 2) as f64;
            let r = (di * di + dj * dj).sqrt().round() as usize;
            if r <= rmax {
                sum[r] += spectrum[i * cols + j];
                cnt[r] += 1;
            }
        }
    }
    sum.iter().zip(&cnt).map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Self { mean, std: var.sqrt(), n }
    }
}

/// Per-sample errors and their summaries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub rel_l2: Vec<f64>,
    pub rel_h1: Vec<f64>,
    pub rel_energy: Vec<f64>,
}

impl ErrorReport {
    pub fn push<T: FieldValue>(&mut self, pred: &[T], truth: &[T], c: &[f64], omega: f64, shape: Shape, dx: f64) -> Result<()> {
        self.rel_l2.push(rel_l2(pred, truth)?);
        self.rel_h1.push(rel_h1(pred, truth, shape, dx)?);
        self.rel_energy.push(rel_energy_error(pred, truth, c, omega, shape, dx)?);
        Ok(())
    }

    pub fn summaries(&self) -> [(&'static str, Summary); 3] {
        [
            ("rel_l2", Summary::of(&self.rel_l2)),
            ("rel_h1", Summary::of(&self.rel_h1)),
            ("rel_energy", Summary::of(&self.rel_energy)),
        ]
    }
}
