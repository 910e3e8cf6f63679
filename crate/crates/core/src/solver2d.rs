//! 2D variable-coefficient Helmholtz reference solver with perfectly matched
//! layers.
//!
//! Discretizes `d_x(s_y/s_x d_x u) + d_y(s_x/s_y d_y u) + s_x s_y w^2/c^2 u = F`
//! with the 5-point stencil, stretch `s(p) = 1 + i sigma(p)/w`, and a
//! polynomial absorption ramp inside the outer `thickness` points of every
//! side. Points behind the layer are held at zero. The system is solved by a
//! band LU over the lexicographic (row-major) ordering.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CoefficientField, Shape};

pub const MIN_GRID: usize = 32;
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Default cap on band-factor storage.
pub const DEFAULT_MEMORY_CAP: usize = 2 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmlSpec {
    pub thickness: usize,
    pub sigma_max: f64,
    pub profile_power: u32,
}

impl Default for PmlSpec {
    fn default() -> Self {
        // sigma_max is an absorption rate in 1/s
        Self { thickness: 12, sigma_max: 4.0e5, profile_power: 2 }
    }
}

impl PmlSpec {
    pub fn validate(&self) -> Result<()> {
        if self.thickness < 4 {
            return Err(Error::invalid(format!("PML thickness {} < 4", self.thickness)));
        }
        if !(self.sigma_max.is_finite() && self.sigma_max > 0.0) {
            return Err(Error::invalid("PML sigma_max must be positive"));
        }
        if !matches!(self.profile_power, 2 | 3) {
            return Err(Error::invalid("PML profile power must be 2 or 3"));
        }
        Ok(())
    }

    /// Absorption at fractional grid coordinate `p` along an axis of `n` points.
    pub fn sigma(&self, p: f64, n: usize) -> f64 {
        let t = self.thickness as f64;
        let left = (t - p) / t;
        let right = (p - ((n - 1) as f64 - t)) / t;
        let depth = left.max(right).clamp(0.0, 1.0);
        self.sigma_max * depth.powi(self.profile_power as i32)
    }
}

/// 5-point operator in diagonal storage plus right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct Helmholtz2D {
    pub rows: usize,
    pub cols: usize,
    pub center: Vec<Complex64>,
    pub east: Vec<Complex64>,
    pub west: Vec<Complex64>,
    pub north: Vec<Complex64>,
    pub south: Vec<Complex64>,
    pub rhs: Vec<Complex64>,
    pub omega: f64,
    pub dx: f64,
}

impl Helmholtz2D {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply(&self, u: &[Complex64]) -> Vec<Complex64> {
        let (rows, cols) = (self.rows, self.cols);
        (0..rows * cols)
            .map(|p| {
                let (i, j) = (p / cols, p % cols);
                let mut acc = self.center[p] * u[p];
                if j + 1 < cols {
                    acc += self.east[p] * u[p + 1];
                }
                if j > 0 {
                    acc += self.west[p] * u[p - 1];
                }
                if i + 1 < rows {
                    acc += self.south[p] * u[p + cols];
                }
                if i > 0 {
                    acc += self.north[p] * u[p - cols];
                }
                acc
            })
            .collect()
    }

    /// Entry `A[p][q]` (zero outside the stencil).
    pub fn entry(&self, p: usize, q: usize) -> Complex64 {
        let cols = self.cols;
        if p == q {
            self.center[p]
        } else if q == p + 1 && p % cols + 1 < cols {
            self.east[p]
        } else if p == q + 1 && p % cols > 0 {
            self.west[p]
        } else if q == p + cols {
            self.south[p]
        } else if p == q + cols {
            self.north[p]
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    pub fn relative_residual(&self, u: &[Complex64]) -> f64 {
        let au = self.apply(u);
        let num: f64 = au.iter().zip(&self.rhs).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = self.rhs.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
        if den == 0.0 { num } else { num / den }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wavefield2D {
    pub values: Vec<Complex64>,
    pub shape: Shape,
    pub omega: f64,
    pub dx: f64,
}

pub fn assemble_2d(
    c: &CoefficientField,
    omega: f64,
    source_mask: &[f64],
    pml: Option<&PmlSpec>,
) -> Result<Helmholtz2D> {
    let (rows, cols) = match c.shape {
        Shape::D2 { rows, cols } => (rows, cols),
        other => return Err(Error::invalid(format!("2D solver given a {other:?} grid"))),
    };
    if rows < MIN_GRID || cols < MIN_GRID {
        return Err(Error::invalid(format!("2D grid must be at least {MIN_GRID}x{MIN_GRID}")));
    }
    if source_mask.len() != rows * cols {
        return Err(Error::invalid("source mask shape does not match the medium"));
    }
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::invalid(format!("angular frequency {omega} must be positive")));
    }
    if let Some(bad) = c.values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::invalid(format!("sound speed {bad} must be positive")));
    }
    if let Some(p) = pml {
        p.validate()?;
        if 2 * p.thickness + 2 > rows.min(cols) {
            return Err(Error::invalid("PML does not fit inside the grid"));
        }
    }
    let stretch = |p: f64, n: usize| -> Complex64 {
        match pml {
            Some(spec) => Complex64::new(1.0, spec.sigma(p, n) / omega),
            None => Complex64::new(1.0, 0.0),
        }
    };
    let h2 = c.dx * c.dx;
    let n = rows * cols;
    let zero = Complex64::new(0.0, 0.0);
    let mut sys = Helmholtz2D {
        rows,
        cols,
        center: vec![zero; n],
        east: vec![zero; n],
        west: vec![zero; n],
        north: vec![zero; n],
        south: vec![zero; n],
        rhs: source_mask.iter().map(|&m| Complex64::new(m, 0.0)).collect(),
        omega,
        dx: c.dx,
    };
    for i in 0..rows {
        let sy = stretch(i as f64, rows);
        let sy_n = stretch(i as f64 - 0.5, rows);
        let sy_s = stretch(i as f64 + 0.5, rows);
        for j in 0..cols {
            let p = i * cols + j;
            let sx = stretch(j as f64, cols);
            let sx_w = stretch(j as f64 - 0.5, cols);
            let sx_e = stretch(j as f64 + 0.5, cols);
            let ae = sy / sx_e / h2;
            let aw = sy / sx_w / h2;
            let bs = sx / sy_s / h2;
            let bn = sx / sy_n / h2;
            let k2 = omega * omega / (c.values[p] * c.values[p]);
            sys.center[p] = sx * sy * k2 - ae - aw - bs - bn;
            if j + 1 < cols {
                sys.east[p] = ae;
            }
            if j > 0 {
                sys.west[p] = aw;
            }
            if i + 1 < rows {
                sys.south[p] = bs;
            }
            if i > 0 {
                sys.north[p] = bn;
            }
        }
    }
    Ok(sys)
}

/// Bytes of band storage the LU of `sys` would need.
pub fn band_memory_estimate(rows: usize, cols: usize) -> usize {
    let n = rows * cols;
    n * (3 * cols + 1) * std::mem::size_of::<Complex64>()
}

/// Band LU with partial pivoting (lower bandwidth `kl`, upper `ku`).
/// Each row stores columns `r - kl ..= r + kl + ku` so row interchanges
/// have room for their fill.
struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<Complex64>,
    piv: Vec<usize>,
}

impl BandLu {
    fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![Complex64::new(0.0, 0.0); n * width], piv: vec![0; n] }
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        r * self.width + (c + self.kl - r)
    }

    fn factor(&mut self) -> Result<()> {
        let (n, kl) = (self.n, self.kl);
        let span = self.kl + self.ku;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].norm();
            for r in k + 1..=last_row {
                let v = self.data[self.idx(r, k)].norm();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best < crate::solver1d::PIVOT_FLOOR {
                return Err(Error::SingularSystem { row: k, pivot: best });
            }
            self.piv[k] = p;
            let last_col = (k + span).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    let (a, b) = (self.idx(k, c), self.idx(p, c));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            let len = last_col - k;
            let krow = self.idx(k, k + 1);
            for r in k + 1..=last_row {
                let ir = self.idx(r, k);
                let m = self.data[ir] / pivot;
                self.data[ir] = m;
                if m == Complex64::new(0.0, 0.0) {
                    continue;
                }
                let rrow = self.idx(r, k + 1);
                let (head, tail) = self.data.split_at_mut(rrow);
                let src = &head[krow..krow + len];
                for (dst, s) in tail[..len].iter_mut().zip(src) {
                    *dst -= m * s;
                }
            }
        }
        Ok(())
    }

    fn solve(&self, b: &mut [Complex64]) {
        let (n, kl) = (self.n, self.kl);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for r in k + 1..=(k + kl).min(n - 1) {
                b[r] -= self.data[self.idx(r, k)] * bk;
            }
        }
        let span = self.kl + self.ku;
        for k in (0..n).rev() {
            let mut acc = b[k];
            for c in k + 1..=(k + span).min(n - 1) {
                acc -= self.data[self.idx(k, c)] * b[c];
            }
            b[k] = acc / self.data[self.idx(k, k)];
        }
    }
}

pub fn solve_2d(sys: &Helmholtz2D, memory_cap: usize) -> Result<Wavefield2D> {
    let (rows, cols) = (sys.rows, sys.cols);
    let need = band_memory_estimate(rows, cols);
    if need > memory_cap {
        return Err(Error::ResourceLimit(format!(
            "band LU of a {rows}x{cols} grid needs {need} bytes (cap {memory_cap})"
        )));
    }
    let n = rows * cols;
    let mut lu = BandLu::new(n, cols, cols);
    for p in 0..n {
        let (i, j) = (p / cols, p % cols);
        let mut put = |q: usize, v: Complex64| {
            let ix = lu.idx(p, q);
            lu.data[ix] = v;
        };
        put(p, sys.center[p]);
        if j + 1 < cols {
            put(p + 1, sys.east[p]);
        }
        if j > 0 {
            put(p - 1, sys.west[p]);
        }
        if i + 1 < rows {
            put(p + cols, sys.south[p]);
        }
        if i > 0 {
            put(p - cols, sys.north[p]);
        }
    }
    lu.factor()?;
    let mut values = sys.rhs.clone();
    lu.solve(&mut values);
    let res = sys.relative_residual(&values);
    if !(res <= RESIDUAL_TOL) {
        return Err(Error::SingularSystem { row: 0, pivot: res });
    }
    Ok(Wavefield2D { values, shape: Shape::D2 { rows, cols }, omega: sys.omega, dx: sys.dx })
}

pub fn solve_helmholtz_2d(
    c: &CoefficientField,
    frequency_hz: f64,
    source_mask: &[f64],
    pml: Option<&PmlSpec>,
) -> Result<Wavefield2D> {
    let sys = assemble_2d(c, crate::solver1d::angular(frequency_hz), source_mask, pml)?;
    solve_2d(&sys, DEFAULT_MEMORY_CAP)
}

/// Row/column ranges of the physical (non-PML) interior.
pub fn interior_window(shape: Shape, pml_thickness: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    match shape {
        Shape::D2 { rows, cols } => (pml_thickness..rows - pml_thickness, pml_thickness..cols - pml_thickness),
        Shape::D1(n) => (0..1, pml_thickness..n - pml_thickness),
    }
}

/// Max `|u|` on the outermost ring of grid points (deep inside the layer),
/// relative to the peak `|u|` over the grid.
pub fn boundary_frame_ratio(u: &Wavefield2D) -> f64 {
    let Shape::D2 { rows, cols } = u.shape else { return f64::NAN };
    let peak = u.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut frame: f64 = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            if i == 0 || j == 0 || i + 1 == rows || j + 1 == cols {
                frame = frame.max(u.values[i * cols + j].norm());
            }
        }
    }
    frame / peak
}

/// Area-preserving transfer of a source mask to a grid refined by an even
/// `factor`: every fine node takes the value of its nearest coarse node, and
/// nodes halfway between two coarse nodes take the average.
pub fn prolong_mask(mask: &[f64], rows: usize, cols: usize, factor: usize) -> Result<Vec<f64>> {
    if factor == 0 || factor % 2 != 0 {
        return Err(Error::invalid(format!("refinement factor {factor} must be even")));
    }
    if mask.len() != rows * cols {
        return Err(Error::invalid("mask shape does not match the grid"));
    }
    let weights = |f: usize, n: usize| -> Vec<(usize, f64)> {
        let (q, rem) = (f / factor, f % factor);
        let w = if 2 * rem < factor {
            vec![(q, 1.0)]
        } else if 2 * rem > factor {
            vec![(q + 1, 1.0)]
        } else {
            vec![(q, 0.5), (q + 1, 0.5)]
        };
        w.into_iter().filter(|(i, _)| *i < n).collect()
    };
    let (fr, fc) = ((rows - 1) * factor + 1, (cols - 1) * factor + 1);
    let col_w: Vec<Vec<(usize, f64)>> = (0..fc).map(|j| weights(j, cols)).collect();
    let mut out = Vec::with_capacity(fr * fc);
    for i in 0..fr {
        let rw = weights(i, rows);
        for cw in &col_w {
            let mut v = 0.0;
            for &(a, wa) in &rw {
                for &(b, wb) in cw {
                    v += wa * wb * mask[a * cols + b];
                }
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// Relative L2 distance, over the non-PML interior, between a homogeneous
/// `n x n` solve and a solve on the same domain refined by `factor` (PML
/// thickness and source scaled along, absorption rate unchanged).
pub fn self_refinement_error(
    n: usize,
    dx: f64,
    c0: f64,
    frequency_hz: f64,
    source_radius: f64,
    pml: &PmlSpec,
    factor: usize,
    memory_cap: usize,
) -> Result<f64> {
    let shape = Shape::D2 { rows: n, cols: n };
    let mask = crate::fields::SourceDisk { center: vec![n / 2, n / 2], radius: source_radius }.mask(shape)?;
    let omega = crate::solver1d::angular(frequency_hz);
    let coarse = solve_2d(&assemble_2d(&CoefficientField::constant(c0, shape, dx)?, omega, &mask, Some(pml))?, memory_cap)?;
    let nf = (n - 1) * factor + 1;
    let fine_shape = Shape::D2 { rows: nf, cols: nf };
    let fine_pml = PmlSpec { thickness: pml.thickness * factor, ..*pml };
    let fine_mask = prolong_mask(&mask, n, n, factor)?;
    let fine_c = CoefficientField::constant(c0, fine_shape, dx / factor as f64)?;
    let fine = solve_2d(&assemble_2d(&fine_c, omega, &fine_mask, Some(&fine_pml))?, memory_cap)?;
    let (ri, ci) = interior_window(shape, pml.thickness);
    let (mut num, mut den) = (0.0, 0.0);
    for i in ri {
        for j in ci.clone() {
            let r = fine.values[i * factor * nf + j * factor];
            num += (coarse.values[i * n + j] - r).norm_sqr();
            den += r.norm_sqr();
        }
    }
    Ok((num / den).sqrt())
}

/// Boundary-frame ratio of a homogeneous solve for each PML setting.
pub fn pml_sweep(
    n: usize,
    dx: f64,
    c0: f64,
    frequency_hz: f64,
    source_radius: f64,
    specs: &[PmlSpec],
    memory_cap: usize,
) -> Result<Vec<f64>> {
    let shape = Shape::D2 { rows: n, cols: n };
    let mask = crate::fields::SourceDisk { center: vec![n / 2, n / 2], radius: source_radius }.mask(shape)?;
    let c = CoefficientField::constant(c0, shape, dx)?;
    let omega = crate::solver1d::angular(frequency_hz);
    specs
        .iter()
        .map(|p| Ok(boundary_frame_ratio(&solve_2d(&assemble_2d(&c, omega, &mask, Some(p))?, memory_cap)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::SourceDisk;

    fn medium(n: usize, dx: f64) -> CoefficientField {
        CoefficientField::constant(1500.0, Shape::D2 { rows: n, cols: n }, dx).unwrap()
    }

    fn disk(n: usize, r: f64) -> Vec<f64> {
        SourceDisk { center: vec![n / 2, n / 2], radius: r }.mask(Shape::D2 { rows: n, cols: n }).unwrap()
    }

    #[test]
    fn no_absorption_reduces_to_plain_stencil() {
        let (n, dx, omega) = (32, 1e-3, 3.0e6);
        let c = medium(n, dx);
        let sys = assemble_2d(&c, omega, &disk(n, 3.0), None).unwrap();
        let h2 = dx * dx;
        let p = 10 * n + 10;
        assert!((sys.east[p] - 1.0 / h2).norm() < 1e-6);
        assert!((sys.north[p] - 1.0 / h2).norm() < 1e-6);
        let k2 = omega * omega / (1500.0 * 1500.0);
        assert!((sys.center[p] - (k2 - 4.0 / h2)).norm() < 1e-6);
    }

    #[test]
    fn laplacian_annihilates_linear_ramp_in_interior() {
        let (n, dx) = (40, 1e-3);
        let c = medium(n, dx);
        let pml = PmlSpec::default();
        let sys = assemble_2d(&c, 1e-3, &vec![0.0; n * n], Some(&PmlSpec { sigma_max: 1e-15, ..pml })).unwrap();
        let ramp: Vec<Complex64> = (0..n * n).map(|p| Complex64::new((p % n) as f64 * dx, 0.0)).collect();
        let out = sys.apply(&ramp);
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                assert!(out[i * n + j].norm() < 1e-6, "row ({i},{j}) = {}", out[i * n + j]);
            }
        }
    }

    #[test]
    fn constant_medium_operator_is_symmetric() {
        let n = 32;
        let sys = assemble_2d(&medium(n, 1e-3), 2.0e6, &disk(n, 2.0), None).unwrap();
        for p in 0..n * n {
            for q in [p + 1, p + n] {
                if q < n * n {
                    assert_eq!(sys.entry(p, q), sys.entry(q, p));
                }
            }
        }
        // the stretched operator keeps complex symmetry too
        let sys = assemble_2d(&medium(n, 1e-3), 2.0e6, &disk(n, 2.0), Some(&PmlSpec::default())).unwrap();
        for p in 0..n * n {
            for q in [p + 1, p + n] {
                if q < n * n {
                    assert!((sys.entry(p, q) - sys.entry(q, p)).norm() <= 1e-9 * sys.entry(p, q).norm());
                }
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        let c = medium(16, 1e-3);
        assert!(assemble_2d(&c, 1e6, &vec![0.0; 256], None).is_err());
        let c = medium(32, 1e-3);
        assert!(assemble_2d(&c, 1e6, &vec![0.0; 10], None).is_err());
        let fat = PmlSpec { thickness: 16, ..PmlSpec::default() };
        assert!(assemble_2d(&c, 1e6, &vec![0.0; 1024], Some(&fat)).is_err());
        let bad = PmlSpec { profile_power: 4, ..PmlSpec::default() };
        assert!(assemble_2d(&c, 1e6, &vec![0.0; 1024], Some(&bad)).is_err());
    }

    #[test]
    fn band_lu_matches_operator_and_is_linear() {
        let n = 32;
        let c = medium(n, 1e-3);
        let mask = disk(n, 3.0);
        let sys = assemble_2d(&c, 2.0e6, &mask, Some(&PmlSpec { thickness: 6, ..PmlSpec::default() })).unwrap();
        let u = solve_2d(&sys, DEFAULT_MEMORY_CAP).unwrap();
        assert!(sys.relative_residual(&u.values) <= RESIDUAL_TOL);
        let doubled: Vec<f64> = mask.iter().map(|m| 2.0 * m).collect();
        let sys2 = assemble_2d(&c, 2.0e6, &doubled, Some(&PmlSpec { thickness: 6, ..PmlSpec::default() })).unwrap();
        let v = solve_2d(&sys2, DEFAULT_MEMORY_CAP).unwrap();
        for (a, b) in u.values.iter().zip(&v.values) {
            assert!((2.0 * a - b).norm() <= 1e-10 * b.norm().max(1e-30) + 1e-300);
        }
    }

    #[test]
    fn prolongation_preserves_area() {
        let (n, f) = (9, 4);
        let mask = disk(n, 2.0);
        let fine = prolong_mask(&mask, n, n, f).unwrap();
        let nf = (n - 1) * f + 1;
        assert_eq!(fine.len(), nf * nf);
        // interior nodes keep their weight, so fine area / f^2 equals the coarse count
        let coarse: f64 = mask.iter().sum();
        let area: f64 = fine.iter().sum::<f64>() / (f * f) as f64;
        assert!((area - coarse).abs() < 1e-12, "{area} {coarse}");
        assert_eq!(fine[(4 * f) * nf + 4 * f], 1.0);
        assert!(prolong_mask(&mask, n, n, 3).is_err());
    }

    #[test]
    fn thicker_layers_absorb_more() {
        let specs: Vec<PmlSpec> =
            [4, 8, 16].iter().map(|&t| PmlSpec { thickness: t, sigma_max: 4.0e5, profile_power: 2 }).collect();
        let r = pml_sweep(48, 4e-3, 1500.0, 1.5e4, 2.5, &specs, DEFAULT_MEMORY_CAP).unwrap();
        assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
    }

    #[test]
    fn memory_cap_is_enforced() {
        let n = 32;
        let sys = assemble_2d(&medium(n, 1e-3), 2.0e6, &disk(n, 3.0), None).unwrap();
        assert!(matches!(solve_2d(&sys, 1024), Err(Error::ResourceLimit(_))));
    }
}
