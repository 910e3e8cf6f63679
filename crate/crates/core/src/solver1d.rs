//! 1D variable-coefficient Helmholtz reference solver.
//!
//! Second-order FDFD stencil for `u'' + k(x)^2 u = 0` on `[0, L]`,
//! `k = omega / c`, with a Dirichlet source row `u(0) = omega` on the left and
//! a one-sided radiation row on the right.
//!
//! Storage convention for the tridiagonal matrix `A`:
//! `sub[j] = A[j][j-1]`, `main[j] = A[j][j]`, `sup[j] = A[j][j+1]`;
//! `sub[0]` and `sup[n-1]` are unused and kept at zero. In the 3-row banded
//! layout of `solve_banded((1,1), ab, b)` this is `ab[0][j+1] = sup[j]`,
//! `ab[1][j] = main[j]`, `ab[2][j-1] = sub[j]`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CoefficientField, Shape};

/// Pivots smaller than this are treated as exact zeros.
pub const PIVOT_FLOOR: f64 = 1e-300;
/// Maximum accepted relative residual of a production solve.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct BandedSystem {
    pub sub: Vec<Complex64>,
    pub main: Vec<Complex64>,
    pub sup: Vec<Complex64>,
    pub rhs: Vec<Complex64>,
}

impl BandedSystem {
    pub fn len(&self) -> usize {
        self.main.len()
    }

    pub fn is_empty(&self) -> bool {
        self.main.is_empty()
    }

    /// `A u`.
    pub fn apply(&self, u: &[Complex64]) -> Vec<Complex64> {
        let n = self.len();
        (0..n)
            .map(|j| {
                let mut acc = self.main[j] * u[j];
                if j > 0 {
                    acc += self.sub[j] * u[j - 1];
                }
                if j + 1 < n {
                    acc += self.sup[j] * u[j + 1];
                }
                acc
            })
            .collect()
    }

    /// `||A u - b||_inf / ||b||_inf`.
    pub fn relative_residual(&self, u: &[Complex64]) -> f64 {
        let au = self.apply(u);
        let num = au.iter().zip(&self.rhs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let den = self.rhs.iter().map(|b| b.norm()).fold(0.0, f64::max);
        if den == 0.0 { num } else { num / den }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wavefield1D {
    pub values: Vec<Complex64>,
    pub omega: f64,
    pub dx: f64,
}

pub fn angular(frequency_hz: f64) -> f64 {
    2.0 * PI * frequency_hz
}

pub fn assemble_1d(c: &CoefficientField, omega: f64) -> Result<BandedSystem> {
    let n = match c.shape {
        Shape::D1(n) => n,
        other => return Err(Error::invalid(format!("1D solver given a {other:?} grid"))),
    };
    if n < 3 {
        return Err(Error::invalid(format!("1D solver needs N >= 3, got {n}")));
    }
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::invalid(format!("angular frequency {omega} must be positive")));
    }
    if let Some(bad) = c.values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::invalid(format!("sound speed {bad} must be positive")));
    }
    let dx = c.dx;
    let zero = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let mut sub = vec![zero; n];
    let mut main = vec![zero; n];
    let mut sup = vec![zero; n];
    let mut rhs = vec![zero; n];
    for j in 1..n - 1 {
        let kdx = omega / c.values[j] * dx;
        sub[j] = one;
        main[j] = Complex64::new(-2.0 + kdx * kdx, 0.0);
        sup[j] = one;
    }
    main[0] = one;
    rhs[0] = Complex64::new(omega, 0.0);
    let k_end = omega / c.values[n - 1];
    main[n - 1] = Complex64::new(-1.0, k_end * dx);
    sub[n - 1] = one;
    Ok(BandedSystem { sub, main, sup, rhs })
}

/// Tridiagonal elimination with row interchanges (the `gtsv` scheme): each
/// step pivots between the current row and the next, so one extra
/// superdiagonal of fill is tracked.
pub fn solve_banded(sys: &BandedSystem) -> Result<Vec<Complex64>> {
    let n = sys.len();
    if n == 0 || sys.sub.len() != n || sys.sup.len() != n || sys.rhs.len() != n {
        return Err(Error::invalid("banded system diagonals and rhs must share one length"));
    }
    let zero = Complex64::new(0.0, 0.0);
    // row i of the upper factor: d[i] u_i + du[i] u_{i+1} + du2[i] u_{i+2}
    let mut d = sys.main.clone();
    let mut du = sys.sup.clone();
    let mut dl: Vec<Complex64> = (0..n).map(|i| if i + 1 < n { sys.sub[i + 1] } else { zero }).collect();
    let mut du2 = vec![zero; n];
    let mut b = sys.rhs.clone();

    for i in 0..n.saturating_sub(1) {
        if d[i].norm() >= dl[i].norm() {
            if d[i].norm() < PIVOT_FLOOR {
                return Err(Error::SingularSystem { row: i, pivot: d[i].norm() });
            }
            let f = dl[i] / d[i];
            d[i + 1] -= f * du[i];
            b[i + 1] = b[i + 1] - f * b[i];
            dl[i] = zero;
        } else {
            let f = d[i] / dl[i];
            d[i] = dl[i];
            let tmp = d[i + 1];
            d[i + 1] = du[i] - f * tmp;
            du[i] = tmp;
            if i + 2 < n {
                du2[i] = du[i + 1];
                du[i + 1] = -f * du[i + 1];
            }
            b.swap(i, i + 1);
            b[i + 1] = b[i + 1] - f * b[i];
        }
    }
    if d[n - 1].norm() < PIVOT_FLOOR {
        return Err(Error::SingularSystem { row: n - 1, pivot: d[n - 1].norm() });
    }
    let mut x = vec![zero; n];
    for i in (0..n).rev() {
        let mut acc = b[i];
        if i + 1 < n {
            acc -= du[i] * x[i + 1];
        }
        if i + 2 < n {
            acc -= du2[i] * x[i + 2];
        }
        x[i] = acc / d[i];
    }
    Ok(x)
}

/// Assemble, solve, and verify the residual of the 1D problem at `frequency_hz`.
pub fn solve_helmholtz_1d(c: &CoefficientField, frequency_hz: f64) -> Result<Wavefield1D> {
    solve_helmholtz_1d_omega(c, angular(frequency_hz))
}

pub fn solve_helmholtz_1d_omega(c: &CoefficientField, omega: f64) -> Result<Wavefield1D> {
    let sys = assemble_1d(c, omega)?;
    let values = solve_banded(&sys)?;
    let res = sys.relative_residual(&values);
    if !(res <= RESIDUAL_TOL) || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem { row: 0, pivot: res });
    }
    Ok(Wavefield1D { values, omega, dx: c.dx })
}

/// Closed-form solution of the assembled constant-speed problem:
/// `omega * exp(i k x)` satisfies the Dirichlet row and `u' = i k u` at `x = L`.
pub fn plane_wave_1d(n: usize, dx: f64, omega: f64, c: f64) -> Vec<Complex64> {
    let k = omega / c;
    (0..n).map(|j| Complex64::from_polar(omega, k * j as f64 * dx)).collect()
}
