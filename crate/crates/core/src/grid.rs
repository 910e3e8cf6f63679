use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a uniform grid. 2D grids are stored row-major (`rows` is the
/// slow axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    D1(usize),
    D2 { rows: usize, cols: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::D1(n) => n,
            Shape::D2 { rows, cols } => rows * cols,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ndim(&self) -> usize {
        match self {
            Shape::D1(_) => 1,
            Shape::D2 { .. } => 2,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::D1(n) => vec![n],
            Shape::D2 { rows, cols } => vec![rows, cols],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().iter().any(|&d| d < 2) {
            return Err(Error::invalid(format!("grid {self:?} needs at least 2 points per axis")));
        }
        Ok(())
    }
}

/// Sound-speed map on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    pub values: Vec<f64>,
    pub shape: Shape,
    pub dx: f64,
    pub seed: u64,
}

impl CoefficientField {
    pub fn new(values: Vec<f64>, shape: Shape, dx: f64) -> Result<Self> {
        shape.validate()?;
        if values.len() != shape.len() {
            return Err(Error::invalid(format!(
                "{} values for grid of {} points",
                values.len(),
                shape.len()
            )));
        }
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::invalid(format!("grid spacing {dx} must be positive")));
        }
        Ok(Self { values, shape, dx, seed: 0 })
    }

    pub fn constant(c: f64, shape: Shape, dx: f64) -> Result<Self> {
        Self::new(vec![c; shape.len()], shape, dx)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `(1 - s) * self + s * other`, the homotopy point between two media.
    pub fn lerp(&self, other: &Self, s: f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::invalid("homotopy endpoints differ in shape"));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (1.0 - s) * a + s * b)
            .collect();
        Ok(Self { values, shape: self.shape, dx: self.dx, seed: self.seed })
    }

    /// Mirror image `c(L - x)` (1D only).
    pub fn reversed(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self { values, ..self.clone() }
    }
}
