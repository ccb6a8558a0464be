//! Observation datasets: pairs `(x, y)` with `x` a real vector of one
//! shared dimension and `y` a real scalar.

use crate::error::{Error, Result};

/// An ordered, nonempty collection of observations with uniform regressor
/// dimension and finite entries. Regressors are stored flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    xs: Vec<f64>,
    dim: usize,
    ys: Vec<f64>,
}

impl Dataset {
    pub fn new(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Empty { what: "dataset" });
        }
        let dim = xs[0].len();
        if dim == 0 {
            return Err(Error::Empty {
                what: "regressor vector",
            });
        }
        let mut flat = Vec::with_capacity(xs.len() * dim);
        for (index, row) in xs.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteData { what: "x", index });
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(flat, dim, ys)
    }

    /// Build from flattened row-major regressors.
    pub fn from_flat(xs: Vec<f64>, dim: usize, ys: Vec<f64>) -> Result<Self> {
        if dim == 0 || ys.is_empty() {
            return Err(Error::Empty { what: "dataset" });
        }
        if xs.len() != ys.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ys.len() * dim,
                got: xs.len(),
            });
        }
        for (index, &v) in xs.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteData {
                    what: "x",
                    index: index / dim,
                });
            }
        }
        for (index, &v) in ys.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteData { what: "y", index });
            }
        }
        Ok(Self { xs, dim, ys })
    }

    /// Convenience constructor for scalar regressors.
    pub fn from_scalar(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        Self::from_flat(xs, 1, ys)
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        false // nonempty by construction
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        (0..self.len()).map(move |i| (self.x(i), self.y(i)))
    }
}
