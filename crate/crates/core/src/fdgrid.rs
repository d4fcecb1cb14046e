//! Evaluation grids, quadrature weights and the curve container.
//!
//! Every functional column in a dataset lives on one shared [`Grid`]. Integrals
//! over the domain are approximated by a weighted sum of grid values; the
//! default weights are the trapezoid rule, which is exact for affine functions.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing, finite evaluation points shared by a set of curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid {
    points: Arc<[f64]>,
}

impl Grid {
    pub const MIN_POINTS: usize = 4;

    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < Self::MIN_POINTS {
            return Err(Error::InvalidGrid(format!(
                "need at least {} points, got {}",
                Self::MIN_POINTS,
                points.len()
            )));
        }
        check_increasing(&points)?;
        Ok(Self {
            points: points.into(),
        })
    }

    /// `count` equally spaced points from `start` to `end` inclusive.
    pub fn uniform(start: f64, end: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::InvalidGrid("uniform grid needs 2+ points".into()));
        }
        let step = (end - start) / (count - 1) as f64;
        let mut points: Vec<f64> = (0..count).map(|g| start + step * g as f64).collect();
        // pin the right endpoint exactly
        points[count - 1] = end;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn weights(&self) -> Vec<f64> {
        // a valid grid always has >= 4 points
        quadrature_weights(&self.points).expect("grid invariant")
    }

    pub fn weights_with(&self, rule: QuadratureRule) -> Vec<f64> {
        quadrature_weights_with(&self.points, rule).expect("grid invariant")
    }
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        Grid::new(points)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(grid: Grid) -> Self {
        grid.points.to_vec()
    }
}

fn check_increasing(points: &[f64]) -> Result<()> {
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidGrid("grid points must be finite".into()));
    }
    if points.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(
            "grid points must be strictly increasing".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadratureRule {
    #[default]
    Trapezoid,
    /// Each point carries the length of the interval that follows it; the last
    /// point carries the preceding interval.
    Rectangle,
}

/// Trapezoidal weights for an increasing point set.
pub fn quadrature_weights(points: &[f64]) -> Result<Vec<f64>> {
    quadrature_weights_with(points, QuadratureRule::Trapezoid)
}

pub fn quadrature_weights_with(points: &[f64], rule: QuadratureRule) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::InvalidGrid(format!(
            "quadrature needs at least 2 points, got {}",
            points.len()
        )));
    }
    check_increasing(points)?;
    let n = points.len();
    let gaps: Vec<f64> = points.windows(2).map(|w| w[1] - w[0]).collect();
    let weights = match rule {
        QuadratureRule::Trapezoid => (0..n)
            .map(|d| {
                let left = if d > 0 { gaps[d - 1] } else { 0.0 };
                let right = if d < n - 1 { gaps[d] } else { 0.0 };
                0.5 * (left + right)
            })
            .collect(),
        QuadratureRule::Rectangle => (0..n).map(|d| gaps[d.min(n - 2)]).collect(),
    };
    Ok(weights)
}

/// Weighted sum `sum_d weights[d] * values[d]`.
pub fn integrate(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "integrand has {} values but {} weights",
            values.len(),
            weights.len()
        )));
    }
    Ok(values.iter().zip(weights).map(|(v, w)| v * w).sum())
}

/// Quadrature inner product of two curves on the same grid.
pub fn inner_product(a: &[f64], b: &[f64], weights: &[f64]) -> f64 {
    a.iter().zip(b).zip(weights).map(|((x, y), w)| x * y * w).sum()
}

/// One curve observed on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    grid: Grid,
    values: Vec<f64>,
}

impl FunctionalSample {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "curve has {} values on a {}-point grid",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("curve values must be finite".into()));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn integrate(&self, weights: &[f64]) -> Result<f64> {
        integrate(&self.values, weights)
    }
}
