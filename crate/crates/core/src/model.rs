//! Serializable per-term estimates shared by the functional- and
//! scalar-response models, the pooling step and the command-line tools.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BSplineBasis, BasisDescriptor, TensorBasis};
use crate::error::{Error, Result};
use crate::fdgrid::Grid;
use crate::penreg::{FitSummary, PenalizedFit};

/// How a term's coefficients map to a coefficient value, curve or surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TermBasis {
    /// A single scalar coefficient.
    Scalar,
    /// `beta(t) = B(t)' b`, reported on `grid` by default.
    Curve { basis: BasisDescriptor, grid: Grid },
    /// `rho(s, t) = (Bs(s) (x) Bt(t))' b`, reported on `s_grid x t_grid`.
    Surface {
        s: BasisDescriptor,
        t: BasisDescriptor,
        s_grid: Grid,
        t_grid: Grid,
    },
}

impl TermBasis {
    pub fn curve(basis: &BSplineBasis, grid: &Grid) -> Self {
        TermBasis::Curve {
            basis: basis.descriptor(),
            grid: grid.clone(),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            TermBasis::Scalar => 1,
            TermBasis::Curve { basis, .. } => basis.size,
            TermBasis::Surface { s, t, .. } => s.size * t.size,
        }
    }

    /// Evaluation matrix at the default reporting points (one row per point;
    /// surfaces list s-major pairs).
    pub fn default_design(&self) -> Result<DMatrix<f64>> {
        match self {
            TermBasis::Scalar => Ok(DMatrix::from_element(1, 1, 1.0)),
            TermBasis::Curve { basis, grid } => BSplineBasis::from_descriptor(basis)?.eval(grid.points()),
            TermBasis::Surface { s, t, s_grid, t_grid } => {
                let tb = TensorBasis::new(
                    BSplineBasis::from_descriptor(s)?,
                    BSplineBasis::from_descriptor(t)?,
                );
                let (ss, ts) = surface_pairs(s_grid, t_grid);
                tb.eval_pairs(&ss, &ts)
            }
        }
    }

    /// Evaluation matrix of a curve term at arbitrary points.
    pub fn design_at(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        match self {
            TermBasis::Curve { basis, .. } => BSplineBasis::from_descriptor(basis)?.eval(points),
            TermBasis::Scalar => Ok(DMatrix::from_element(points.len(), 1, 1.0)),
            TermBasis::Surface { .. } => {
                Err(Error::Spec("surface terms are evaluated on (s, t) pairs".into()))
            }
        }
    }

    /// Default reporting abscissae (`t` for curves, empty for scalars,
    /// s-major flattened `t` values for surfaces).
    pub fn default_points(&self) -> Vec<f64> {
        match self {
            TermBasis::Scalar => Vec::new(),
            TermBasis::Curve { grid, .. } => grid.points().to_vec(),
            TermBasis::Surface { s_grid, t_grid, .. } => surface_pairs(s_grid, t_grid).1,
        }
    }
}

pub(crate) fn surface_pairs(s_grid: &Grid, t_grid: &Grid) -> (Vec<f64>, Vec<f64>) {
    let mut ss = Vec::with_capacity(s_grid.len() * t_grid.len());
    let mut ts = Vec::with_capacity(ss.capacity());
    for &s in s_grid.points() {
        for &t in t_grid.points() {
            ss.push(s);
            ts.push(t);
        }
    }
    (ss, ts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEstimate {
    pub label: String,
    pub basis: TermBasis,
    pub coefficients: Vec<f64>,
    /// Row-major posterior covariance block.
    pub covariance: Vec<Vec<f64>>,
}

impl TermEstimate {
    pub fn from_fit(fit: &PenalizedFit, label: &str, basis: TermBasis) -> Result<Self> {
        let coef = fit.block_coefficients(label)?;
        let cov = fit.block_covariance(label)?;
        if coef.len() != basis.size() {
            return Err(Error::Dimension(format!(
                "term `{label}` has {} coefficients but its basis has {}",
                coef.len(),
                basis.size()
            )));
        }
        Ok(Self {
            label: label.to_string(),
            basis,
            coefficients: coef.iter().copied().collect(),
            covariance: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        })
    }

    pub fn coefficient_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coefficients)
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let k = self.coefficients.len();
        DMatrix::from_fn(k, k, |a, b| self.covariance[a][b])
    }

    /// Estimate and pointwise standard error at the rows of `design`.
    pub fn evaluate(&self, design: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        if design.ncols() != self.coefficients.len() {
            return Err(Error::Dimension(format!(
                "design has {} columns for {} coefficients",
                design.ncols(),
                self.coefficients.len()
            )));
        }
        let est = design * self.coefficient_vector();
        let cov = self.covariance_matrix();
        let se = quad_form_rows(design, &cov);
        Ok((
            est.iter().copied().collect(),
            se.into_iter().map(|v| v.max(0.0).sqrt()).collect(),
        ))
    }

    /// Estimate and standard error on the term's default reporting points.
    pub fn evaluate_default(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        self.evaluate(&self.basis.default_design()?)
    }
}

/// `diag(X C X')` without forming the full product.
pub(crate) fn quad_form_rows(x: &DMatrix<f64>, c: &DMatrix<f64>) -> Vec<f64> {
    let xc = x * c;
    (0..x.nrows()).map(|r| xc.row(r).dot(&x.row(r))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Frm,
    Srm,
}

/// Portable fit record written by the `fit` command and read by `pool`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub model: ModelKind,
    pub response: String,
    pub terms: Vec<TermEstimate>,
    pub summary: FitSummary,
}

impl FitRecord {
    pub fn term(&self, label: &str) -> Result<&TermEstimate> {
        self.terms
            .iter()
            .find(|t| t.label == label)
            .ok_or_else(|| Error::UnknownTerm(label.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
