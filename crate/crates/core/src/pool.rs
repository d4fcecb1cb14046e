//! Rubin's rules for basis coefficients and scalar estimates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::model::{quad_form_rows, FitRecord, TermBasis, TermEstimate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledCoefficient {
    pub label: String,
    pub basis: TermBasis,
    /// Mean of the per-imputation coefficient vectors.
    pub mean: Vec<f64>,
    /// Mean within-imputation covariance.
    pub within: Vec<Vec<f64>>,
    /// Between-imputation covariance (zero when `m == 1`).
    pub between: Vec<Vec<f64>>,
    pub m: usize,
}

fn to_rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let k = rows.len();
    DMatrix::from_fn(k, k, |a, b| rows[a][b])
}

impl PooledCoefficient {
    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }

    pub fn within_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.within)
    }

    pub fn between_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.between)
    }

    /// `W + (1 + 1/M) B`.
    pub fn total_matrix(&self) -> DMatrix<f64> {
        self.within_matrix() + self.between_matrix() * (1.0 + 1.0 / self.m as f64)
    }
}

/// Pools one term across fits. All estimates must share the same basis.
pub fn pool_functional(estimates: &[&TermEstimate]) -> Result<PooledCoefficient> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::InsufficientData("pooling needs at least one fit".into()))?;
    let k = first.coefficients.len();
    for e in estimates {
        if e.basis != first.basis || e.coefficients.len() != k || e.label != first.label {
            return Err(Error::Incompatible(format!(
                "term `{}` differs in basis or label across fits",
                first.label
            )));
        }
    }
    let m = estimates.len();
    let mf = m as f64;
    let coefs: Vec<DVector<f64>> = estimates.iter().map(|e| e.coefficient_vector()).collect();
    let mean = coefs.iter().fold(DVector::zeros(k), |acc, b| acc + b) / mf;
    let within = estimates
        .iter()
        .fold(DMatrix::zeros(k, k), |acc, e| acc + e.covariance_matrix())
        / mf;
    let mut between = DMatrix::zeros(k, k);
    if m > 1 {
        for b in &coefs {
            let d = b - &mean;
            between += &d * d.transpose();
        }
        between /= mf - 1.0;
    }
    Ok(PooledCoefficient {
        label: first.label.clone(),
        basis: first.basis.clone(),
        mean: mean.iter().copied().collect(),
        within: to_rows(&within),
        between: to_rows(&between),
        m,
    })
}

/// Pools every term present in the first record.
pub fn pool_records(records: &[FitRecord]) -> Result<Vec<PooledCoefficient>> {
    let first = records
        .first()
        .ok_or_else(|| Error::InsufficientData("pooling needs at least one fit".into()))?;
    for r in records {
        if r.model != first.model || r.response != first.response || r.terms.len() != first.terms.len() {
            return Err(Error::Incompatible("fits come from different models".into()));
        }
    }
    first
        .terms
        .iter()
        .map(|t| {
            let ests: Vec<&TermEstimate> = records.iter().map(|r| r.term(&t.label)).collect::<Result<_>>()?;
            pool_functional(&ests)
        })
        .collect()
}

/// Critical value for the band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantile {
    #[default]
    Normal,
    /// Student t with Rubin's degrees of freedom, pointwise.
    Rubin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub within_var: Vec<f64>,
    pub between_var: Vec<f64>,
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            point: level,
            lo: 0.0,
            hi: 1.0,
        })
    }
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Rubin's degrees of freedom; infinite when there is no between variance.
pub fn rubin_df(within: f64, between: f64, m: usize) -> f64 {
    let r = (1.0 + 1.0 / m as f64) * between;
    if m < 2 || r <= 0.0 {
        return f64::INFINITY;
    }
    (m as f64 - 1.0) * (1.0 + within / r).powi(2)
}

fn critical(level: f64, quantile: Quantile, within: f64, between: f64, m: usize) -> f64 {
    let p = 0.5 + level / 2.0;
    match quantile {
        Quantile::Normal => normal_quantile(p),
        Quantile::Rubin => {
            let df = rubin_df(within, between, m);
            if df.is_finite() {
                StudentsT::new(0.0, 1.0, df)
                    .map(|t| t.inverse_cdf(p))
                    .unwrap_or_else(|_| normal_quantile(p))
            } else {
                normal_quantile(p)
            }
        }
    }
}

/// Pointwise band at the rows of `design` (one row per evaluation point).
pub fn pooled_band_at(
    pooled: &PooledCoefficient,
    design: &DMatrix<f64>,
    level: f64,
    quantile: Quantile,
) -> Result<Band> {
    check_level(level)?;
    if design.ncols() != pooled.mean.len() {
        return Err(Error::Dimension(format!(
            "design has {} columns for {} coefficients",
            design.ncols(),
            pooled.mean.len()
        )));
    }
    let estimate: Vec<f64> = (design * pooled.mean_vector()).iter().copied().collect();
    let within_var: Vec<f64> = quad_form_rows(design, &pooled.within_matrix())
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let between_var: Vec<f64> = quad_form_rows(design, &pooled.between_matrix())
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let inflate = 1.0 + 1.0 / pooled.m as f64;
    let n = estimate.len();
    let (mut se, mut lower, mut upper) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for g in 0..n {
        let s = (within_var[g] + inflate * between_var[g]).sqrt();
        let c = critical(level, quantile, within_var[g], between_var[g], pooled.m);
        se.push(s);
        lower.push(estimate[g] - c * s);
        upper.push(estimate[g] + c * s);
    }
    Ok(Band {
        estimate,
        se,
        lower,
        upper,
        within_var,
        between_var,
    })
}

/// Band for a curve term at arbitrary points in its domain.
pub fn pooled_band(pooled: &PooledCoefficient, points: &[f64], level: f64) -> Result<Band> {
    pooled_band_at(pooled, &pooled.basis.design_at(points)?, level, Quantile::Normal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarPool {
    pub estimate: f64,
    pub total_var: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Classical Rubin's rules with a normal-quantile interval.
pub fn pool_scalar(estimates: &[f64], variances: &[f64], level: f64) -> Result<ScalarPool> {
    check_level(level)?;
    if estimates.is_empty() || estimates.len() != variances.len() {
        return Err(Error::Dimension(format!(
            "{} estimates and {} variances",
            estimates.len(),
            variances.len()
        )));
    }
    if variances.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Data("variances must be finite and nonnegative".into()));
    }
    let m = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    let w = variances.iter().sum::<f64>() / m;
    let b = if estimates.len() > 1 {
        estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let total_var = w + (1.0 + 1.0 / m) * b;
    let c = normal_quantile(0.5 + level / 2.0);
    Ok(ScalarPool {
        estimate: mean,
        total_var,
        lower: mean - c * total_var.sqrt(),
        upper: mean + c * total_var.sqrt(),
    })
}
