//! Scalar response regression on scalar and functional predictors.
//!
//! Each functional predictor is replaced by its truncated principal component
//! expansion, so `int X_ij(t) beta_j(t) dt` becomes `c_ij' G_j b_j` with
//! `G_j[u, v] = int psi_u(t) phi_v(t) dt`. Coefficient functions are penalized
//! cubic B-splines. Gaussian (identity) and Bernoulli (logit) responses.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BSplineBasis, BasisConfig};
use crate::dataset::{ColumnKind, MixedDataset};
use crate::error::{Error, Result};
use crate::fpca::{fit_fpca, FpcaDecomposition};
use crate::frm::INTERCEPT;
use crate::model::{FitRecord, ModelKind, TermBasis, TermEstimate};
use crate::penreg::{fit_bernoulli, fit_gaussian, DesignBlock, Family, PenalizedFit, Smoothing};

fn default_true() -> bool {
    true
}

fn default_basis() -> BasisConfig {
    BasisConfig::cubic(30)
}

fn default_pve() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrmSpec {
    pub response: String,
    #[serde(default)]
    pub scalar_terms: Vec<String>,
    #[serde(default)]
    pub functional_terms: Vec<String>,
    #[serde(default)]
    pub family: Family,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default = "default_basis")]
    pub basis: BasisConfig,
    #[serde(default = "default_pve")]
    pub pve: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_lambda: Option<f64>,
}

impl SrmSpec {
    pub fn new(response: &str, scalar_terms: &[&str], functional_terms: &[&str], family: Family) -> Self {
        Self {
            response: response.to_string(),
            scalar_terms: scalar_terms.iter().map(|s| s.to_string()).collect(),
            functional_terms: functional_terms.iter().map(|s| s.to_string()).collect(),
            family,
            intercept: true,
            basis: default_basis(),
            pve: default_pve(),
            fixed_lambda: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn variables(&self) -> Vec<&str> {
        std::iter::once(self.response.as_str())
            .chain(self.scalar_terms.iter().map(String::as_str))
            .chain(self.functional_terms.iter().map(String::as_str))
            .collect()
    }

    pub fn predictors(&self) -> Vec<&str> {
        self.variables()[1..].to_vec()
    }

    pub fn validate(&self, data: &MixedDataset) -> Result<()> {
        let response = data.column(&self.response)?;
        match (&response.kind, self.family) {
            (ColumnKind::Functional(_), _) => {
                return Err(Error::Spec(format!(
                    "response `{}` must be scalar",
                    self.response
                )))
            }
            (ColumnKind::Continuous, Family::Bernoulli) => {
                let vals = response.scalars().expect("scalar");
                if vals
                    .iter()
                    .zip(&response.observed)
                    .any(|(v, o)| *o && *v != 0.0 && *v != 1.0)
                {
                    return Err(Error::Spec(format!(
                        "Bernoulli family needs a 0/1 response, `{}` is continuous",
                        self.response
                    )));
                }
            }
            _ => {}
        }
        let mut seen = HashSet::new();
        for v in self.variables() {
            if !seen.insert(v) {
                return Err(Error::Spec(format!("variable `{v}` appears twice in the model")));
            }
            if v == INTERCEPT {
                return Err(Error::Spec(format!("`{INTERCEPT}` is reserved")));
            }
        }
        for v in &self.scalar_terms {
            if data.column(v)?.kind.is_functional() {
                return Err(Error::Spec(format!("scalar term `{v}` is functional")));
            }
        }
        for v in &self.functional_terms {
            if !data.column(v)?.kind.is_functional() {
                return Err(Error::Spec(format!("functional term `{v}` is scalar")));
            }
        }
        if !(self.pve > 0.0 && self.pve <= 1.0) {
            return Err(Error::Spec(format!("pve must lie in (0, 1], got {}", self.pve)));
        }
        if let Some(l) = self.fixed_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Spec("fixed_lambda must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct FunctionalPart {
    variable: String,
    fpca: FpcaDecomposition,
    basis: BSplineBasis,
    /// `G` (K x L).
    g: DMatrix<f64>,
    /// `int mu(t) phi(t) dt`, the mean curve's contribution.
    mean_projection: DVector<f64>,
    /// Training column means subtracted when an intercept is present.
    center: DVector<f64>,
}

impl FunctionalPart {
    fn design(&self, curves: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let scores = self.fpca.project_scores(curves)?;
        let mut x = scores * &self.g;
        for mut row in x.row_iter_mut() {
            row += self.mean_projection.transpose();
            row -= self.center.transpose();
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
pub struct SrmFit {
    spec: SrmSpec,
    parts: Vec<FunctionalPart>,
    dropped: Vec<String>,
    fit: PenalizedFit,
}

/// Fits the model; every model variable must be observed in every row.
pub fn fit_srm(data: &MixedDataset, spec: &SrmSpec) -> Result<SrmFit> {
    spec.validate(data)?;
    data.require_observed(&spec.variables())?;
    let n = data.n_rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} rows")));
    }
    let smoothing = spec.fixed_lambda.map_or(Smoothing::Reml, Smoothing::Fixed);
    let mut blocks = Vec::new();
    if spec.intercept {
        blocks.push(DesignBlock::unpenalized(
            INTERCEPT,
            DMatrix::from_element(n, 1, 1.0),
        ));
    }
    for v in &spec.scalar_terms {
        blocks.push(DesignBlock::unpenalized(
            v.clone(),
            DMatrix::from_column_slice(n, 1, data.scalar(v)?),
        ));
    }
    let mut parts = Vec::new();
    let mut dropped = Vec::new();
    for v in &spec.functional_terms {
        let grid = data.grid(v)?;
        let curves = data.curves(v)?;
        let fpca = fit_fpca(curves, grid, spec.pve)?;
        if fpca.n_components() == 0 {
            dropped.push(v.clone());
            continue;
        }
        let basis = spec.basis.build(grid.start(), grid.end())?;
        let phi = basis.eval(grid.points())?;
        let w = fpca.weights();
        let psi_w = DMatrix::from_fn(fpca.n_components(), grid.len(), |k, d| {
            fpca.eigenfunctions()[k][d] * w[d]
        });
        let g = &psi_w * &phi;
        let mean_w = DVector::from_iterator(grid.len(), fpca.mean().iter().zip(w).map(|(m, wd)| m * wd));
        let mean_projection = phi.tr_mul(&mean_w);
        let mut part = FunctionalPart {
            variable: v.clone(),
            fpca,
            basis,
            g,
            mean_projection,
            center: DVector::zeros(spec.basis.size),
        };
        let raw = part.design(curves)?;
        if spec.intercept {
            part.center = raw.row_mean().transpose();
        }
        let x = part.design(curves)?;
        blocks.push(DesignBlock::penalized(
            v.clone(),
            x,
            part.basis.penalty_matrix(),
            smoothing,
        ));
        parts.push(part);
    }
    if blocks.is_empty() {
        return Err(Error::Spec("model has no usable terms".into()));
    }
    let y = data.scalar(&spec.response)?;
    let fit = match spec.family {
        Family::Gaussian => fit_gaussian(y, &blocks)?,
        Family::Bernoulli => fit_bernoulli(y, &blocks)?,
    };
    Ok(SrmFit {
        spec: spec.clone(),
        parts,
        dropped,
        fit,
    })
}

impl SrmFit {
    pub fn spec(&self) -> &SrmSpec {
        &self.spec
    }

    pub fn penalized_fit(&self) -> &PenalizedFit {
        &self.fit
    }

    /// Functional terms removed because their curves had no variation.
    pub fn dropped_terms(&self) -> &[String] {
        &self.dropped
    }

    pub fn fpca(&self, variable: &str) -> Option<&FpcaDecomposition> {
        self.parts
            .iter()
            .find(|p| p.variable == variable)
            .map(|p| &p.fpca)
    }

    /// Scalar coefficient (intercept or scalar term).
    pub fn scalar_coefficient(&self, label: &str) -> Result<(f64, f64)> {
        if self.parts.iter().any(|p| p.variable == label) {
            return Err(Error::Spec(format!("`{label}` is a functional term")));
        }
        let b = self.fit.block_coefficients(label)?;
        let v = self.fit.block_covariance(label)?;
        Ok((b[0], v[(0, 0)]))
    }

    pub fn linear_predictor(&self, data: &MixedDataset) -> Result<Vec<f64>> {
        let n = data.n_rows();
        for v in self.spec.predictors() {
            let col = data.column(v)?;
            if let Some(i) = col.observed.iter().position(|o| !o) {
                return Err(Error::IncompleteData(format!(
                    "predictor `{v}` is missing in row {i}"
                )));
            }
        }
        let mut eta = DVector::zeros(n);
        if self.spec.intercept {
            eta.add_scalar_mut(self.fit.block_coefficients(INTERCEPT)?[0]);
        }
        for v in &self.spec.scalar_terms {
            let theta = self.fit.block_coefficients(v)?[0];
            for (e, z) in eta.iter_mut().zip(data.scalar(v)?) {
                *e += theta * z;
            }
        }
        for part in &self.parts {
            if data.grid(&part.variable)? != part.fpca.grid() {
                return Err(Error::Spec(format!(
                    "grid of `{}` differs from the fitted grid",
                    part.variable
                )));
            }
            let x = part.design(data.curves(&part.variable)?)?;
            eta += x * self.fit.block_coefficients(&part.variable)?;
        }
        Ok(eta.iter().copied().collect())
    }

    /// Fitted means on the response scale.
    pub fn predict(&self, data: &MixedDataset) -> Result<Vec<f64>> {
        let eta = self.linear_predictor(data)?;
        Ok(match self.spec.family {
            Family::Gaussian => eta,
            Family::Bernoulli => eta.into_iter().map(|e| 1.0 / (1.0 + (-e).exp())).collect(),
        })
    }

    pub fn term_estimates(&self) -> Result<Vec<TermEstimate>> {
        self.fit
            .blocks
            .iter()
            .map(|b| {
                let basis = match self.parts.iter().find(|p| p.variable == b.label) {
                    Some(p) => TermBasis::curve(&p.basis, p.fpca.grid()),
                    None => TermBasis::Scalar,
                };
                TermEstimate::from_fit(&self.fit, &b.label, basis)
            })
            .collect()
    }

    /// Estimate and pointwise standard error of a coefficient function.
    pub fn coefficient_function(&self, variable: &str, points: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let part = self
            .parts
            .iter()
            .find(|p| p.variable == variable)
            .ok_or_else(|| Error::UnknownTerm(variable.to_string()))?;
        let est = TermEstimate::from_fit(
            &self.fit,
            variable,
            TermBasis::curve(&part.basis, part.fpca.grid()),
        )?;
        est.evaluate(&part.basis.eval(points)?)
    }

    pub fn to_record(&self) -> Result<FitRecord> {
        Ok(FitRecord {
            model: ModelKind::Srm,
            response: self.spec.response.clone(),
            terms: self.term_estimates()?,
            summary: self.fit.summary(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdgrid::Grid;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::uniform(0.0, 10.0, 51).unwrap()
    }

    fn curves(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let g = grid();
        (0..n)
            .map(|_| {
                let c: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
                g.points()
                    .iter()
                    .map(|&t| {
                        c[0] + c[1] * (PI * t / 10.0).sin()
                            + c[2] * (PI * t / 5.0).sin()
                            + 0.5 * c[3] * (PI * t / 5.0).cos()
                    })
                    .collect()
            })
            .collect()
    }

    fn dataset(n: usize, seed: u64, signal: bool, noise: f64) -> MixedDataset {
        let g = grid();
        let w = g.weights();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let x = curves(n, &mut rng);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let integral: f64 = if signal {
                    x[i].iter()
                        .zip(g.points())
                        .zip(&w)
                        .map(|((xv, t), wd)| xv * (PI * t / 5.0).sin() * wd)
                        .sum()
                } else {
                    0.0
                };
                0.5 + z[i] + integral + noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let mut d = MixedDataset::new(n);
        d.push_complete_scalar("y", ColumnKind::Continuous, y).unwrap();
        d.push_complete_scalar("z", ColumnKind::Continuous, z).unwrap();
        d.push_complete_functional("X", g, x).unwrap();
        d
    }

    #[test]
    fn exact_linear_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z: Vec<f64> = (0..30).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = z.iter().map(|v| 2.0 * v).collect();
        let mut d = MixedDataset::new(30);
        d.push_complete_scalar("y", ColumnKind::Continuous, y).unwrap();
        d.push_complete_scalar("z", ColumnKind::Continuous, z).unwrap();
        let fit = fit_srm(&d, &SrmSpec::new("y", &["z"], &[], Family::Gaussian)).unwrap();
        assert_abs_diff_eq!(fit.scalar_coefficient("z").unwrap().0, 2.0, epsilon = 1e-8);
    }

    #[test]
    fn constant_curves_are_dropped() {
        let mut d = dataset(40, 2, false, 0.3);
        d.push_complete_functional("C", grid(), vec![vec![1.0; 51]; 40])
            .unwrap();
        let with = fit_srm(&d, &SrmSpec::new("y", &["z"], &["C"], Family::Gaussian)).unwrap();
        let without = fit_srm(&d, &SrmSpec::new("y", &["z"], &[], Family::Gaussian)).unwrap();
        assert_eq!(with.dropped_terms(), ["C".to_string()]);
        assert_abs_diff_eq!(
            with.scalar_coefficient("z").unwrap().0,
            without.scalar_coefficient("z").unwrap().0,
            epsilon = 1e-6
        );
    }

    #[test]
    fn gaussian_residuals_have_zero_mean() {
        let d = dataset(80, 3, true, 0.3);
        let fit = fit_srm(&d, &SrmSpec::new("y", &["z"], &["X"], Family::Gaussian)).unwrap();
        let mu = fit.predict(&d).unwrap();
        let y = d.scalar("y").unwrap();
        let mean: f64 = y.iter().zip(&mu).map(|(a, b)| a - b).sum::<f64>() / 80.0;
        assert!(mean.abs() < 1e-8, "mean residual {mean}");
        assert!((fit.scalar_coefficient("z").unwrap().0 - 1.0).abs() < 0.1);
    }

    #[test]
    fn scalar_shift_changes_linear_predictor_by_theta() {
        let d = dataset(60, 4, true, 0.3);
        let fit = fit_srm(&d, &SrmSpec::new("y", &["z"], &["X"], Family::Gaussian)).unwrap();
        let eta = fit.linear_predictor(&d).unwrap();
        let mut moved = d.clone();
        let zi = moved.index_of("z").unwrap();
        for i in 0..60 {
            let v = d.scalar("z").unwrap()[i];
            moved.fill_scalar(zi, i, v + 0.7);
        }
        let eta2 = fit.linear_predictor(&moved).unwrap();
        let theta = fit.scalar_coefficient("z").unwrap().0;
        for i in 0..60 {
            assert_abs_diff_eq!(eta2[i] - eta[i], 0.7 * theta, epsilon = 1e-10);
        }
    }

    #[test]
    fn bernoulli_predictions_are_probabilities() {
        let d = dataset(150, 5, true, 2.0);
        let y: Vec<f64> = d
            .scalar("y")
            .unwrap()
            .iter()
            .map(|v| f64::from(*v > 0.5))
            .collect();
        let mut b = d.clone();
        b.push_complete_scalar("yb", ColumnKind::Binary, y).unwrap();
        let fit = fit_srm(&b, &SrmSpec::new("yb", &["z"], &["X"], Family::Bernoulli)).unwrap();
        let p = fit.predict(&b).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(fit.scalar_coefficient("z").unwrap().0 > 0.0);
        assert!(fit_srm(&d, &SrmSpec::new("y", &["z"], &[], Family::Bernoulli)).is_err());
    }

    #[test]
    fn functional_term_order_is_irrelevant() {
        let mut d = dataset(70, 6, true, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        d.push_complete_functional("W", grid(), curves(70, &mut rng))
            .unwrap();
        let a = fit_srm(&d, &SrmSpec::new("y", &["z"], &["X", "W"], Family::Gaussian)).unwrap();
        let b = fit_srm(&d, &SrmSpec::new("y", &["z"], &["W", "X"], Family::Gaussian)).unwrap();
        for label in ["X", "W", "z", INTERCEPT] {
            let ca = a.penalized_fit().block_coefficients(label).unwrap();
            let cb = b.penalized_fit().block_coefficients(label).unwrap();
            let scale = ca.abs().max().max(1.0);
            assert!((ca - cb).abs().max() < 1e-6 * scale, "{label}");
        }
    }

    #[test]
    fn signal_curves_give_larger_coefficient_norm() {
        let w = grid().weights();
        let pts = grid().points().to_vec();
        let mut noise_norm = 0.0;
        let mut signal_norm = 0.0;
        for seed in 0..50 {
            for (signal, acc) in [(false, &mut noise_norm), (true, &mut signal_norm)] {
                let d = dataset(100, 1000 + seed, signal, 0.5);
                let fit = fit_srm(&d, &SrmSpec::new("y", &["z"], &["X"], Family::Gaussian)).unwrap();
                let (b, _) = fit.coefficient_function("X", &pts).unwrap();
                *acc += b.iter().zip(&w).map(|(v, wd)| v * v * wd).sum::<f64>() / 50.0;
            }
        }
        assert!(
            noise_norm < signal_norm,
            "noise {noise_norm} signal {signal_norm}"
        );
    }

    #[test]
    fn record_and_spec_json() {
        let spec = SrmSpec::from_json(
            r#"{"response": "y", "scalar_terms": ["z"], "functional_terms": ["X"], "family": "gaussian"}"#,
        )
        .unwrap();
        assert_eq!(spec.basis.size, 30);
        assert_eq!(spec.pve, 0.99);
        let d = dataset(50, 7, true, 0.3);
        let rec = fit_srm(&d, &spec).unwrap().to_record().unwrap();
        assert_eq!(rec.terms.len(), 3);
        assert_eq!(rec.term("X").unwrap().coefficients.len(), 30);
        assert_eq!(rec.term("z").unwrap().basis, TermBasis::Scalar);
    }
}
