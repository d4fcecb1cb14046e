//! Functional response regression.
//!
//! `Y_i(t) = beta_0(t) + sum_j z_ij beta_j(t) + sum_k int X_ik(s) rho_k(s, t) ds + e_i(t)`
//! with working-independence Gaussian errors. Every coefficient function is a
//! penalized cubic B-spline in `t`; surfaces use a tensor-product basis.
//!
//! The stacked long-format design (subject-major, grid-minor) has Kronecker
//! structure `X_k = V_k (x) B_k`, so the normal equations are assembled from
//! small per-term products rather than from the `n G`-row design.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{ff_design_rows, BSplineBasis, BasisConfig, TensorBasis};
use crate::dataset::MixedDataset;
use crate::error::{Error, Result};
use crate::fdgrid::Grid;
use crate::model::{FitRecord, ModelKind, TermBasis, TermEstimate};
use crate::penreg::{
    fit_gaussian_normal, DesignBlock, NormalEquations, PenalizedFit, PenaltyBlock, Smoothing,
};

pub const INTERCEPT: &str = "intercept";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceBasisConfig {
    pub s: BasisConfig,
    pub t: BasisConfig,
}

impl Default for SurfaceBasisConfig {
    fn default() -> Self {
        Self {
            s: BasisConfig::cubic(8),
            t: BasisConfig::cubic(8),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_curve_basis() -> BasisConfig {
    BasisConfig::cubic(20)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrmSpec {
    pub response: String,
    #[serde(default)]
    pub scalar_terms: Vec<String>,
    #[serde(default)]
    pub ff_terms: Vec<String>,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default = "default_curve_basis")]
    pub basis: BasisConfig,
    #[serde(default)]
    pub ff_basis: SurfaceBasisConfig,
    /// Use this smoothing parameter for every term instead of REML.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_lambda: Option<f64>,
}

impl FrmSpec {
    pub fn new(response: &str, scalar_terms: &[&str], ff_terms: &[&str]) -> Self {
        Self {
            response: response.to_string(),
            scalar_terms: scalar_terms.iter().map(|s| s.to_string()).collect(),
            ff_terms: ff_terms.iter().map(|s| s.to_string()).collect(),
            intercept: true,
            basis: default_curve_basis(),
            ff_basis: SurfaceBasisConfig::default(),
            fixed_lambda: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Every variable the model reads.
    pub fn variables(&self) -> Vec<&str> {
        std::iter::once(self.response.as_str())
            .chain(self.scalar_terms.iter().map(String::as_str))
            .chain(self.ff_terms.iter().map(String::as_str))
            .collect()
    }

    pub fn predictors(&self) -> Vec<&str> {
        self.variables()[1..].to_vec()
    }

    pub fn validate(&self, data: &MixedDataset) -> Result<()> {
        if data.column(&self.response)?.kind.grid().is_none() {
            return Err(Error::Spec(format!(
                "response `{}` must be functional",
                self.response
            )));
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
        for v in &self.ff_terms {
            if !data.column(v)?.kind.is_functional() {
                return Err(Error::Spec(format!("functional term `{v}` is scalar")));
            }
        }
        if !self.intercept && self.scalar_terms.is_empty() && self.ff_terms.is_empty() {
            return Err(Error::Spec("model has no terms".into()));
        }
        if let Some(l) = self.fixed_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Spec("fixed_lambda must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TermSource {
    Intercept,
    Scalar(String),
    Surface(String),
}

#[derive(Debug, Clone)]
struct FrmTerm {
    label: String,
    source: TermSource,
    t_basis: BSplineBasis,
    surface: Option<SurfacePart>,
}

#[derive(Debug, Clone)]
struct SurfacePart {
    basis: TensorBasis,
    s_grid: Grid,
    s_weights: Vec<f64>,
    /// `Bs` evaluated on the predictor grid.
    s_eval: DMatrix<f64>,
}

impl FrmTerm {
    fn width(&self) -> usize {
        match &self.surface {
            Some(sp) => sp.basis.size(),
            None => self.t_basis.size(),
        }
    }

    /// Row factors `V` (n x q): 1, z_i, or the weighted projections of X_i.
    fn row_factors(&self, data: &MixedDataset) -> Result<DMatrix<f64>> {
        let n = data.n_rows();
        match (&self.source, &self.surface) {
            (TermSource::Intercept, _) => Ok(DMatrix::from_element(n, 1, 1.0)),
            (TermSource::Scalar(v), _) => Ok(DMatrix::from_column_slice(n, 1, data.scalar(v)?)),
            (TermSource::Surface(v), Some(sp)) => {
                let curves = data.curves(v)?;
                let g = sp.s_grid.len();
                if data.grid(v)? != &sp.s_grid {
                    return Err(Error::Spec(format!("grid of `{v}` differs from the fitted grid")));
                }
                let weighted = DMatrix::from_fn(n, g, |i, d| curves[i][d] * sp.s_weights[d]);
                Ok(weighted * &sp.s_eval)
            }
            (TermSource::Surface(_), None) => unreachable!("surface terms carry a tensor basis"),
        }
    }

    fn penalty(&self) -> DMatrix<f64> {
        match &self.surface {
            Some(sp) => sp.basis.penalty_matrix(),
            None => self.t_basis.penalty_matrix(),
        }
    }

    fn term_basis(&self, response_grid: &Grid) -> TermBasis {
        match &self.surface {
            Some(sp) => TermBasis::Surface {
                s: sp.basis.s.descriptor(),
                t: sp.basis.t.descriptor(),
                s_grid: sp.s_grid.clone(),
                t_grid: response_grid.clone(),
            },
            None => TermBasis::curve(&self.t_basis, response_grid),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrmFit {
    spec: FrmSpec,
    grid: Grid,
    terms: Vec<FrmTerm>,
    fit: PenalizedFit,
}

fn build_terms(data: &MixedDataset, spec: &FrmSpec, grid: &Grid) -> Result<Vec<FrmTerm>> {
    let (lo, hi) = (grid.start(), grid.end());
    let t_basis = spec.basis.build(lo, hi)?;
    let mut terms = Vec::new();
    if spec.intercept {
        terms.push(FrmTerm {
            label: INTERCEPT.to_string(),
            source: TermSource::Intercept,
            t_basis: t_basis.clone(),
            surface: None,
        });
    }
    for v in &spec.scalar_terms {
        terms.push(FrmTerm {
            label: v.clone(),
            source: TermSource::Scalar(v.clone()),
            t_basis: t_basis.clone(),
            surface: None,
        });
    }
    for v in &spec.ff_terms {
        let s_grid = data.grid(v)?.clone();
        let bs = spec.ff_basis.s.build(s_grid.start(), s_grid.end())?;
        let bt = spec.ff_basis.t.build(lo, hi)?;
        let s_eval = bs.eval(s_grid.points())?;
        terms.push(FrmTerm {
            label: v.clone(),
            source: TermSource::Surface(v.clone()),
            t_basis: bt.clone(),
            surface: Some(SurfacePart {
                basis: TensorBasis::new(bs, bt),
                s_weights: s_grid.weights(),
                s_grid,
                s_eval,
            }),
        });
    }
    Ok(terms)
}

fn smoothing(spec: &FrmSpec) -> Smoothing {
    spec.fixed_lambda.map_or(Smoothing::Reml, Smoothing::Fixed)
}

/// Fits the model on rows where every model variable is observed; any
/// missing cell is an error.
pub fn fit_frm(data: &MixedDataset, spec: &FrmSpec) -> Result<FrmFit> {
    spec.validate(data)?;
    data.require_observed(&spec.variables())?;
    let n = data.n_rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} rows")));
    }
    let grid = data.grid(&spec.response)?.clone();
    let terms = build_terms(data, spec, &grid)?;
    let g = grid.len();
    let curves = data.curves(&spec.response)?;
    let y = DMatrix::from_fn(n, g, |i, d| curves[i][d]);

    let factors: Vec<DMatrix<f64>> = terms.iter().map(|t| t.row_factors(data)).collect::<Result<_>>()?;
    let t_evals: Vec<DMatrix<f64>> = terms
        .iter()
        .map(|t| t.t_basis.eval(grid.points()))
        .collect::<Result<_>>()?;
    let widths: Vec<usize> = terms.iter().map(FrmTerm::width).collect();
    let total: usize = widths.iter().sum();
    let mut xtx = DMatrix::zeros(total, total);
    let mut xty = DVector::zeros(total);
    let mut off_k = 0;
    for k in 0..terms.len() {
        let mut off_l = off_k;
        for l in k..terms.len() {
            let vv = factors[k].tr_mul(&factors[l]);
            let bb = t_evals[k].tr_mul(&t_evals[l]);
            let block = vv.kronecker(&bb);
            xtx.view_mut((off_k, off_l), (widths[k], widths[l]))
                .copy_from(&block);
            if l != k {
                xtx.view_mut((off_l, off_k), (widths[l], widths[k]))
                    .copy_from(&block.transpose());
            }
            off_l += widths[l];
        }
        // V' Y B, flattened with the row-factor index major
        let vyb = factors[k].tr_mul(&y) * &t_evals[k];
        let lt = t_evals[k].ncols();
        for a in 0..vyb.nrows() {
            for b in 0..lt {
                xty[off_k + a * lt + b] = vyb[(a, b)];
            }
        }
        off_k += widths[k];
    }
    let ne = NormalEquations {
        xtx,
        xty,
        yty: y.iter().map(|v| v * v).sum(),
        n_obs: n * g,
    };
    let blocks: Vec<PenaltyBlock> = terms
        .iter()
        .map(|t| PenaltyBlock {
            label: t.label.clone(),
            width: t.width(),
            penalty: Some(t.penalty()),
            smoothing: smoothing(spec),
        })
        .collect();
    let fit = fit_gaussian_normal(&ne, &blocks)?;
    Ok(FrmFit {
        spec: spec.clone(),
        grid,
        terms,
        fit,
    })
}

/// Reference construction of the stacked long-format response and design
/// blocks (`n G` rows). Used to cross-check the structured assembly.
pub fn dense_design(data: &MixedDataset, spec: &FrmSpec) -> Result<(Vec<f64>, Vec<DesignBlock>)> {
    spec.validate(data)?;
    data.require_observed(&spec.variables())?;
    let grid = data.grid(&spec.response)?.clone();
    let terms = build_terms(data, spec, &grid)?;
    let n = data.n_rows();
    let g = grid.len();
    let y: Vec<f64> = data
        .curves(&spec.response)?
        .iter()
        .flat_map(|c| c.iter().copied())
        .collect();
    let mut blocks = Vec::new();
    for term in &terms {
        let bt = term.t_basis.eval(grid.points())?;
        let mut cols = DMatrix::zeros(n * g, term.width());
        for i in 0..n {
            let rows = match (&term.source, &term.surface) {
                (TermSource::Intercept, _) => bt.clone(),
                (TermSource::Scalar(v), _) => &bt * data.scalar(v)?[i],
                (TermSource::Surface(v), Some(sp)) => ff_design_rows(
                    &data.curves(v)?[i],
                    &sp.s_weights,
                    sp.s_grid.points(),
                    &sp.basis,
                    grid.points(),
                )?,
                _ => unreachable!(),
            };
            cols.view_mut((i * g, 0), (g, term.width())).copy_from(&rows);
        }
        blocks.push(DesignBlock::penalized(
            term.label.clone(),
            cols,
            term.penalty(),
            smoothing(spec),
        ));
    }
    Ok((y, blocks))
}

impl FrmFit {
    pub fn spec(&self) -> &FrmSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn penalized_fit(&self) -> &PenalizedFit {
        &self.fit
    }

    pub fn term_labels(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.label.as_str()).collect()
    }

    fn term(&self, label: &str) -> Result<&FrmTerm> {
        self.terms
            .iter()
            .find(|t| t.label == label)
            .ok_or_else(|| Error::UnknownTerm(label.to_string()))
    }

    /// Fitted mean curves on the response grid for every row of `data`.
    pub fn predict(&self, data: &MixedDataset) -> Result<Vec<Vec<f64>>> {
        let n = data.n_rows();
        for v in self.spec.predictors() {
            let col = data.column(v)?;
            if let Some(i) = col.observed.iter().position(|o| !o) {
                return Err(Error::IncompleteData(format!(
                    "predictor `{v}` is missing in row {i}"
                )));
            }
        }
        let mut mu = DMatrix::zeros(n, self.grid.len());
        for term in &self.terms {
            let v = term.row_factors(data)?;
            let coef = self.fit.block_coefficients(&term.label)?;
            let lt = term.t_basis.size();
            let q = v.ncols();
            let c = DMatrix::from_fn(q, lt, |a, b| coef[a * lt + b]);
            let bt = term.t_basis.eval(self.grid.points())?;
            mu += v * (c * bt.transpose());
        }
        Ok(mu.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// Observed response minus fitted mean, per row.
    pub fn residuals(&self, data: &MixedDataset) -> Result<Vec<Vec<f64>>> {
        data.require_observed(&[self.spec.response.as_str()])?;
        let mu = self.predict(data)?;
        let y = data.curves(&self.spec.response)?;
        Ok(y.iter()
            .zip(mu)
            .map(|(yi, mi)| yi.iter().zip(mi).map(|(a, b)| a - b).collect())
            .collect())
    }

    /// Estimate and pointwise standard error of a curve term at `points`.
    pub fn coefficient_function(&self, label: &str, points: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let term = self.term(label)?;
        if term.surface.is_some() {
            return Err(Error::Spec(format!(
                "`{label}` is a surface; use coefficient_surface"
            )));
        }
        let est = TermEstimate::from_fit(&self.fit, label, term.term_basis(&self.grid))?;
        est.evaluate(&term.t_basis.eval(points)?)
    }

    /// Surface estimate and standard error on `s x t` (s-major).
    pub fn coefficient_surface(&self, label: &str, s: &[f64], t: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let term = self.term(label)?;
        let sp = term
            .surface
            .as_ref()
            .ok_or_else(|| Error::Spec(format!("`{label}` is not a surface term")))?;
        let est = TermEstimate::from_fit(&self.fit, label, term.term_basis(&self.grid))?;
        let mut ss = Vec::new();
        let mut ts = Vec::new();
        for &a in s {
            for &b in t {
                ss.push(a);
                ts.push(b);
            }
        }
        est.evaluate(&sp.basis.eval_pairs(&ss, &ts)?)
    }

    pub fn term_estimates(&self) -> Result<Vec<TermEstimate>> {
        self.terms
            .iter()
            .map(|t| TermEstimate::from_fit(&self.fit, &t.label, t.term_basis(&self.grid)))
            .collect()
    }

    pub fn to_record(&self) -> Result<FitRecord> {
        Ok(FitRecord {
            model: ModelKind::Frm,
            response: self.spec.response.clone(),
            terms: self.term_estimates()?,
            summary: self.fit.summary(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ColumnKind;
    use crate::penreg::fit_gaussian;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::uniform(0.0, 10.0, 41).unwrap()
    }

    /// Y_i(t) = 1 + 0.2 t + z_i sin(pi t / 10) + int X_i(s) 0.1 s t ds / 10 + noise
    fn sample(n: usize, noise: f64, seed: u64) -> MixedDataset {
        let g = grid();
        let sg = Grid::uniform(0.0, 1.0, 21).unwrap();
        let sw = sg.weights();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                sg.points().iter().map(|&s| a + b * s).collect()
            })
            .collect();
        let y: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let xint: f64 = x[i]
                    .iter()
                    .zip(sg.points())
                    .zip(&sw)
                    .map(|((xv, s), w)| xv * s * w)
                    .sum();
                g.points()
                    .iter()
                    .map(|&t| {
                        1.0 + 0.2 * t
                            + z[i] * (PI * t / 10.0).sin()
                            + xint * 0.1 * t
                            + noise * rng.sample::<f64, _>(StandardNormal)
                    })
                    .collect()
            })
            .collect();
        let mut d = MixedDataset::new(n);
        d.push_complete_scalar("z", ColumnKind::Continuous, z).unwrap();
        d.push_complete_functional("X", sg, x).unwrap();
        d.push_complete_functional("Y", g, y).unwrap();
        d
    }

    #[test]
    fn structured_assembly_matches_dense_design() {
        let d = sample(30, 0.3, 1);
        let mut spec = FrmSpec::new("Y", &["z"], &["X"]);
        spec.basis = BasisConfig::cubic(8);
        spec.ff_basis = SurfaceBasisConfig {
            s: BasisConfig::cubic(5),
            t: BasisConfig::cubic(6),
        };
        for lambda in [None, Some(0.5)] {
            spec.fixed_lambda = lambda;
            let fast = fit_frm(&d, &spec).unwrap();
            let (y, blocks) = dense_design(&d, &spec).unwrap();
            let dense = fit_gaussian(&y, &blocks).unwrap();
            let a = &fast.penalized_fit().coefficients;
            let diff = (a - &dense.coefficients).abs().max() / a.abs().max();
            assert!(diff < 1e-6, "relative coefficient difference {diff}");
            assert_abs_diff_eq!(fast.penalized_fit().edf, dense.edf, epsilon = 1e-6);
        }
    }

    #[test]
    fn constant_response_gives_constant_intercept() {
        let g = grid();
        let n = 12;
        let mut d = MixedDataset::new(n);
        d.push_complete_scalar("z", ColumnKind::Continuous, vec![0.0; n])
            .unwrap();
        d.push_complete_functional("Y", g.clone(), vec![vec![2.5; g.len()]; n])
            .unwrap();
        let fit = fit_frm(&d, &FrmSpec::new("Y", &[], &[])).unwrap();
        let (est, _) = fit.coefficient_function(INTERCEPT, g.points()).unwrap();
        for v in est {
            assert_abs_diff_eq!(v, 2.5, epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_noise_recovers_coefficient() {
        let d = sample(60, 0.0, 2);
        let fit = fit_frm(&d, &FrmSpec::new("Y", &["z"], &[])).unwrap_or_else(|e| panic!("{e}"));
        let pts: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let (est, _) = fit.coefficient_function("z", &pts).unwrap();
        let err = pts
            .iter()
            .zip(&est)
            .map(|(t, e)| (e - (PI * t / 10.0).sin()).abs())
            .fold(0.0, f64::max);
        // the omitted surface term leaks into the intercept only
        assert!(err < 0.05, "max error {err}");
    }

    #[test]
    fn permutation_invariance_and_residual_identity() {
        let d = sample(25, 0.5, 3);
        let spec = FrmSpec::new("Y", &["z"], &["X"]);
        let fit = fit_frm(&d, &spec).unwrap();
        let perm: Vec<usize> = (0..25).rev().collect();
        let fit2 = fit_frm(&d.select_rows(&perm), &spec).unwrap();
        let diff = (&fit.penalized_fit().coefficients - &fit2.penalized_fit().coefficients)
            .abs()
            .max();
        assert!(diff < 1e-8, "diff {diff}");

        let mu = fit.predict(&d).unwrap();
        let r = fit.residuals(&d).unwrap();
        let y = d.curves("Y").unwrap();
        for i in 0..25 {
            for k in 0..y[i].len() {
                assert_abs_diff_eq!(mu[i][k] + r[i][k], y[i][k], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn prediction_linearity_and_zero_predictors() {
        let d = sample(40, 0.5, 4);
        let fit = fit_frm(&d, &FrmSpec::new("Y", &["z"], &[])).unwrap();
        let mut zero = d.select_rows(&[0, 1]);
        let zi = zero.index_of("z").unwrap();
        zero.fill_scalar(zi, 0, 0.0);
        zero.fill_scalar(zi, 1, 1.5);
        let mu = fit.predict(&zero).unwrap();
        let (b0, _) = fit.coefficient_function(INTERCEPT, fit.grid().points()).unwrap();
        let (b1, _) = fit.coefficient_function("z", fit.grid().points()).unwrap();
        for k in 0..b0.len() {
            assert_abs_diff_eq!(mu[0][k], b0[k], epsilon = 1e-10);
            assert_abs_diff_eq!(mu[1][k] - mu[0][k], 1.5 * b1[k], epsilon = 1e-10);
        }
    }

    #[test]
    fn shift_equivariance() {
        let d = sample(30, 0.5, 5);
        let spec = FrmSpec::new("Y", &["z"], &[]);
        let fit = fit_frm(&d, &spec).unwrap();
        let mut shifted = MixedDataset::new(30);
        shifted
            .push_complete_scalar("z", ColumnKind::Continuous, d.scalar("z").unwrap().to_vec())
            .unwrap();
        let ys: Vec<Vec<f64>> = d
            .curves("Y")
            .unwrap()
            .iter()
            .map(|c| c.iter().map(|v| v + 3.0).collect())
            .collect();
        shifted.push_complete_functional("Y", grid(), ys).unwrap();
        let fit2 = fit_frm(&shifted, &spec).unwrap();
        let pts = grid().points().to_vec();
        let (a0, _) = fit.coefficient_function(INTERCEPT, &pts).unwrap();
        let (b0, _) = fit2.coefficient_function(INTERCEPT, &pts).unwrap();
        let (a1, _) = fit.coefficient_function("z", &pts).unwrap();
        let (b1, _) = fit2.coefficient_function("z", &pts).unwrap();
        for k in 0..pts.len() {
            assert_abs_diff_eq!(b0[k] - a0[k], 3.0, epsilon = 1e-6);
            assert_abs_diff_eq!(b1[k], a1[k], epsilon = 1e-6);
        }
    }

    #[test]
    fn se_from_covariance_block_and_replication() {
        let d = sample(40, 1.0, 6);
        let mut spec = FrmSpec::new("Y", &["z"], &[]);
        spec.fixed_lambda = Some(1.0);
        let fit = fit_frm(&d, &spec).unwrap();
        let pts = [0.5, 3.3, 7.7];
        let (_, se) = fit.coefficient_function("z", &pts).unwrap();
        let basis = BSplineBasis::new(0.0, 10.0, 20).unwrap();
        let cov = fit.penalized_fit().block_covariance("z").unwrap();
        for (k, &t) in pts.iter().enumerate() {
            let b = DVector::from_vec(basis.eval_point(t).unwrap());
            let q = (b.transpose() * &cov * &b)[(0, 0)];
            assert_abs_diff_eq!(se[k], q.sqrt(), epsilon = 1e-12);
            assert!(se[k] > 0.0);
        }
        // four copies of every row with the penalty scaled alike: se halves
        let rows: Vec<usize> = (0..160).map(|i| i % 40).collect();
        spec.fixed_lambda = Some(4.0);
        let fit4 = fit_frm(&d.select_rows(&rows), &spec).unwrap();
        let (_, se4) = fit4.coefficient_function("z", &pts).unwrap();
        for k in 0..pts.len() {
            let ratio = se4[k] / se[k];
            assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
        }
    }

    #[test]
    fn saturated_binary_group_means() {
        let g = grid();
        let n = 20;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let y: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                g.points()
                    .iter()
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut d = MixedDataset::new(n);
        d.push_complete_scalar("z", ColumnKind::Binary, z.clone())
            .unwrap();
        d.push_complete_functional("Y", g.clone(), y.clone()).unwrap();
        let mut spec = FrmSpec::new("Y", &["z"], &[]);
        spec.basis = BasisConfig::cubic(g.len() + 2);
        spec.fixed_lambda = Some(0.0);
        let fit = fit_frm(&d, &spec).unwrap();
        let mu = fit.predict(&d).unwrap();
        for grp in [0.0, 1.0] {
            let idx: Vec<usize> = (0..n).filter(|&i| z[i] == grp).collect();
            let first = idx[0];
            for k in 0..g.len() {
                let mean = idx.iter().map(|&i| y[i][k]).sum::<f64>() / idx.len() as f64;
                assert_abs_diff_eq!(mu[first][k], mean, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn errors() {
        let mut d = sample(10, 0.1, 8);
        assert!(matches!(
            fit_frm(&d, &FrmSpec::new("z", &[], &[])),
            Err(Error::Spec(_))
        ));
        assert!(matches!(
            fit_frm(&d, &FrmSpec::new("Y", &["nope"], &[])),
            Err(Error::UnknownVariable(_))
        ));
        assert!(fit_frm(&d, &FrmSpec::new("Y", &["z", "z"], &[])).is_err());
        d.apply_mask(
            "z",
            &[true, false, true, true, true, true, true, true, true, true],
        )
        .unwrap();
        assert!(matches!(
            fit_frm(&d, &FrmSpec::new("Y", &["z"], &[])),
            Err(Error::IncompleteData(_))
        ));
    }

    #[test]
    fn spec_json_and_record() {
        let spec = FrmSpec::from_json(
            r#"{ "response": "Y", "scalar_terms": ["z"], "ff_terms": [], "intercept": true }"#,
        )
        .unwrap();
        assert_eq!(spec.basis.size, 20);
        assert!(FrmSpec::from_json(r#"{"response": "Y", "bogus": 1}"#).is_err());
        let d = sample(15, 0.5, 9);
        let rec = fit_frm(&d, &spec).unwrap().to_record().unwrap();
        let back = FitRecord::from_json(&rec.to_json().unwrap()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(rec.term("z").unwrap().coefficients.len(), 20);
    }

    #[test]
    fn surface_term_rows() {
        let d = sample(30, 0.0, 10);
        let fit = fit_frm(&d, &FrmSpec::new("Y", &["z"], &["X"])).unwrap();
        let (est, se) = fit.coefficient_surface("X", &[0.5], &[5.0]).unwrap();
        // true surface 0.1 s t
        assert!((est[0] - 0.25).abs() < 0.1, "surface {}", est[0]);
        assert!(se[0] >= 0.0);
        assert_eq!(fit.term_labels(), vec![INTERCEPT, "z", "X"]);
    }
}
