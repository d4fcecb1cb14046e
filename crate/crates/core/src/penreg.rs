//! Blockwise quadratically penalized regression.
//!
//! A model is a list of column blocks, each optionally carrying a penalty
//! matrix `D_j` and a smoothing parameter `lambda_j`. Gaussian fits minimise
//! `|y - X b|^2 + sum_j lambda_j b_j' D_j b_j`; Bernoulli fits run penalized
//! IRLS on the logit scale. Smoothing parameters marked [`Smoothing::Reml`] are
//! chosen by restricted maximum likelihood using derivative-free coordinate
//! descent over `log10 lambda`.
//!
//! Everything downstream of the design works on the sufficient statistics
//! `X'X`, `X'y`, `y'y` ([`NormalEquations`]), so callers with structured
//! designs can assemble those directly without materialising `X`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::basis::psd_eigen;
use crate::error::{Error, Result};

/// Search interval for `log10 lambda`.
pub const LOG10_LAMBDA_RANGE: (f64, f64) = (-8.0, 12.0);
const COARSE_SWEEPS: usize = 2;
const COARSE_TOL: f64 = 1e-2;
const REFINE_HALF_WIDTH: f64 = 1.0;
const REFINE_TOL: f64 = 1e-4;
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;
const IRLS_MAX_ITER: usize = 50;
const IRLS_TOL: f64 = 1e-8;
const SEPARATION_ETA: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[default]
    Gaussian,
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    /// Select lambda by REML.
    #[default]
    Reml,
    /// Use this lambda as given.
    Fixed(f64),
}

/// Columns of one model term together with its penalty.
#[derive(Debug, Clone)]
pub struct DesignBlock {
    pub label: String,
    pub columns: DMatrix<f64>,
    pub penalty: Option<DMatrix<f64>>,
    pub smoothing: Smoothing,
}

impl DesignBlock {
    pub fn unpenalized(label: impl Into<String>, columns: DMatrix<f64>) -> Self {
        Self {
            label: label.into(),
            columns,
            penalty: None,
            smoothing: Smoothing::Fixed(0.0),
        }
    }

    pub fn penalized(
        label: impl Into<String>,
        columns: DMatrix<f64>,
        penalty: DMatrix<f64>,
        smoothing: Smoothing,
    ) -> Self {
        Self {
            label: label.into(),
            columns,
            penalty: Some(penalty),
            smoothing,
        }
    }

    pub fn layout(&self) -> PenaltyBlock {
        PenaltyBlock {
            label: self.label.clone(),
            width: self.columns.ncols(),
            penalty: self.penalty.clone(),
            smoothing: self.smoothing,
        }
    }
}

/// Block metadata without the columns, for fits built from normal equations.
#[derive(Debug, Clone)]
pub struct PenaltyBlock {
    pub label: String,
    pub width: usize,
    pub penalty: Option<DMatrix<f64>>,
    pub smoothing: Smoothing,
}

/// Sufficient statistics of a (possibly weighted) least-squares problem.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
    pub n_obs: usize,
}

impl NormalEquations {
    pub fn from_design(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        Self {
            xtx: x.tr_mul(x),
            xty: x.tr_mul(y),
            yty: y.dot(y),
            n_obs: y.len(),
        }
    }

    fn weighted(x: &DMatrix<f64>, z: &DVector<f64>, w: &DVector<f64>) -> Self {
        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i].sqrt();
        }
        let zw = z.zip_map(w, |zi, wi| zi * wi.sqrt());
        Self::from_design(&xw, &zw)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BlockInfo {
    pub label: String,
    pub offset: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct PenalizedFit {
    pub coefficients: DVector<f64>,
    /// Bayesian posterior covariance `(X'WX + S)^{-1} * dispersion`.
    pub posterior_cov: DMatrix<f64>,
    pub dispersion: f64,
    /// Smoothing parameter per block; 0 for unpenalized blocks.
    pub lambdas: Vec<f64>,
    pub edf: f64,
    pub family: Family,
    pub blocks: Vec<BlockInfo>,
    pub rss: f64,
    pub n_obs: usize,
    /// REML criterion at the selected smoothing parameters (NaN if none selected).
    pub reml: f64,
    /// Ridge added to the penalized normal matrix, relative to its mean diagonal.
    pub jitter: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when a Bernoulli fit's linear predictor diverges.
    pub separation: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitSummary {
    pub family: Family,
    pub lambdas: Vec<(String, f64)>,
    pub edf: f64,
    pub dispersion: f64,
    pub n_obs: usize,
    pub jitter: f64,
    pub converged: bool,
    pub separation: bool,
}

impl PenalizedFit {
    pub fn block(&self, label: &str) -> Option<&BlockInfo> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn block_coefficients(&self, label: &str) -> Result<DVector<f64>> {
        let b = self
            .block(label)
            .ok_or_else(|| Error::UnknownTerm(label.to_string()))?;
        Ok(self.coefficients.rows(b.offset, b.width).into_owned())
    }

    pub fn block_covariance(&self, label: &str) -> Result<DMatrix<f64>> {
        let b = self
            .block(label)
            .ok_or_else(|| Error::UnknownTerm(label.to_string()))?;
        Ok(self
            .posterior_cov
            .view((b.offset, b.offset), (b.width, b.width))
            .into_owned())
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            family: self.family,
            lambdas: self
                .blocks
                .iter()
                .zip(&self.lambdas)
                .map(|(b, l)| (b.label.clone(), *l))
                .collect(),
            edf: self.edf,
            dispersion: self.dispersion,
            n_obs: self.n_obs,
            jitter: self.jitter,
            converged: self.converged,
            separation: self.separation,
        }
    }
}

#[derive(Debug, Clone)]
struct PreparedBlock {
    offset: usize,
    width: usize,
    /// Penalty eigenvalues (null directions exactly zero); `None` if unpenalized.
    eigenvalues: Option<Vec<f64>>,
    rank: usize,
    log_pdet: f64,
    smoothing: Smoothing,
}

/// Penalty structure shared by every evaluation of one problem.
///
/// Coefficients are rotated blockwise into the eigenbasis of each penalty so
/// that the total penalty is diagonal. Cholesky is insensitive to diagonal
/// scaling, which keeps very large smoothing parameters from swamping the
/// unpenalized directions.
#[derive(Debug, Clone)]
struct PenaltyLayout {
    blocks: Vec<PreparedBlock>,
    info: Vec<BlockInfo>,
    total: usize,
    rotation: DMatrix<f64>,
}

impl PenaltyLayout {
    fn new(blocks: &[PenaltyBlock]) -> Result<Self> {
        let total: usize = blocks.iter().map(|b| b.width).sum();
        let mut rotation = DMatrix::identity(total, total);
        let mut offset = 0;
        let mut prepared = Vec::with_capacity(blocks.len());
        let mut info = Vec::with_capacity(blocks.len());
        for b in blocks {
            if let Some(d) = &b.penalty {
                if d.nrows() != b.width || d.ncols() != b.width {
                    return Err(Error::Dimension(format!(
                        "penalty for `{}` is {}x{} but the block has {} columns",
                        b.label,
                        d.nrows(),
                        d.ncols(),
                        b.width
                    )));
                }
                if d.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Spec(format!("penalty for `{}` is not finite", b.label)));
                }
            }
            if let Smoothing::Fixed(l) = b.smoothing {
                if !(l >= 0.0 && l.is_finite()) {
                    return Err(Error::Spec(format!(
                        "smoothing parameter for `{}` must be finite and nonnegative",
                        b.label
                    )));
                }
            }
            let (eigenvalues, rank, log_pdet) = match &b.penalty {
                Some(d) => {
                    let (vectors, values) = psd_eigen(d);
                    rotation
                        .view_mut((offset, offset), (b.width, b.width))
                        .copy_from(&vectors);
                    let positive = values.iter().filter(|&&v| v > 0.0);
                    let rank = positive.clone().count();
                    let log_pdet = positive.map(|v| v.ln()).sum();
                    (Some(values), rank, log_pdet)
                }
                None => (None, 0, 0.0),
            };
            prepared.push(PreparedBlock {
                offset,
                width: b.width,
                smoothing: if eigenvalues.is_some() {
                    b.smoothing
                } else {
                    Smoothing::Fixed(0.0)
                },
                eigenvalues,
                rank,
                log_pdet,
            });
            info.push(BlockInfo {
                label: b.label.clone(),
                offset,
                width: b.width,
            });
            offset += b.width;
        }
        Ok(Self {
            blocks: prepared,
            info,
            total,
            rotation,
        })
    }

    fn reml_indices(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| b.eigenvalues.is_some() && b.smoothing == Smoothing::Reml)
            .map(|(i, _)| i)
            .collect()
    }

    /// Lambdas per block given log10 values for the REML blocks.
    fn lambdas(&self, reml_log10: &[f64]) -> Vec<f64> {
        let mut it = reml_log10.iter();
        self.blocks
            .iter()
            .map(|b| match (&b.eigenvalues, b.smoothing) {
                (None, _) => 0.0,
                (Some(_), Smoothing::Fixed(l)) => l,
                (Some(_), Smoothing::Reml) => 10f64.powf(*it.next().expect("one value per block")),
            })
            .collect()
    }

    /// Normal equations in the rotated coordinates.
    fn rotate(&self, ne: &NormalEquations) -> NormalEquations {
        let r = &self.rotation;
        NormalEquations {
            xtx: symmetrize(r.tr_mul(&(&ne.xtx * r))),
            xty: r.tr_mul(&ne.xty),
            yty: ne.yty,
            n_obs: ne.n_obs,
        }
    }

    /// Diagonal of the total penalty in rotated coordinates.
    fn penalty_diagonal(&self, lambdas: &[f64]) -> DVector<f64> {
        let mut s = DVector::zeros(self.total);
        for (b, &l) in self.blocks.iter().zip(lambdas) {
            if let (Some(ev), true) = (&b.eigenvalues, l > 0.0) {
                for (i, v) in ev.iter().enumerate() {
                    s[b.offset + i] = l * v;
                }
            }
        }
        s
    }

    /// Null-space dimension of the total penalty and `log |S|_+`.
    fn null_dim_and_log_pdet(&self, lambdas: &[f64]) -> (usize, f64) {
        let mut null = 0;
        let mut log_pdet = 0.0;
        for (b, &l) in self.blocks.iter().zip(lambdas) {
            if b.eigenvalues.is_some() && l > 0.0 {
                null += b.width - b.rank;
                log_pdet += b.rank as f64 * l.ln() + b.log_pdet;
            } else {
                null += b.width;
            }
        }
        (null, log_pdet)
    }
}

/// Solution of a rotated penalized system.
struct Solved {
    coefficients: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    penalty: DVector<f64>,
    jitter: f64,
}

impl Solved {
    fn penalty_value(&self) -> f64 {
        self.coefficients
            .iter()
            .zip(self.penalty.iter())
            .map(|(b, s)| s * b * b)
            .sum()
    }
}

fn solve_penalized(ne: &NormalEquations, penalty: DVector<f64>) -> Result<Solved> {
    let n = ne.xtx.nrows();
    let mut a = ne.xtx.clone();
    for i in 0..n {
        a[(i, i)] += penalty[i];
    }
    if (0..n).any(|i| a[(i, i)].is_nan() || a[(i, i)] <= 0.0) {
        return Err(Error::Rank(
            "penalized normal equations have a zero direction".into(),
        ));
    }
    let scale = ne.xtx.trace() / n.max(1) as f64;
    let scale = if scale > 0.0 { scale } else { a.trace() / n as f64 };
    let mut jitter = 0.0;
    loop {
        let mut trial = a.clone();
        if jitter > 0.0 {
            for i in 0..n {
                trial[(i, i)] += jitter * scale;
            }
        }
        if let Some(chol) = Cholesky::new(trial) {
            let coefficients = chol.solve(&ne.xty);
            if coefficients.iter().all(|c| c.is_finite()) {
                return Ok(Solved {
                    coefficients,
                    chol,
                    penalty,
                    jitter,
                });
            }
        }
        jitter = if jitter == 0.0 {
            JITTER_START
        } else {
            jitter * 10.0
        };
        if jitter > JITTER_MAX * 1.0001 {
            return Err(Error::Rank(format!(
                "{n}x{n} system not positive definite even with relative ridge {JITTER_MAX:e}"
            )));
        }
    }
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}

/// REML criterion (negative log restricted likelihood, up to the usual
/// constants) for the given lambdas on rotated normal equations.
/// `known_scale` fixes the dispersion.
fn reml_criterion(
    ne: &NormalEquations,
    layout: &PenaltyLayout,
    lambdas: &[f64],
    known_scale: Option<f64>,
) -> Result<f64> {
    let solved = solve_penalized(ne, layout.penalty_diagonal(lambdas))?;
    let pen_rss = (ne.yty - solved.coefficients.dot(&ne.xty)).max(ne.yty * 1e-300);
    let (null_dim, log_pdet_s) = layout.null_dim_and_log_pdet(lambdas);
    let log_det_a = log_det(&solved.chol);
    let value = match known_scale {
        Some(phi) => 0.5 * (pen_rss / phi + log_det_a - log_pdet_s),
        None => {
            if ne.n_obs <= null_dim {
                return Err(Error::InsufficientData(format!(
                    "{} observations for {null_dim} unpenalized directions",
                    ne.n_obs
                )));
            }
            let df = (ne.n_obs - null_dim) as f64;
            let phi = pen_rss.max(f64::MIN_POSITIVE) / df;
            0.5 * (df * (1.0 + (2.0 * PI * phi).ln()) + log_det_a - log_pdet_s)
        }
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Rank("non-finite REML criterion".into()))
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Golden-section minimisation on `[lo, hi]`; bracket endpoints are also
/// evaluated so monotone criteria settle on the boundary.
fn golden_section(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Coordinate-descent REML search; returns log10 lambdas for the REML blocks.
fn select_smoothing(
    ne: &NormalEquations,
    layout: &PenaltyLayout,
    known_scale: Option<f64>,
    start: Option<&[f64]>,
) -> (Vec<f64>, f64) {
    let n_free = layout.reml_indices().len();
    if n_free == 0 {
        return (Vec::new(), f64::NAN);
    }
    let mut x = start.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n_free]);
    let (lo, hi) = LOG10_LAMBDA_RANGE;
    let score = |x: &[f64]| -> f64 {
        reml_criterion(ne, layout, &layout.lambdas(x), known_scale).unwrap_or(f64::INFINITY)
    };
    let mut best = score(&x);
    let sweep = |x: &mut Vec<f64>, best: &mut f64, refine: bool| {
        for j in 0..n_free {
            let (a, b, tol) = if refine {
                (
                    (x[j] - REFINE_HALF_WIDTH).max(lo),
                    (x[j] + REFINE_HALF_WIDTH).min(hi),
                    REFINE_TOL,
                )
            } else {
                (lo, hi, COARSE_TOL)
            };
            let mut trial = x.clone();
            let (arg, val) = golden_section(
                |v| {
                    trial[j] = v;
                    score(&trial)
                },
                a,
                b,
                tol,
            );
            if val < *best {
                x[j] = arg;
                *best = val;
            }
        }
    };
    for _ in 0..COARSE_SWEEPS {
        sweep(&mut x, &mut best, false);
    }
    sweep(&mut x, &mut best, true);
    (x, best)
}

fn check_blocks(blocks: &[DesignBlock], n: usize) -> Result<()> {
    if blocks.is_empty() {
        return Err(Error::Spec("model has no design blocks".into()));
    }
    for b in blocks {
        if b.columns.nrows() != n {
            return Err(Error::Dimension(format!(
                "block `{}` has {} rows for {} observations",
                b.label,
                b.columns.nrows(),
                n
            )));
        }
    }
    Ok(())
}

fn stack_columns(blocks: &[DesignBlock]) -> DMatrix<f64> {
    let n = blocks[0].columns.nrows();
    let total: usize = blocks.iter().map(|b| b.columns.ncols()).sum();
    let mut x = DMatrix::zeros(n, total);
    let mut offset = 0;
    for b in blocks {
        x.view_mut((0, offset), (n, b.columns.ncols()))
            .copy_from(&b.columns);
        offset += b.columns.ncols();
    }
    x
}

/// Gaussian identity-link fit with REML smoothing selection.
pub fn fit_gaussian(y: &[f64], blocks: &[DesignBlock]) -> Result<PenalizedFit> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("response contains non-finite values".into()));
    }
    check_blocks(blocks, y.len())?;
    let x = stack_columns(blocks);
    let ne = NormalEquations::from_design(&x, &DVector::from_column_slice(y));
    let layout: Vec<PenaltyBlock> = blocks.iter().map(DesignBlock::layout).collect();
    fit_gaussian_normal(&ne, &layout)
}

/// Gaussian fit from precomputed normal equations.
pub fn fit_gaussian_normal(ne: &NormalEquations, blocks: &[PenaltyBlock]) -> Result<PenalizedFit> {
    let layout = PenaltyLayout::new(blocks)?;
    if ne.xtx.nrows() != layout.total || ne.xty.len() != layout.total {
        return Err(Error::Dimension(format!(
            "normal equations of size {} for {} model columns",
            ne.xtx.nrows(),
            layout.total
        )));
    }
    if !ne.yty.is_finite() || ne.xty.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("response contains non-finite values".into()));
    }
    let ne_r = layout.rotate(ne);
    let (log10, reml) = select_smoothing(&ne_r, &layout, None, None);
    let lambdas = layout.lambdas(&log10);
    let solved = solve_penalized(&ne_r, layout.penalty_diagonal(&lambdas))?;
    let inv = solved.chol.inverse();
    let edf = (&inv * &ne_r.xtx).trace();
    let pen_rss = ne_r.yty - solved.coefficients.dot(&ne_r.xty);
    let rss = (pen_rss - solved.penalty_value()).max(0.0);
    let resid_df = ne.n_obs as f64 - edf;
    if resid_df <= 0.0 {
        return Err(Error::InsufficientData(format!(
            "no residual degrees of freedom ({} observations, edf {edf:.3})",
            ne.n_obs
        )));
    }
    let dispersion = rss / resid_df;
    let r = &layout.rotation;
    let posterior_cov = symmetrize(r * inv * r.transpose() * dispersion);
    let coefficients = r * &solved.coefficients;
    Ok(PenalizedFit {
        coefficients,
        posterior_cov,
        dispersion,
        lambdas,
        edf,
        family: Family::Gaussian,
        blocks: layout.info,
        rss,
        n_obs: ne.n_obs,
        reml,
        jitter: solved.jitter,
        iterations: 1,
        converged: true,
        separation: false,
    })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn logistic(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

fn bernoulli_deviance(y: &[f64], mu: &[f64]) -> f64 {
    y.iter()
        .zip(mu)
        .map(|(&yi, &m)| {
            let m = m.clamp(1e-15, 1.0 - 1e-15);
            -2.0 * (yi * m.ln() + (1.0 - yi) * (1.0 - m).ln())
        })
        .sum()
}

/// Logit-link penalized IRLS; smoothing parameters re-selected by REML on the
/// working model at every iteration.
pub fn fit_bernoulli(y: &[f64], blocks: &[DesignBlock]) -> Result<PenalizedFit> {
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data("Bernoulli response must be 0/1".into()));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::Data(
            "Bernoulli response needs both classes present".into(),
        ));
    }
    check_blocks(blocks, y.len())?;
    let x = stack_columns(blocks);
    let layout_blocks: Vec<PenaltyBlock> = blocks.iter().map(DesignBlock::layout).collect();
    let layout = PenaltyLayout::new(&layout_blocks)?;
    let x = &x * &layout.rotation;
    let n = y.len();

    let mut mu: Vec<f64> = y.iter().map(|v| (v + 0.5) / 2.0).collect();
    let mut eta: Vec<f64> = mu.iter().map(|m| (m / (1.0 - m)).ln()).collect();
    let mut deviance = bernoulli_deviance(y, &mu);
    let mut log10: Option<Vec<f64>> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut last: Option<(Solved, NormalEquations, Vec<f64>, f64)> = None;

    for iter in 0..IRLS_MAX_ITER {
        iterations = iter + 1;
        let w = DVector::from_iterator(n, mu.iter().map(|m| (m * (1.0 - m)).max(1e-10)));
        let z = DVector::from_iterator(n, (0..n).map(|i| eta[i] + (y[i] - mu[i]) / w[i]));
        let ne = NormalEquations::weighted(&x, &z, &w);
        let (sel, reml) = select_smoothing(&ne, &layout, Some(1.0), log10.as_deref());
        let lambdas = layout.lambdas(&sel);
        log10 = Some(sel);
        let solved = solve_penalized(&ne, layout.penalty_diagonal(&lambdas))?;
        let new_eta = &x * &solved.coefficients;
        eta = new_eta.iter().copied().collect();
        mu = eta.iter().map(|&e| logistic(e)).collect();
        let new_dev = bernoulli_deviance(y, &mu);
        let change = (new_dev - deviance).abs() / (new_dev.abs() + 0.1);
        deviance = new_dev;
        last = Some((solved, ne, lambdas, reml));
        if change < IRLS_TOL {
            converged = true;
            break;
        }
    }

    let (solved, _, lambdas, reml) = last.expect("at least one iteration");
    // covariance at the final weights
    let w = DVector::from_iterator(n, mu.iter().map(|m| (m * (1.0 - m)).max(1e-10)));
    let z = DVector::from_iterator(n, (0..n).map(|i| eta[i] + (y[i] - mu[i]) / w[i]));
    let ne_final = NormalEquations::weighted(&x, &z, &w);
    let cov_solved = solve_penalized(&ne_final, layout.penalty_diagonal(&lambdas))?;
    let inv = cov_solved.chol.inverse();
    let edf = (&inv * &ne_final.xtx).trace();
    let separation = eta.iter().any(|e| e.abs() > SEPARATION_ETA);
    let r = &layout.rotation;
    Ok(PenalizedFit {
        coefficients: r * &solved.coefficients,
        posterior_cov: symmetrize(r * inv * r.transpose()),
        dispersion: 1.0,
        lambdas,
        edf,
        family: Family::Bernoulli,
        blocks: layout.info,
        rss: deviance,
        n_obs: n,
        reml,
        jitter: solved.jitter.max(cov_solved.jitter),
        iterations,
        converged,
        separation,
    })
}

/// Gaussian REML criterion at each `log10 lambda` on the grid; every REML
/// block shares the grid value.
pub fn reml_profile(y: &[f64], blocks: &[DesignBlock], log10_grid: &[f64]) -> Result<Vec<f64>> {
    check_blocks(blocks, y.len())?;
    let x = stack_columns(blocks);
    let ne = NormalEquations::from_design(&x, &DVector::from_column_slice(y));
    let layout_blocks: Vec<PenaltyBlock> = blocks.iter().map(DesignBlock::layout).collect();
    let layout = PenaltyLayout::new(&layout_blocks)?;
    let ne = layout.rotate(&ne);
    let k = layout.reml_indices().len();
    log10_grid
        .iter()
        .map(|&g| reml_criterion(&ne, &layout, &layout.lambdas(&vec![g; k]), None))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BSplineBasis;
    use crate::fdgrid::Grid;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn spline_block(t: &[f64], size: usize, smoothing: Smoothing) -> DesignBlock {
        let basis = BSplineBasis::new(t[0], *t.last().unwrap(), size).unwrap();
        DesignBlock::penalized("s", basis.eval(t).unwrap(), basis.penalty_matrix(), smoothing)
    }

    /// Normal-equations oracle solved by LU, independent of the Cholesky path.
    fn ols(x: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
        let xtx = x.transpose() * x;
        let xty = x.transpose() * DVector::from_column_slice(y);
        xtx.lu().solve(&xty).unwrap()
    }

    #[test]
    fn unpenalized_equals_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(60, 4, |i, j| {
            if j == 0 {
                1.0
            } else {
                rng.random_range(-2.0..2.0) + i as f64 * 0.01
            }
        });
        let y: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fit = fit_gaussian(&y, &[DesignBlock::unpenalized("x", x.clone())]).unwrap();
        let expect = ols(&x, &y);
        assert!((&fit.coefficients - expect).abs().max() < 1e-8);
        assert_abs_diff_eq!(fit.edf, 4.0, epsilon = 1e-8);
        // residuals orthogonal to unpenalized columns
        let resid = DVector::from_column_slice(&y) - &x * &fit.coefficients;
        assert!((x.transpose() * resid).abs().max() < 1e-8);
    }

    #[test]
    fn linear_signal_is_reproduced_at_any_lambda() {
        let t: Vec<f64> = Grid::uniform(0.0, 10.0, 80).unwrap().points().to_vec();
        let y: Vec<f64> = t.iter().map(|v| 1.0 + 0.3 * v).collect();
        for lambda in [1e-6, 1.0, 1e6] {
            let block = spline_block(&t, 12, Smoothing::Fixed(lambda));
            let x = block.columns.clone();
            let fit = fit_gaussian(&y, &[block]).unwrap();
            let fitted = x * &fit.coefficients;
            for (f, v) in fitted.iter().zip(&y) {
                assert_abs_diff_eq!(*f, *v, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn heavy_penalty_gives_least_squares_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t: Vec<f64> = Grid::uniform(0.0, 10.0, 120).unwrap().points().to_vec();
        let y: Vec<f64> = t
            .iter()
            .map(|v| (v * 0.7).sin() + rng.sample::<f64, _>(StandardNormal) * 0.3)
            .collect();
        let block = spline_block(&t, 15, Smoothing::Fixed(1e12));
        let x = block.columns.clone();
        let fit = fit_gaussian(&y, &[block]).unwrap();
        // simple linear regression oracle
        let n = t.len() as f64;
        let tm = t.iter().sum::<f64>() / n;
        let ym = y.iter().sum::<f64>() / n;
        let sxy: f64 = t.iter().zip(&y).map(|(a, b)| (a - tm) * (b - ym)).sum();
        let sxx: f64 = t.iter().map(|a| (a - tm) * (a - tm)).sum();
        let slope = sxy / sxx;
        let fitted = x * &fit.coefficients;
        for (f, ti) in fitted.iter().zip(&t) {
            assert_abs_diff_eq!(*f, ym + slope * (ti - tm), epsilon = 1e-4);
        }
    }

    #[test]
    fn posterior_covariance_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t: Vec<f64> = Grid::uniform(0.0, 1.0, 200).unwrap().points().to_vec();
        let y: Vec<f64> = t
            .iter()
            .map(|v| (6.0 * v).sin() + rng.sample::<f64, _>(StandardNormal) * 0.2)
            .collect();
        let fit = fit_gaussian(&y, &[spline_block(&t, 20, Smoothing::Reml)]).unwrap();
        let c = &fit.posterior_cov;
        assert!((c - c.transpose()).abs().max() < 1e-10);
        let min = c.clone().symmetric_eigen().eigenvalues.min();
        assert!(min >= -1e-10);
        assert!(fit.edf > 2.0 && fit.edf <= 20.0);
        assert!(fit.dispersion > 0.0);
    }

    #[test]
    fn edf_decreases_along_lambda_ladder() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t: Vec<f64> = Grid::uniform(0.0, 1.0, 150).unwrap().points().to_vec();
        let y: Vec<f64> = t.iter().map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut prev = f64::INFINITY;
        for e in -6..=8 {
            let fit = fit_gaussian(&y, &[spline_block(&t, 20, Smoothing::Fixed(10f64.powi(e)))]).unwrap();
            assert!(fit.edf <= prev + 1e-9 * prev.min(1e3));
            prev = fit.edf;
        }
        assert!(prev < 2.01);
    }

    #[test]
    fn pure_noise_prefers_maximal_smoothing() {
        let t: Vec<f64> = Grid::uniform(0.0, 1.0, 100).unwrap().points().to_vec();
        let grid: Vec<f64> = (-8..=12).map(f64::from).collect();
        let mut at_top = 0;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let y: Vec<f64> = t.iter().map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let prof = reml_profile(&y, &[spline_block(&t, 15, Smoothing::Reml)], &grid).unwrap();
            assert!(prof.iter().all(|v| v.is_finite()));
            let arg = prof
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if arg == grid.len() - 1 {
                at_top += 1;
            }
        }
        assert!(at_top > 25, "only {at_top} of 50 minimised at the largest lambda");
    }

    #[test]
    fn strong_signal_selects_small_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Vec<f64> = Grid::uniform(0.0, 1.0, 200).unwrap().points().to_vec();
        let y: Vec<f64> = t
            .iter()
            .map(|v| 3.0 * (8.0 * v).sin() + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let grid: Vec<f64> = (-8..=12).map(f64::from).collect();
        let blocks = [spline_block(&t, 20, Smoothing::Reml)];
        let prof = reml_profile(&y, &blocks, &grid).unwrap();
        let arg = prof
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(arg < grid.len() - 1);
        let fit = fit_gaussian(&y, &blocks).unwrap();
        assert!(fit.edf > 2.0);
        // the continuous optimum sits within one grid step of the grid minimum
        let chosen = fit.lambdas[0].log10();
        assert!(
            (chosen - grid[arg]).abs() <= 1.0 + 1e-9,
            "chosen {chosen}, grid {}",
            grid[arg]
        );
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t: Vec<f64> = Grid::uniform(0.0, 1.0, 90).unwrap().points().to_vec();
        let y: Vec<f64> = t.iter().map(|v| v.sin() + rng.random_range(-0.5..0.5)).collect();
        let a = fit_gaussian(&y, &[spline_block(&t, 10, Smoothing::Reml)]).unwrap();
        let b = fit_gaussian(&y, &[spline_block(&t, 10, Smoothing::Reml)]).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
        assert_eq!(a.lambdas, b.lambdas);
    }

    #[test]
    fn rejects_bad_input() {
        let x = DMatrix::from_element(3, 1, 1.0);
        assert!(matches!(
            fit_gaussian(&[1.0, f64::NAN, 2.0], &[DesignBlock::unpenalized("a", x.clone())]),
            Err(Error::Data(_))
        ));
        let singular = DMatrix::from_fn(5, 2, |_, _| 1.0);
        assert!(matches!(
            fit_gaussian(
                &[1.0, 2.0, 3.0, 4.0, 5.0],
                &[DesignBlock::unpenalized("a", singular)]
            ),
            Err(Error::Rank(_)) | Ok(_)
        ));
        let zero = DMatrix::zeros(4, 2);
        assert!(matches!(
            fit_gaussian(&[1.0, 2.0, 3.0, 4.0], &[DesignBlock::unpenalized("z", zero)]),
            Err(Error::Rank(_))
        ));
    }

    #[test]
    fn bernoulli_intercept_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 4000;
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.5))).collect();
        let x = DMatrix::from_element(n, 1, 1.0);
        let fit = fit_bernoulli(&y, &[DesignBlock::unpenalized("1", x)]).unwrap();
        // binomial proportion oracle: se of logit(p) at p=0.5 is 2/sqrt(n)
        let se = 2.0 / (n as f64).sqrt();
        assert!(fit.coefficients[0].abs() < 3.0 * se);
        assert!(fit.converged);
        assert_eq!(fit.dispersion, 1.0);
    }

    #[test]
    fn bernoulli_binary_covariate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 5000;
        let z: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.5))).collect();
        let y: Vec<f64> = z
            .iter()
            .map(|&zi| f64::from(rng.random_bool(logistic(-0.3 + zi))))
            .collect();
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { z[i] });
        let fit = fit_bernoulli(&y, &[DesignBlock::unpenalized("x", x)]).unwrap();
        // closed-form MLE for a saturated two-group logistic model
        let group_logit = |g: f64| {
            let (s, c) = z
                .iter()
                .zip(&y)
                .filter(|(zi, _)| **zi == g)
                .fold((0.0, 0.0), |acc, (_, yi)| (acc.0 + yi, acc.1 + 1.0));
            let p = s / c;
            (p / (1.0 - p)).ln()
        };
        let mle = group_logit(1.0) - group_logit(0.0);
        assert_abs_diff_eq!(fit.coefficients[1], mle, epsilon = 1e-6);
        assert!((fit.coefficients[1] - 1.0).abs() < 0.1);
    }

    #[test]
    fn bernoulli_duplicated_rows_halve_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 300;
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = z
            .iter()
            .map(|&zi| f64::from(rng.random_bool(logistic(0.2 + 0.8 * zi))))
            .collect();
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { z[i] });
        let single = fit_bernoulli(&y, &[DesignBlock::unpenalized("x", x.clone())]).unwrap();
        let x2 = DMatrix::from_fn(2 * n, 2, |i, j| x[(i % n, j)]);
        let y2: Vec<f64> = (0..2 * n).map(|i| y[i % n]).collect();
        let double = fit_bernoulli(&y2, &[DesignBlock::unpenalized("x", x2)]).unwrap();
        assert!((&single.coefficients - &double.coefficients).abs().max() < 1e-6);
        assert!((&single.posterior_cov * 0.5 - &double.posterior_cov).abs().max() < 1e-8);
    }

    #[test]
    fn bernoulli_separation_flagged() {
        let z: Vec<f64> = (0..40).map(|i| i as f64 - 19.5).collect();
        let y: Vec<f64> = z.iter().map(|&v| f64::from(v > 0.0)).collect();
        let x = DMatrix::from_fn(40, 2, |i, j| if j == 0 { 1.0 } else { z[i] });
        let fit = fit_bernoulli(&y, &[DesignBlock::unpenalized("x", x)]).unwrap();
        assert!(fit.separation);
    }

    #[test]
    fn bernoulli_requires_both_classes() {
        let x = DMatrix::from_element(3, 1, 1.0);
        assert!(fit_bernoulli(&[1.0, 1.0, 1.0], &[DesignBlock::unpenalized("1", x.clone())]).is_err());
        assert!(fit_bernoulli(&[1.0, 0.5, 0.0], &[DesignBlock::unpenalized("1", x)]).is_err());
    }

    #[test]
    fn bernoulli_with_smooth_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t: Vec<f64> = (0..600).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = t
            .iter()
            .map(|&v| f64::from(rng.random_bool(logistic(2.0 * (6.0 * v).sin()))))
            .collect();
        let basis = BSplineBasis::new(0.0, 1.0, 10).unwrap();
        let block = DesignBlock::penalized(
            "s",
            basis.eval(&t).unwrap(),
            basis.penalty_matrix(),
            Smoothing::Reml,
        );
        let fit = fit_bernoulli(&y, &[block]).unwrap();
        assert!(fit.converged);
        assert!(fit.edf > 2.0 && fit.edf < 10.0);
        let c = &fit.posterior_cov;
        assert!((c - c.transpose()).abs().max() < 1e-10);
    }
}
