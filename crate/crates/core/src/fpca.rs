//! Functional principal components of a curve collection.
//!
//! The covariance operator is discretised with quadrature weights `W`, so the
//! eigenproblem solved is `W^{1/2} C W^{1/2} v = lambda v` and the
//! eigenfunctions `psi = W^{-1/2} v` are orthonormal under the quadrature inner
//! product. Eigenvalues are score variances.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fdgrid::{inner_product, Grid};

/// Relative cutoff below which an eigenvalue is treated as zero.
const EIGEN_RELATIVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct FpcaDecomposition {
    grid: Grid,
    #[serde(skip)]
    weights: Vec<f64>,
    mean: Vec<f64>,
    eigenfunctions: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    #[serde(skip)]
    scores: DMatrix<f64>,
    /// Cumulative proportion of variance explained by the first k components.
    pve: Vec<f64>,
    total_variance: f64,
    /// Set when the sample covariance vanishes and no components were kept.
    degenerate: bool,
}

/// Decomposes `curves` (each a slice on `grid`) keeping the fewest components
/// whose cumulative share of variance reaches `pve_threshold`.
pub fn fit_fpca<C: AsRef<[f64]>>(curves: &[C], grid: &Grid, pve_threshold: f64) -> Result<FpcaDecomposition> {
    let n = curves.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "functional principal components need at least 2 curves, got {n}"
        )));
    }
    if !(pve_threshold > 0.0 && pve_threshold <= 1.0) {
        return Err(Error::Spec(format!(
            "variance threshold must lie in (0, 1], got {pve_threshold}"
        )));
    }
    let g = grid.len();
    if let Some(bad) = curves.iter().find(|c| c.as_ref().len() != g) {
        return Err(Error::Dimension(format!(
            "curve of length {} on a {g}-point grid",
            bad.as_ref().len()
        )));
    }
    let weights = grid.weights();

    let mut mean = vec![0.0; g];
    for c in curves {
        for (m, v) in mean.iter_mut().zip(c.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    // rows: centered curves scaled by sqrt(w)
    let centered = DMatrix::from_fn(n, g, |i, d| (curves[i].as_ref()[d] - mean[d]) * sqrt_w[d]);
    let cov = centered.tr_mul(&centered) / (n - 1) as f64;
    let total_variance = cov.trace();

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let cutoff = top * EIGEN_RELATIVE_TOL;
    let positive: Vec<usize> = order
        .into_iter()
        .filter(|&k| eig.eigenvalues[k] > cutoff && eig.eigenvalues[k] > 0.0)
        .collect();
    let positive_sum: f64 = positive.iter().map(|&k| eig.eigenvalues[k]).sum();

    let degenerate = positive.is_empty() || total_variance <= 0.0;
    let mut eigenvalues = Vec::new();
    let mut eigenfunctions = Vec::new();
    let mut pve = Vec::new();
    if !degenerate {
        let mut cumulative = 0.0;
        for &k in &positive {
            let lambda = eig.eigenvalues[k];
            cumulative += lambda;
            let v = eig.eigenvectors.column(k);
            let mut psi: Vec<f64> = (0..g).map(|d| v[d] / sqrt_w[d]).collect();
            orient(&mut psi);
            eigenvalues.push(lambda);
            eigenfunctions.push(psi);
            let share = cumulative / positive_sum;
            pve.push(share);
            if share >= pve_threshold - 1e-10 {
                break;
            }
        }
    }

    let mut decomp = FpcaDecomposition {
        grid: grid.clone(),
        weights,
        mean,
        eigenfunctions,
        eigenvalues,
        scores: DMatrix::zeros(0, 0),
        pve,
        total_variance,
        degenerate,
    };
    decomp.scores = decomp.project_scores(curves)?;
    Ok(decomp)
}

/// Sign convention: the first grid value of each eigenfunction is made
/// nonnegative; when it vanishes the first clearly nonzero value decides.
fn orient(psi: &mut [f64]) {
    let scale = psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lead = psi
        .iter()
        .copied()
        .find(|v| v.abs() > 1e-8 * scale)
        .unwrap_or(0.0);
    if lead < 0.0 {
        psi.iter_mut().for_each(|v| *v = -*v);
    }
}

impl FpcaDecomposition {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn eigenfunctions(&self) -> &[Vec<f64>] {
        &self.eigenfunctions
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn pve(&self) -> &[f64] {
        &self.pve
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Number of retained components.
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Quadrature inner products of centered curves with each eigenfunction.
    pub fn project_scores<C: AsRef<[f64]>>(&self, curves: &[C]) -> Result<DMatrix<f64>> {
        let g = self.grid.len();
        let k = self.n_components();
        let mut scores = DMatrix::zeros(curves.len(), k);
        let mut centered = vec![0.0; g];
        for (i, c) in curves.iter().enumerate() {
            let c = c.as_ref();
            if c.len() != g {
                return Err(Error::Dimension(format!(
                    "curve of length {} does not match the {g}-point decomposition grid",
                    c.len()
                )));
            }
            for d in 0..g {
                centered[d] = c[d] - self.mean[d];
            }
            for (j, psi) in self.eigenfunctions.iter().enumerate() {
                scores[(i, j)] = inner_product(&centered, psi, &self.weights);
            }
        }
        Ok(scores)
    }

    /// `mean + sum_k scores[k] psi_k`.
    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, psi) in scores.iter().zip(&self.eigenfunctions) {
            for (o, p) in out.iter_mut().zip(psi) {
                *o += c * p;
            }
        }
        out
    }

    /// Random curve `mean + sum_k c_k psi_k` with independent
    /// `c_k ~ N(0, lambda_k)`.
    pub fn draw_curve<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let scores: Vec<f64> = self
            .eigenvalues
            .iter()
            .map(|&lambda| {
                let z: f64 = rng.sample(StandardNormal);
                z * lambda.sqrt()
            })
            .collect();
        self.reconstruct(&scores)
    }

    /// Pointwise variance `sum_k lambda_k psi_k(t)^2` of [`draw_curve`](Self::draw_curve).
    pub fn pointwise_variance(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (lambda, psi) in self.eigenvalues.iter().zip(&self.eigenfunctions) {
            for (o, p) in out.iter_mut().zip(psi) {
                *o += lambda * p * p;
            }
        }
        out
    }

    /// Quadrature Gram matrix of the eigenfunctions.
    pub fn gram(&self) -> DMatrix<f64> {
        let k = self.n_components();
        DMatrix::from_fn(k, k, |a, b| {
            inner_product(&self.eigenfunctions[a], &self.eigenfunctions[b], &self.weights)
        })
    }

    /// Columns of the eigenfunction matrix (`G x K`).
    pub fn eigenfunction_matrix(&self) -> DMatrix<f64> {
        let g = self.grid.len();
        DMatrix::from_fn(g, self.n_components(), |d, k| self.eigenfunctions[k][d])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Pointwise mean and standard deviation (n - 1 divisor) of a set of curves.
pub fn pointwise_mean_sd<C: AsRef<[f64]>>(curves: &[C], len: usize) -> (Vec<f64>, Vec<f64>) {
    let n = curves.len();
    let mut mean = vec![0.0; len];
    let mut sd = vec![0.0; len];
    if n == 0 {
        return (mean, sd);
    }
    for c in curves {
        for (m, v) in mean.iter_mut().zip(c.as_ref()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    if n > 1 {
        for c in curves {
            for ((s, v), m) in sd.iter_mut().zip(c.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        sd.iter_mut().for_each(|s| *s = (*s / (n - 1) as f64).sqrt());
    }
    (mean, sd)
}
