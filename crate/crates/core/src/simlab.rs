//! Simulation studies: data generators, missingness mechanisms, the
//! comparison methods and Monte Carlo performance metrics.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::csvio::fmt_f64;
use crate::dataset::{ColumnData, ColumnKind, MixedDataset};
use crate::error::{Error, Result};
use crate::fdgrid::{integrate, Grid};
use crate::frm::{fit_frm, FrmSpec, INTERCEPT};
use crate::mice::{run_fregmice, ConditionalModel, ImputationSpec};
use crate::model::TermEstimate;
use crate::penreg::Family;
use crate::pool::{normal_quantile, pool_functional, pool_scalar, pooled_band};
use crate::srm::{fit_srm, SrmSpec};

pub const DOMAIN: (f64, f64) = (0.0, 10.0);
pub const GRID_POINTS: usize = 101;

/// Names of the generated columns.
pub mod names {
    pub const Z1: &str = "z1";
    pub const Z2: &str = "z2";
    pub const Z3: &str = "z3";
    pub const Y: &str = "Y";
    pub const SRM_Y: &str = "y";
    pub const SRM_Z: &str = "z";
    pub const SRM_X: &str = "X";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    FrmSim,
    SrmSim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mechanism {
    Mcar,
    Mar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ANM")]
    Anm,
    #[serde(rename = "Mean")]
    Mean,
    #[serde(rename = "CCA")]
    Cca,
    #[serde(rename = "fregMICE")]
    Fregmice,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Anm, Method::Mean, Method::Cca, Method::Fregmice];

    pub fn name(self) -> &'static str {
        match self {
            Method::Anm => "ANM",
            Method::Mean => "Mean",
            Method::Cca => "CCA",
            Method::Fregmice => "fregMICE",
        }
    }
}

fn d_parameter_set() -> u8 {
    1
}
fn d_scenario() -> Scenario {
    Scenario::A
}
fn d_mechanism() -> Mechanism {
    Mechanism::Mar
}
fn d_n() -> usize {
    350
}
fn d_target() -> f64 {
    0.2
}
fn d_replications() -> usize {
    100
}
fn d_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn d_m() -> usize {
    5
}
fn d_iterations() -> usize {
    20
}
fn d_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub study: Study,
    #[serde(default = "d_parameter_set")]
    pub parameter_set: u8,
    #[serde(default = "d_scenario")]
    pub scenario: Scenario,
    #[serde(default = "d_mechanism")]
    pub mechanism: Mechanism,
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default = "d_target")]
    pub missing_target: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_replications")]
    pub replications: usize,
    #[serde(default = "d_methods")]
    pub methods: Vec<Method>,
    /// Imputations per replication.
    #[serde(default = "d_m")]
    pub m: usize,
    /// Chained-equation sweeps per imputation.
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    /// Multiplies the error term (0 gives noiseless data).
    #[serde(default = "d_one")]
    pub noise_scale: f64,
    /// Multiplies the true coefficient functions.
    #[serde(default = "d_one")]
    pub beta_scale: f64,
}

impl ScenarioConfig {
    pub fn frm(parameter_set: u8, scenario: Scenario, missing_target: f64) -> Self {
        Self {
            study: Study::FrmSim,
            parameter_set,
            scenario,
            mechanism: Mechanism::Mar,
            n: d_n(),
            missing_target,
            seed: 0,
            replications: d_replications(),
            methods: d_methods(),
            m: d_m(),
            iterations: d_iterations(),
            noise_scale: 1.0,
            beta_scale: 1.0,
        }
    }

    pub fn srm(mechanism: Mechanism, missing_target: f64) -> Self {
        Self {
            study: Study::SrmSim,
            mechanism,
            ..Self::frm(1, Scenario::A, missing_target)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Spec("n must be at least 10".into()));
        }
        if !(self.missing_target > 0.0 && self.missing_target < 1.0) {
            return Err(Error::Spec("missing_target must lie in (0, 1)".into()));
        }
        if self.m == 0 || self.iterations == 0 {
            return Err(Error::Spec("m and iterations must be at least 1".into()));
        }
        match self.study {
            Study::FrmSim => {
                if !matches!(self.parameter_set, 1 | 2) {
                    return Err(Error::Spec("parameter_set must be 1 or 2".into()));
                }
                if self.scenario == Scenario::B {
                    scenario_b_intercepts(self.missing_target)?;
                }
            }
            Study::SrmSim => {
                srm_intercept(self.mechanism, self.missing_target)?;
            }
        }
        Ok(())
    }
}

fn target_index(p: f64) -> Result<usize> {
    [0.1, 0.2, 0.3]
        .iter()
        .position(|t| (t - p).abs() < 1e-9)
        .ok_or_else(|| {
            Error::Spec(format!(
                "missing_target {p} has no calibrated intercept (use 0.1, 0.2 or 0.3)"
            ))
        })
}

/// (alpha_0 for z2, psi_0 for Y) in scenario (b).
pub fn scenario_b_intercepts(p: f64) -> Result<(f64, f64)> {
    let k = target_index(p)?;
    Ok(([2.1, 1.3, 0.8][k], [2.3, 1.5, 0.9][k]))
}

/// (psi_0, psi_1) of the scalar-response study.
pub fn srm_intercept(mechanism: Mechanism, p: f64) -> Result<(f64, f64)> {
    let k = target_index(p)?;
    Ok(match mechanism {
        Mechanism::Mcar => ([0.9f64 / 0.1, 0.8 / 0.2, 0.7 / 0.3][k].ln(), 0.0),
        Mechanism::Mar => ([6.2, 1.0, -3.0][k], -6.0),
    })
}

pub fn study_grid() -> Grid {
    Grid::uniform(DOMAIN.0, DOMAIN.1, GRID_POINTS).expect("valid grid")
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gauss(x: f64, mu: f64) -> f64 {
    (-(x - mu).powi(2) / 2.0).exp() / (2.0 * PI).sqrt()
}

/// beta_0 .. beta_3 evaluated at `t`.
pub fn true_beta(parameter_set: u8, t: f64) -> [f64; 4] {
    match parameter_set {
        1 => [
            0.25 * t,
            (PI * t / 10.0).sin(),
            0.3 * (t / 5.0).exp(),
            -0.2 * (PI * t / 10.0).sin(),
        ],
        _ => [
            0.25 * t,
            (PI * t / 5.0).sin(),
            2.0 * gauss(t, 2.0),
            -(gauss(t, 2.0) + gauss(t, 8.0)),
        ],
    }
}

/// The four coefficient curves on `grid`.
pub fn true_coefficients(parameter_set: u8, grid: &Grid) -> [Vec<f64>; 4] {
    let mut out: [Vec<f64>; 4] = Default::default();
    for &t in grid.points() {
        for (j, b) in true_beta(parameter_set, t).into_iter().enumerate() {
            out[j].push(b);
        }
    }
    out
}

/// Coefficient function of the scalar-response study.
pub fn srm_beta(t: f64) -> f64 {
    (PI * t / 5.0).sin()
}

pub const SRM_THETA: (f64, f64) = (0.0, 1.0);
pub const SRM_NOISE_VAR: f64 = 0.5;

/// Gaussian-process error covariance `4 * 0.15^|s-t| + 0.05^2 I(s = t)`.
pub fn noise_covariance(grid: &Grid) -> DMatrix<f64> {
    let p = grid.points();
    DMatrix::from_fn(p.len(), p.len(), |a, b| {
        4.0 * 0.15f64.powf((p[a] - p[b]).abs()) + if a == b { 0.05 * 0.05 } else { 0.0 }
    })
}

/// Draws data for both studies; holds the error-covariance factor.
#[derive(Debug, Clone)]
pub struct Generator {
    grid: Grid,
    chol: DMatrix<f64>,
}

impl Default for Generator {
    fn default() -> Self {
        Self::new()
    }
}

impl Generator {
    pub fn new() -> Self {
        let grid = study_grid();
        let mut v = noise_covariance(&grid);
        for k in 0..v.nrows() {
            v[(k, k)] += 1e-10;
        }
        let chol = Cholesky::new(v)
            .expect("covariance is positive definite")
            .unpack();
        Self { grid, chol }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn gp_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.grid.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.chol * z
    }

    /// Complete data for the functional-response study: z1, z2, z3, Y.
    pub fn frm_dataset<R: Rng + ?Sized>(&self, config: &ScenarioConfig, rng: &mut R) -> Result<MixedDataset> {
        let n = config.n;
        let beta = true_coefficients(config.parameter_set, &self.grid);
        let bin = Binomial::new(1, 0.4).expect("valid binomial");
        let (mut z1, mut z2, mut z3, mut y) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for _ in 0..n {
            let a = bin.sample(rng) as f64;
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            let b = 2.0 + e1;
            let c = 0.6 * e1 + 0.8 * e2;
            let eps = self.gp_draw(rng);
            let curve: Vec<f64> = (0..self.grid.len())
                .map(|g| {
                    config.beta_scale * (beta[0][g] + beta[1][g] * a + beta[2][g] * b + beta[3][g] * c)
                        + config.noise_scale * eps[g]
                })
                .collect();
            z1.push(a);
            z2.push(b);
            z3.push(c);
            y.push(curve);
        }
        let mut d = MixedDataset::new(n);
        d.push_complete_scalar(names::Z1, ColumnKind::Binary, z1)?;
        d.push_complete_scalar(names::Z2, ColumnKind::Continuous, z2)?;
        d.push_complete_scalar(names::Z3, ColumnKind::Continuous, z3)?;
        d.push_complete_functional(names::Y, self.grid.clone(), y)?;
        Ok(d)
    }

    /// Complete data for the scalar-response study: y, z, X.
    pub fn srm_dataset<R: Rng + ?Sized>(&self, config: &ScenarioConfig, rng: &mut R) -> Result<MixedDataset> {
        let n = config.n;
        let t = self.grid.points();
        let w = self.grid.weights();
        let span = DOMAIN.1 - DOMAIN.0;
        let beta: Vec<f64> = t.iter().map(|&s| config.beta_scale * srm_beta(s)).collect();
        let bump: Vec<f64> = t.iter().map(|&s| 20.0 * gauss(s, 3.0)).collect();
        let (mut ys, mut zs, mut xs) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let u1 = rng.random_range(0.0..5.0);
            let u2 = 1.0 + 0.2 * rng.sample::<f64, _>(StandardNormal);
            let u3: f64 = rng.sample(StandardNormal);
            let v: Vec<(f64, f64)> = (1..=10)
                .map(|k| {
                    let sd = 1.0 / k as f64;
                    (
                        sd * rng.sample::<f64, _>(StandardNormal),
                        sd * rng.sample::<f64, _>(StandardNormal),
                    )
                })
                .collect();
            let x: Vec<f64> = t
                .iter()
                .zip(&bump)
                .map(|(&s, &bmp)| {
                    let mut val = u1 + u2 * s + u3 * bmp;
                    for (k, (a, b)) in v.iter().enumerate() {
                        let f = 2.0 * PI * (k + 1) as f64 / 10.0 * s;
                        val += a * f.sin() + b * f.cos();
                    }
                    val
                })
                .collect();
            let prod: Vec<f64> = x.iter().zip(&beta).map(|(a, b)| a * b).collect();
            let lin = integrate(&prod, &w)? / span;
            let eps = config.noise_scale * SRM_NOISE_VAR.sqrt() * rng.sample::<f64, _>(StandardNormal);
            ys.push(SRM_THETA.0 + SRM_THETA.1 * z + lin + eps);
            zs.push(z);
            xs.push(x);
        }
        let mut d = MixedDataset::new(n);
        d.push_complete_scalar(names::SRM_Y, ColumnKind::Continuous, ys)?;
        d.push_complete_scalar(names::SRM_Z, ColumnKind::Continuous, zs)?;
        d.push_complete_functional(names::SRM_X, self.grid.clone(), xs)?;
        Ok(d)
    }
}

pub fn gen_frm_dataset<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<MixedDataset> {
    Generator::new().frm_dataset(config, rng)
}

pub fn gen_srm_dataset<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<MixedDataset> {
    Generator::new().srm_dataset(config, rng)
}

/// `s_i = sum_g Y_i(t_g)`.
pub fn curve_sums(data: &MixedDataset) -> Result<Vec<f64>> {
    Ok(data.curves(names::Y)?.iter().map(|c| c.iter().sum()).collect())
}

/// Observation masks for the generated columns of the chosen study.
pub fn apply_missingness<R: Rng + ?Sized>(
    data: &MixedDataset,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<MixedDataset> {
    let n = data.n_rows();
    let mut out = data.clone();
    match config.study {
        Study::FrmSim => match config.scenario {
            Scenario::A => {
                let s = curve_sums(data)?;
                let k = (config.missing_target * n as f64).round() as usize;
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
                let mut obs = vec![true; n];
                for &i in &idx[..k] {
                    obs[i] = false;
                }
                out.apply_mask(names::Z2, &obs)?;
            }
            Scenario::B => {
                let (a0, p0) = scenario_b_intercepts(config.missing_target)?;
                let z1 = data.scalar(names::Z1)?;
                let z3 = data.scalar(names::Z3)?;
                let mut oz = Vec::with_capacity(n);
                let mut oy = Vec::with_capacity(n);
                for i in 0..n {
                    let (l1, l3) = (logistic(z1[i]), logistic(z3[i]));
                    oz.push(rng.random::<f64>() < logistic(a0 + l1 - l3));
                    oy.push(rng.random::<f64>() < logistic(p0 - l1 + l3));
                }
                out.apply_mask(names::Z2, &oz)?;
                out.apply_mask(names::Y, &oy)?;
            }
        },
        Study::SrmSim => {
            let (p0, p1) = srm_intercept(config.mechanism, config.missing_target)?;
            let y = data.scalar(names::SRM_Y)?;
            let obs: Vec<bool> = y
                .iter()
                .map(|v| rng.random::<f64>() < logistic(p0 + p1 * v))
                .collect();
            out.apply_mask(names::SRM_X, &obs)?;
        }
    }
    Ok(out)
}

/// Missing scalars get the observed mean; missing curves the pointwise
/// observed mean.
pub fn mean_impute(data: &MixedDataset) -> Result<MixedDataset> {
    let mut out = data.clone();
    for (j, col) in data.columns().iter().enumerate() {
        if col.is_complete() {
            continue;
        }
        let obs: Vec<usize> = (0..data.n_rows()).filter(|&i| col.observed[i]).collect();
        if obs.is_empty() {
            return Err(Error::Unimputable(col.name.clone()));
        }
        let k = obs.len() as f64;
        match &col.data {
            ColumnData::Scalar(v) => {
                let m = obs.iter().map(|&i| v[i]).sum::<f64>() / k;
                for i in (0..data.n_rows()).filter(|&i| !col.observed[i]) {
                    out.fill_scalar(j, i, m);
                }
            }
            ColumnData::Functional(c) => {
                let g = c[obs[0]].len();
                let mut m = vec![0.0; g];
                for &i in &obs {
                    for (a, b) in m.iter_mut().zip(&c[i]) {
                        *a += b;
                    }
                }
                m.iter_mut().for_each(|a| *a /= k);
                for i in (0..data.n_rows()).filter(|&i| !col.observed[i]) {
                    out.fill_curve(j, i, m.clone());
                }
            }
        }
    }
    Ok(out)
}

pub fn complete_cases(data: &MixedDataset) -> MixedDataset {
    data.select_rows(&data.complete_row_indices())
}

/// One replication's estimate of a coefficient curve with its band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEstimate {
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarEstimate {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMetrics {
    pub method: Method,
    pub coefficient: String,
    pub t: Vec<f64>,
    pub mean_estimate: Vec<f64>,
    pub pw_sb: Vec<f64>,
    pub pw_cov: Vec<f64>,
    pub pw_width: Vec<f64>,
    /// Grid points where the Monte Carlo sd is zero (pwSB set to 0).
    pub degenerate: Vec<bool>,
    pub mean_sb: f64,
    pub mean_abs_sb: f64,
    pub mean_cov: f64,
    pub mean_width: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub method: Method,
    pub coefficient: String,
    pub mse: f64,
    pub mse_sd: f64,
    pub std_bias: f64,
    pub coverage: f64,
    pub width: f64,
    pub replications: usize,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// Pointwise standardized bias, coverage and width over replications.
pub fn evaluate_curve(
    method: Method,
    coefficient: &str,
    t: &[f64],
    truth: &[f64],
    reps: &[CurveEstimate],
) -> Result<CurveMetrics> {
    if reps.len() < 2 {
        return Err(Error::InsufficientData(
            "metrics need at least two replications".into(),
        ));
    }
    let g = t.len();
    if truth.len() != g
        || reps
            .iter()
            .any(|r| r.estimate.len() != g || r.lower.len() != g || r.upper.len() != g)
    {
        return Err(Error::Dimension(
            "estimates, bands and truth must share the grid".into(),
        ));
    }
    let r = reps.len() as f64;
    let mut out = CurveMetrics {
        method,
        coefficient: coefficient.to_string(),
        t: t.to_vec(),
        mean_estimate: Vec::with_capacity(g),
        pw_sb: Vec::with_capacity(g),
        pw_cov: Vec::with_capacity(g),
        pw_width: Vec::with_capacity(g),
        degenerate: Vec::with_capacity(g),
        mean_sb: 0.0,
        mean_abs_sb: 0.0,
        mean_cov: 0.0,
        mean_width: 0.0,
        replications: reps.len(),
    };
    for k in 0..g {
        let est: Vec<f64> = reps.iter().map(|x| x.estimate[k]).collect();
        let (m, sd) = mean_sd(&est);
        let degenerate = sd.is_nan() || sd <= 0.0;
        out.mean_estimate.push(m);
        out.pw_sb.push(if degenerate { 0.0 } else { (m - truth[k]) / sd });
        out.degenerate.push(degenerate);
        out.pw_cov.push(
            reps.iter()
                .filter(|x| x.lower[k] <= truth[k] && truth[k] <= x.upper[k])
                .count() as f64
                / r,
        );
        out.pw_width
            .push(reps.iter().map(|x| x.upper[k] - x.lower[k]).sum::<f64>() / r);
    }
    let gf = g as f64;
    out.mean_sb = out.pw_sb.iter().sum::<f64>() / gf;
    out.mean_abs_sb = out.pw_sb.iter().map(|v| v.abs()).sum::<f64>() / gf;
    out.mean_cov = out.pw_cov.iter().sum::<f64>() / gf;
    out.mean_width = out.pw_width.iter().sum::<f64>() / gf;
    Ok(out)
}

pub fn evaluate_scalar(
    method: Method,
    coefficient: &str,
    truth: f64,
    reps: &[ScalarEstimate],
) -> Result<ScalarMetrics> {
    if reps.len() < 2 {
        return Err(Error::InsufficientData(
            "metrics need at least two replications".into(),
        ));
    }
    let est: Vec<f64> = reps.iter().map(|r| r.estimate).collect();
    let sq: Vec<f64> = est.iter().map(|e| (e - truth).powi(2)).collect();
    let (m, sd) = mean_sd(&est);
    let (mse, mse_sd) = mean_sd(&sq);
    let r = reps.len() as f64;
    Ok(ScalarMetrics {
        method,
        coefficient: coefficient.to_string(),
        mse,
        mse_sd,
        std_bias: if sd > 0.0 { (m - truth) / sd } else { 0.0 },
        coverage: reps
            .iter()
            .filter(|x| x.lower <= truth && truth <= x.upper)
            .count() as f64
            / r,
        width: reps.iter().map(|x| x.upper - x.lower).sum::<f64>() / r,
        replications: reps.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessSummary {
    /// Variable name, or `any` for rows with at least one missing cell.
    pub variable: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub replication: usize,
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: ScenarioConfig,
    pub curves: Vec<CurveMetrics>,
    pub scalars: Vec<ScalarMetrics>,
    pub missingness: Vec<MissingnessSummary>,
    pub failures: Vec<MethodFailure>,
}

impl MetricReport {
    pub fn curve(&self, method: Method, coefficient: &str) -> Option<&CurveMetrics> {
        self.curves
            .iter()
            .find(|c| c.method == method && c.coefficient == coefficient)
    }

    pub fn scalar(&self, method: Method, coefficient: &str) -> Option<&ScalarMetrics> {
        self.scalars
            .iter()
            .find(|c| c.method == method && c.coefficient == coefficient)
    }
}

/// Analysis-model coefficients reported for each study.
pub fn coefficient_names(study: Study) -> Vec<&'static str> {
    match study {
        Study::FrmSim => vec!["beta0", "beta1", "beta2", "beta3"],
        Study::SrmSim => vec!["beta1"],
    }
}

fn frm_analysis_spec() -> FrmSpec {
    FrmSpec::new(names::Y, &[names::Z1, names::Z2, names::Z3], &[])
}

fn srm_analysis_spec() -> SrmSpec {
    SrmSpec::new(names::SRM_Y, &[names::SRM_Z], &[names::SRM_X], Family::Gaussian)
}

/// Imputation models used by the experiments.
pub fn imputation_spec(config: &ScenarioConfig, seed: u64) -> ImputationSpec {
    let mut spec = ImputationSpec {
        m: config.m,
        iterations: config.iterations,
        seed,
        ..Default::default()
    };
    match config.study {
        Study::FrmSim => {
            spec.models.insert(
                names::Z2.into(),
                ConditionalModel::Srm(SrmSpec::new(
                    names::Z2,
                    &[names::Z1, names::Z3],
                    &[names::Y],
                    Family::Gaussian,
                )),
            );
            spec.models
                .insert(names::Y.into(), ConditionalModel::Frm(frm_analysis_spec()));
        }
        Study::SrmSim => {
            spec.models.insert(
                names::SRM_X.into(),
                ConditionalModel::Frm(FrmSpec::new(names::SRM_X, &[names::SRM_Z, names::SRM_Y], &[])),
            );
        }
    }
    spec
}

/// Term labels in the analysis fit, aligned with [`coefficient_names`].
fn analysis_terms(study: Study) -> Vec<&'static str> {
    match study {
        Study::FrmSim => vec![INTERCEPT, names::Z1, names::Z2, names::Z3],
        Study::SrmSim => vec![names::SRM_X],
    }
}

struct AnalysisFit {
    terms: Vec<TermEstimate>,
    /// (estimate, variance) of the scalar coefficient of interest.
    scalar: Option<(f64, f64)>,
}

fn analysis_fit(study: Study, data: &MixedDataset) -> Result<AnalysisFit> {
    match study {
        Study::FrmSim => {
            let fit = fit_frm(data, &frm_analysis_spec())?;
            Ok(AnalysisFit {
                terms: fit.term_estimates()?,
                scalar: None,
            })
        }
        Study::SrmSim => {
            let fit = fit_srm(data, &srm_analysis_spec())?;
            Ok(AnalysisFit {
                terms: fit.term_estimates()?,
                scalar: Some(fit.scalar_coefficient(names::SRM_Z)?),
            })
        }
    }
}

struct MethodResult {
    curves: Vec<CurveEstimate>,
    scalar: Option<ScalarEstimate>,
}

fn single_fit_result(study: Study, fit: &AnalysisFit, points: &[f64]) -> Result<MethodResult> {
    let z = normal_quantile(0.975);
    let mut curves = Vec::new();
    for label in analysis_terms(study) {
        let term = fit
            .terms
            .iter()
            .find(|t| t.label == label)
            .ok_or_else(|| Error::UnknownTerm(label.to_string()))?;
        let (est, se) = term.evaluate(&term.basis.design_at(points)?)?;
        curves.push(CurveEstimate {
            lower: est.iter().zip(&se).map(|(e, s)| e - z * s).collect(),
            upper: est.iter().zip(&se).map(|(e, s)| e + z * s).collect(),
            estimate: est,
        });
    }
    let scalar = fit.scalar.map(|(e, v)| ScalarEstimate {
        estimate: e,
        lower: e - z * v.sqrt(),
        upper: e + z * v.sqrt(),
    });
    Ok(MethodResult { curves, scalar })
}

fn pooled_result(study: Study, fits: &[AnalysisFit], points: &[f64]) -> Result<MethodResult> {
    let mut curves = Vec::new();
    for label in analysis_terms(study) {
        let ests: Vec<&TermEstimate> = fits
            .iter()
            .map(|f| {
                f.terms
                    .iter()
                    .find(|t| t.label == label)
                    .ok_or_else(|| Error::UnknownTerm(label.to_string()))
            })
            .collect::<Result<_>>()?;
        let band = pooled_band(&pool_functional(&ests)?, points, 0.95)?;
        curves.push(CurveEstimate {
            estimate: band.estimate,
            lower: band.lower,
            upper: band.upper,
        });
    }
    let scalar = match fits.first().and_then(|f| f.scalar) {
        Some(_) => {
            let e: Vec<f64> = fits.iter().map(|f| f.scalar.expect("scalar").0).collect();
            let v: Vec<f64> = fits.iter().map(|f| f.scalar.expect("scalar").1).collect();
            let p = pool_scalar(&e, &v, 0.95)?;
            Some(ScalarEstimate {
                estimate: p.estimate,
                lower: p.lower,
                upper: p.upper,
            })
        }
        None => None,
    };
    Ok(MethodResult { curves, scalar })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generator for replication `rep`.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(rep as u64).to_le_bytes());
    key[16..24].copy_from_slice(b"simlab\0\0");
    ChaCha8Rng::from_seed(key)
}

/// Generates the complete and masked data of one replication.
pub fn replication_data(
    gen: &Generator,
    config: &ScenarioConfig,
    rep: usize,
) -> Result<(MixedDataset, MixedDataset)> {
    let mut rng = replication_rng(config.seed, rep);
    let full = match config.study {
        Study::FrmSim => gen.frm_dataset(config, &mut rng)?,
        Study::SrmSim => gen.srm_dataset(config, &mut rng)?,
    };
    let masked = apply_missingness(&full, config, &mut rng)?;
    Ok((full, masked))
}

/// Realized missing proportions per incomplete variable plus `any`.
pub fn missing_proportions(data: &MixedDataset) -> Vec<(String, f64)> {
    let n = data.n_rows() as f64;
    let mut out: Vec<(String, f64)> = data
        .columns()
        .iter()
        .filter(|c| !c.is_complete())
        .map(|c| (c.name.clone(), c.missing_count() as f64 / n))
        .collect();
    out.push(("any".into(), 1.0 - data.complete_row_indices().len() as f64 / n));
    out
}

struct Replication {
    methods: Vec<(Method, Result<MethodResult>)>,
    missing: Vec<(String, f64)>,
}

fn run_replication(gen: &Generator, config: &ScenarioConfig, rep: usize) -> Result<Replication> {
    let (full, masked) = replication_data(gen, config, rep)?;
    let points = gen.grid().points();
    let study = config.study;
    let mut methods = Vec::new();
    for &method in &config.methods {
        let res = (|| match method {
            Method::Anm => single_fit_result(study, &analysis_fit(study, &full)?, points),
            Method::Cca => single_fit_result(study, &analysis_fit(study, &complete_cases(&masked))?, points),
            Method::Mean => single_fit_result(study, &analysis_fit(study, &mean_impute(&masked)?)?, points),
            Method::Fregmice => {
                let spec = imputation_spec(config, splitmix64(config.seed ^ splitmix64(rep as u64)));
                let run = run_fregmice(&masked, &spec)?;
                let fits = run
                    .datasets
                    .iter()
                    .map(|d| analysis_fit(study, d))
                    .collect::<Result<Vec<_>>>()?;
                pooled_result(study, &fits, points)
            }
        })();
        methods.push((method, res));
    }
    Ok(Replication {
        methods,
        missing: missing_proportions(&masked),
    })
}

/// Runs all replications and aggregates the metrics. Deterministic for a
/// given configuration; replications run in parallel when enabled.
pub fn run_experiment(config: &ScenarioConfig) -> Result<MetricReport> {
    config.validate()?;
    let gen = Generator::new();
    let reps: Vec<usize> = (0..config.replications).collect();
    let one = |r: &usize| run_replication(&gen, config, *r);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<Replication>> = {
        use rayon::prelude::*;
        reps.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Replication>> = reps.iter().map(one).collect();
    let results: Vec<Replication> = results.into_iter().collect::<Result<_>>()?;

    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();
    let coef_names = coefficient_names(config.study);
    let truth: Vec<Vec<f64>> = match config.study {
        Study::FrmSim => true_coefficients(config.parameter_set, gen.grid())
            .into_iter()
            .map(|c| c.into_iter().map(|v| v * config.beta_scale).collect())
            .collect(),
        // the generator integrates against the domain-averaged measure
        Study::SrmSim => vec![gen
            .grid()
            .points()
            .iter()
            .map(|&t| config.beta_scale * srm_beta(t) / (DOMAIN.1 - DOMAIN.0))
            .collect()],
    };
    let mut report = MetricReport {
        config: config.clone(),
        curves: Vec::new(),
        scalars: Vec::new(),
        missingness: Vec::new(),
        failures: Vec::new(),
    };
    for method in methods {
        let mut curves: Vec<Vec<CurveEstimate>> = vec![Vec::new(); coef_names.len()];
        let mut scalars = Vec::new();
        for (rep, r) in results.iter().enumerate() {
            for (m, res) in &r.methods {
                if *m != method {
                    continue;
                }
                match res {
                    Ok(res) => {
                        for (k, c) in res.curves.iter().enumerate() {
                            curves[k].push(c.clone());
                        }
                        scalars.extend(res.scalar);
                    }
                    Err(e) => report.failures.push(MethodFailure {
                        replication: rep,
                        method,
                        error: e.to_string(),
                    }),
                }
            }
        }
        if curves[0].len() < 2 {
            continue;
        }
        for (k, name) in coef_names.iter().enumerate() {
            report.curves.push(evaluate_curve(
                method,
                name,
                gen.grid().points(),
                &truth[k],
                &curves[k],
            )?);
        }
        if scalars.len() >= 2 {
            report
                .scalars
                .push(evaluate_scalar(method, "theta1", SRM_THETA.1, &scalars)?);
        }
    }
    let mut names: Vec<String> = Vec::new();
    for r in &results {
        for (v, _) in &r.missing {
            if !names.contains(v) {
                names.push(v.clone());
            }
        }
    }
    for v in names {
        let vals: Vec<f64> = results
            .iter()
            .map(|r| r.missing.iter().find(|(n, _)| *n == v).map_or(0.0, |x| x.1))
            .collect();
        let (mean, sd) = mean_sd(&vals);
        report.missingness.push(MissingnessSummary {
            variable: v,
            mean,
            sd,
        });
    }
    Ok(report)
}

/// Long-format metrics: `method,coefficient,t,statistic,value`.
pub fn write_metrics_csv<W: Write>(report: &MetricReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "coefficient", "t", "statistic", "value"])?;
    for c in &report.curves {
        for (stat, vals) in [
            ("mean", &c.mean_estimate),
            ("pwSB", &c.pw_sb),
            ("pwCov", &c.pw_cov),
            ("pwWidth", &c.pw_width),
        ] {
            for (t, v) in c.t.iter().zip(vals) {
                w.write_record([c.method.name(), &c.coefficient, &fmt_f64(*t), stat, &fmt_f64(*v)])?;
            }
        }
    }
    for s in &report.scalars {
        for (stat, v) in [
            ("mse", s.mse),
            ("mse_sd", s.mse_sd),
            ("std_bias", s.std_bias),
            ("coverage", s.coverage),
            ("width", s.width),
        ] {
            w.write_record([s.method.name(), &s.coefficient, "NA", stat, &fmt_f64(v)])?;
        }
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

/// Across-the-function means: `method,coefficient,statistic,value`.
pub fn write_summary_csv<W: Write>(report: &MetricReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "coefficient", "statistic", "value"])?;
    for c in &report.curves {
        for (stat, v) in [
            ("mean_pwSB", c.mean_sb),
            ("mean_abs_pwSB", c.mean_abs_sb),
            ("mean_pwCov", c.mean_cov),
            ("mean_pwWidth", c.mean_width),
            ("replications", c.replications as f64),
        ] {
            w.write_record([c.method.name(), &c.coefficient, stat, &fmt_f64(v)])?;
        }
    }
    for m in &report.missingness {
        w.write_record(["missingness", &m.variable, "mean", &fmt_f64(m.mean)])?;
        w.write_record(["missingness", &m.variable, "sd", &fmt_f64(m.sd)])?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn coefficient_values() {
        assert_abs_diff_eq!(true_beta(1, 4.0)[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(true_beta(1, 5.0)[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(true_beta(2, 2.0)[2], 2.0 / (2.0 * PI).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(true_beta(2, 2.0)[2], 0.7979, epsilon = 1e-4);
        assert_abs_diff_eq!(srm_beta(2.5), 1.0, epsilon = 1e-15);
        let g = study_grid();
        assert_eq!(g.len(), 101);
        assert_abs_diff_eq!(noise_covariance(&g)[(7, 7)], 4.0025, epsilon = 1e-12);
    }

    #[test]
    fn frm_generator_moments() {
        let gen = Generator::new();
        let cfg = ScenarioConfig::frm(1, Scenario::A, 0.2);
        let d = gen.frm_dataset(&cfg, &mut replication_rng(1, 0)).unwrap();
        let z2 = d.scalar(names::Z2).unwrap();
        let z3 = d.scalar(names::Z3).unwrap();
        let (m2, s2) = mean_sd(z2);
        let (m3, s3) = mean_sd(z3);
        let cov = z2.iter().zip(z3).map(|(a, b)| (a - m2) * (b - m3)).sum::<f64>() / 349.0;
        assert!((cov / (s2 * s3) - 0.6).abs() < 0.15);
        assert!(d
            .scalar(names::Z1)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0 || *v == 1.0));

        let zero = ScenarioConfig {
            beta_scale: 0.0,
            ..cfg
        };
        let d = gen.frm_dataset(&zero, &mut replication_rng(2, 0)).unwrap();
        let y = d.curves(names::Y).unwrap();
        let pointwise: Vec<f64> = (0..101)
            .map(|g| mean_sd(&y.iter().map(|c| c[g]).collect::<Vec<_>>()).1.powi(2))
            .collect();
        let v = pointwise.iter().sum::<f64>() / 101.0;
        assert!((v / 4.0025 - 1.0).abs() < 0.15, "variance {v}");
    }

    #[test]
    fn scenario_a_masks_top_sums() {
        let gen = Generator::new();
        for p in [0.1, 0.2, 0.3] {
            let cfg = ScenarioConfig::frm(1, Scenario::A, p);
            let (full, masked) = replication_data(&gen, &cfg, 3).unwrap();
            let miss = masked.column(names::Z2).unwrap().missing_count();
            assert_eq!(miss, (p * 350.0).round() as usize);
            let s = curve_sums(&full).unwrap();
            let obs = &masked.column(names::Z2).unwrap().observed;
            let max_obs = (0..350)
                .filter(|&i| obs[i])
                .map(|i| s[i])
                .fold(f64::MIN, f64::max);
            let min_mis = (0..350)
                .filter(|&i| !obs[i])
                .map(|i| s[i])
                .fold(f64::MAX, f64::min);
            assert!(min_mis > max_obs);
            let again = apply_missingness(&full, &cfg, &mut replication_rng(99, 0)).unwrap();
            assert_eq!(again.masks(), masked.masks());
        }
    }

    #[test]
    fn mean_imputation_and_complete_cases() {
        let mut d = MixedDataset::new(3);
        d.push_scalar("z", ColumnKind::Continuous, vec![Some(1.0), None, Some(3.0)])
            .unwrap();
        let g = Grid::uniform(0.0, 1.0, 4).unwrap();
        d.push_functional(
            "Y",
            g,
            vec![
                Some(vec![0.0, 1.0, 2.0, 3.0]),
                Some(vec![2.0, 3.0, 4.0, 5.0]),
                None,
            ],
        )
        .unwrap();
        let m = mean_impute(&d).unwrap();
        assert_eq!(m.scalar("z").unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(m.curves("Y").unwrap()[2], vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.curves("Y").unwrap()[0], vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(complete_cases(&d).n_rows(), 1);
        assert_eq!(complete_cases(&m), m);
    }

    #[test]
    fn curve_metrics_by_hand() {
        let t = [0.0, 1.0];
        let truth = [0.0, 1.0];
        let reps = vec![
            CurveEstimate {
                estimate: vec![1.0, 1.0],
                lower: vec![-1.0, 0.0],
                upper: vec![2.0, 2.0],
            },
            CurveEstimate {
                estimate: vec![2.0, 1.0],
                lower: vec![1.0, 0.0],
                upper: vec![3.0, 2.0],
            },
            CurveEstimate {
                estimate: vec![3.0, 1.0],
                lower: vec![2.5, 0.5],
                upper: vec![3.5, 1.5],
            },
        ];
        let m = evaluate_curve(Method::Cca, "b", &t, &truth, &reps).unwrap();
        // mean 2, sd 1 at t = 0
        assert_abs_diff_eq!(m.pw_sb[0], 2.0, epsilon = 1e-12);
        assert_eq!(m.pw_sb[1], 0.0);
        assert_eq!(m.degenerate, vec![false, true]);
        assert_abs_diff_eq!(m.pw_cov[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.pw_cov[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.pw_width[0], (3.0 + 2.0 + 1.0) / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mean_abs_sb, 1.0, epsilon = 1e-12);
        assert!(evaluate_curve(Method::Cca, "b", &t, &truth, &reps[..1]).is_err());

        let wide: Vec<CurveEstimate> = reps
            .iter()
            .map(|r| CurveEstimate {
                estimate: r.estimate.clone(),
                lower: vec![-1e300; 2],
                upper: vec![1e300; 2],
            })
            .collect();
        assert_eq!(
            evaluate_curve(Method::Cca, "b", &t, &truth, &wide)
                .unwrap()
                .pw_cov,
            vec![1.0, 1.0]
        );

        let s = [
            ScalarEstimate {
                estimate: 1.0,
                lower: 0.0,
                upper: 2.0,
            },
            ScalarEstimate {
                estimate: 3.0,
                lower: 2.5,
                upper: 3.5,
            },
        ];
        let sm = evaluate_scalar(Method::Mean, "theta1", 1.0, &s).unwrap();
        assert_abs_diff_eq!(sm.mse, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sm.std_bias, 1.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(sm.coverage, 0.5);
        assert_abs_diff_eq!(sm.width, 1.5);
    }

    #[test]
    fn srm_generator() {
        let gen = Generator::new();
        let cfg = ScenarioConfig::srm(Mechanism::Mcar, 0.1);
        let mut props = Vec::new();
        for rep in 0..40 {
            let (_, masked) = replication_data(&gen, &cfg, rep).unwrap();
            props.push(masked.column(names::SRM_X).unwrap().missing_count() as f64 / 350.0);
        }
        let (m, _) = mean_sd(&props);
        assert!((m - 0.1).abs() < 0.02, "{m}");
    }

    #[test]
    fn experiment_is_deterministic() {
        let cfg = ScenarioConfig {
            n: 60,
            replications: 2,
            methods: vec![Method::Anm],
            seed: 5,
            ..ScenarioConfig::frm(1, Scenario::A, 0.2)
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.curves.iter().all(|c| c.method == Method::Anm));
        assert_eq!(a.curves.len(), 4);
        let mut out = Vec::new();
        write_metrics_csv(&a, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("method,coefficient,t,statistic,value\n"));
        assert_eq!(text.lines().count(), 1 + 4 * 4 * 101);
    }

    #[test]
    fn config_json() {
        let c = ScenarioConfig::from_json(r#"{"study": "srm-sim", "mechanism": "MCAR", "missing_target": 0.3, "methods": ["ANM", "fregMICE"]}"#)
            .unwrap();
        assert_eq!(c.methods, vec![Method::Anm, Method::Fregmice]);
        assert!(ScenarioConfig::from_json(
            r#"{"study": "frm-sim", "scenario": "b", "missing_target": 0.25}"#
        )
        .is_err());
        assert!(ScenarioConfig::from_json(r#"{"study": "frm-sim", "parameter_set": 3}"#).is_err());
    }
}
