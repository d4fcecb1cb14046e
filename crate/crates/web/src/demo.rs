use std::f64::consts::PI;

use fregmice::basis::BSplineBasis;
use fregmice::dataset::MixedDataset;
use fregmice::fdgrid::Grid;
use fregmice::fpca::fit_fpca;
use fregmice::frm::{fit_frm, FrmSpec};
use fregmice::mice::run_fregmice;
use fregmice::model::{FitRecord, TermBasis, TermEstimate};
use fregmice::penreg::{fit_gaussian, DesignBlock, Smoothing};
use fregmice::pool::{pool_records, pooled_band_at, Quantile};
use fregmice::simlab::{
    complete_cases, imputation_spec, replication_data, study_grid, true_coefficients, Generator, Scenario,
    ScenarioConfig,
};
use fregmice::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

const Z: f64 = 1.959963984540054;

#[derive(Debug, Clone)]
pub struct SmoothInput {
    pub seed: u64,
    pub points: usize,
    pub noise_sd: f64,
    pub basis_size: usize,
    pub log10_lambda: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SmoothOutput {
    pub t: Vec<f64>,
    pub truth: Vec<f64>,
    pub observed: Vec<f64>,
    pub fit: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub lambda: f64,
    pub edf: f64,
}

fn smooth_truth(t: f64) -> f64 {
    (2.0 * PI * t).sin() + 0.6 * (5.0 * PI * t).cos() * t
}

pub fn smooth(input: &SmoothInput) -> Result<SmoothOutput> {
    if !(10..=2000).contains(&input.points) {
        return Err(Error::Spec("points must lie in 10..=2000".into()));
    }
    if !(input.noise_sd >= 0.0 && input.noise_sd.is_finite()) {
        return Err(Error::Spec("noise sd must be finite and nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
    let grid = Grid::uniform(0.0, 1.0, input.points)?;
    let basis = BSplineBasis::new(0.0, 1.0, input.basis_size)?;
    let truth: Vec<f64> = grid.points().iter().map(|&t| smooth_truth(t)).collect();
    let observed: Vec<f64> = truth
        .iter()
        .map(|v| v + input.noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let smoothing = match input.log10_lambda {
        Some(l) => Smoothing::Fixed(10f64.powf(l)),
        None => Smoothing::Reml,
    };
    let block = DesignBlock::penalized("f", basis.eval(grid.points())?, basis.penalty_matrix(), smoothing);
    let fit = fit_gaussian(&observed, &[block])?;
    let (est, se) = TermEstimate::from_fit(&fit, "f", TermBasis::curve(&basis, &grid))?.evaluate_default()?;
    Ok(SmoothOutput {
        t: grid.points().to_vec(),
        truth,
        observed,
        lower: est.iter().zip(&se).map(|(e, s)| e - Z * s).collect(),
        upper: est.iter().zip(&se).map(|(e, s)| e + Z * s).collect(),
        fit: est,
        lambda: fit.lambdas[0],
        edf: fit.edf,
    })
}

#[derive(Debug, Clone)]
pub struct FpcaInput {
    pub seed: u64,
    pub curves: usize,
    pub pve: f64,
    pub draws: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct FpcaOutput {
    pub t: Vec<f64>,
    /// First few input curves, for display.
    pub sample: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub true_eigenvalues: Vec<f64>,
    pub pve: Vec<f64>,
    pub draws: Vec<Vec<f64>>,
}

/// Score variances of the simulated curves.
const TRUE_EIGENVALUES: [f64; 4] = [4.0, 1.5, 0.5, 0.15];

fn eigenfunction(k: usize, t: f64) -> f64 {
    let s = 2f64.sqrt();
    match k {
        0 => s * (PI * t).sin(),
        1 => s * (2.0 * PI * t).sin(),
        2 => s * (3.0 * PI * t).sin(),
        _ => s * (4.0 * PI * t).sin(),
    }
}

pub fn fpca(input: &FpcaInput) -> Result<FpcaOutput> {
    if !(2..=2000).contains(&input.curves) || input.draws > 200 {
        return Err(Error::Spec("need 2..=2000 curves and at most 200 draws".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
    let grid = Grid::uniform(0.0, 1.0, 101)?;
    let curves: Vec<Vec<f64>> = (0..input.curves)
        .map(|_| {
            let scores: Vec<f64> = TRUE_EIGENVALUES
                .iter()
                .map(|l| l.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            grid.points()
                .iter()
                .map(|&t| {
                    let mean = 1.0 + t;
                    let signal: f64 = scores
                        .iter()
                        .enumerate()
                        .map(|(k, c)| c * eigenfunction(k, t))
                        .sum();
                    mean + signal + 0.05 * rng.sample::<f64, _>(StandardNormal)
                })
                .collect()
        })
        .collect();
    let f = fit_fpca(&curves, &grid, input.pve)?;
    let draws = (0..input.draws).map(|_| f.draw_curve(&mut rng)).collect();
    Ok(FpcaOutput {
        t: grid.points().to_vec(),
        sample: curves.iter().take(12).cloned().collect(),
        mean: f.mean().to_vec(),
        eigenfunctions: f.eigenfunctions().to_vec(),
        eigenvalues: f.eigenvalues().to_vec(),
        true_eigenvalues: TRUE_EIGENVALUES.to_vec(),
        pve: f.pve().to_vec(),
        draws,
    })
}

#[derive(Debug, Clone)]
pub struct PoolInput {
    pub seed: u64,
    pub n: usize,
    /// Share of rows whose `z2` is removed (largest response curves first).
    pub missing: f64,
    pub m: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BandCurve {
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub truth: Vec<f64>,
    pub complete: BandCurve,
    pub complete_cases: BandCurve,
    pub imputed: BandCurve,
}

#[derive(Debug, Clone, Serialize)]
pub struct PoolOutput {
    pub t: Vec<f64>,
    pub rows_missing: usize,
    pub coefficients: Vec<Coefficient>,
}

fn analysis_spec() -> FrmSpec {
    FrmSpec::new("Y", &["z1", "z2", "z3"], &[])
}

fn single_bands(data: &MixedDataset) -> Result<Vec<BandCurve>> {
    let record = fit_frm(data, &analysis_spec())?.to_record()?;
    pooled_bands(&[record])
}

fn pooled_bands(records: &[FitRecord]) -> Result<Vec<BandCurve>> {
    pool_records(records)?
        .iter()
        .map(|p| {
            let b = pooled_band_at(p, &p.basis.default_design()?, 0.95, Quantile::Normal)?;
            Ok(BandCurve {
                estimate: b.estimate,
                lower: b.lower,
                upper: b.upper,
            })
        })
        .collect()
}

pub fn impute_and_pool(input: &PoolInput) -> Result<PoolOutput> {
    if !(40..=1000).contains(&input.n)
        || !(1..=20).contains(&input.m)
        || !(1..=30).contains(&input.iterations)
    {
        return Err(Error::Spec(
            "need 40 <= n <= 1000, 1 <= m <= 20 and 1 <= iterations <= 30".into(),
        ));
    }
    if !(input.missing > 0.0 && input.missing <= 0.6) {
        return Err(Error::Spec("missing share must lie in (0, 0.6]".into()));
    }
    let config = ScenarioConfig {
        n: input.n,
        seed: input.seed,
        m: input.m,
        iterations: input.iterations,
        ..ScenarioConfig::frm(1, Scenario::A, input.missing)
    };
    let (full, masked) = replication_data(&Generator::new(), &config, 0)?;
    let run = run_fregmice(&masked, &imputation_spec(&config, input.seed))?;
    let records = run
        .datasets
        .iter()
        .map(|d| fit_frm(d, &analysis_spec())?.to_record())
        .collect::<Result<Vec<_>>>()?;
    let grid = study_grid();
    let truth = true_coefficients(1, &grid);
    let mut complete = single_bands(&full)?.into_iter();
    let mut cca = single_bands(&complete_cases(&masked))?.into_iter();
    let mut imputed = pooled_bands(&records)?.into_iter();
    let coefficients = truth
        .into_iter()
        .enumerate()
        .map(|(j, truth)| Coefficient {
            name: format!("beta{j}"),
            truth,
            complete: complete.next().expect("four terms"),
            complete_cases: cca.next().expect("four terms"),
            imputed: imputed.next().expect("four terms"),
        })
        .collect();
    Ok(PoolOutput {
        t: grid.points().to_vec(),
        rows_missing: masked.column("z2")?.missing_count(),
        coefficients,
    })
}
