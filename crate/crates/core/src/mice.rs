//! Chained-equations multiple imputation for mixed scalar and functional data.
//!
//! Each stream starts from a hot-deck fill and then sweeps over the incomplete
//! variables. A visit refits the variable's conditional model on a bootstrap
//! sample of the rows where it was originally observed and replaces the
//! originally missing cells with predictive draws. Random numbers for every
//! (seed, stream, iteration, variable) come from an independent ChaCha key, so
//! results do not depend on how streams are scheduled.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnData, ColumnKind, MixedDataset};
use crate::error::{Error, Result};
use crate::fpca::{fit_fpca, pointwise_mean_sd};
use crate::frm::{fit_frm, FrmSpec};
use crate::penreg::Family;
use crate::srm::{fit_srm, SrmSpec};

/// Variance share kept when drawing functional residuals.
pub const RESIDUAL_PVE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionalModel {
    Srm(SrmSpec),
    Frm(FrmSpec),
}

impl ConditionalModel {
    pub fn response(&self) -> &str {
        match self {
            ConditionalModel::Srm(s) => &s.response,
            ConditionalModel::Frm(s) => &s.response,
        }
    }

    /// Default model: every other column as a predictor.
    pub fn default_for(data: &MixedDataset, target: &str) -> Result<Self> {
        let col = data.column(target)?;
        let others: Vec<&crate::dataset::Column> =
            data.columns().iter().filter(|c| c.name != target).collect();
        let scalars: Vec<&str> = others
            .iter()
            .filter(|c| !c.kind.is_functional())
            .map(|c| c.name.as_str())
            .collect();
        let functionals: Vec<&str> = others
            .iter()
            .filter(|c| c.kind.is_functional())
            .map(|c| c.name.as_str())
            .collect();
        Ok(match col.kind {
            ColumnKind::Functional(_) => ConditionalModel::Frm(FrmSpec::new(target, &scalars, &functionals)),
            ColumnKind::Binary => {
                ConditionalModel::Srm(SrmSpec::new(target, &scalars, &functionals, Family::Bernoulli))
            }
            ColumnKind::Continuous => {
                ConditionalModel::Srm(SrmSpec::new(target, &scalars, &functionals, Family::Gaussian))
            }
        })
    }
}

fn default_m() -> usize {
    5
}

fn default_iterations() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImputationSpec {
    /// Number of imputed datasets.
    #[serde(default = "default_m")]
    pub m: usize,
    /// Sweeps per stream.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub seed: u64,
    /// Conditional models keyed by target variable; missing entries get
    /// [`ConditionalModel::default_for`].
    #[serde(default)]
    pub models: BTreeMap<String, ConditionalModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visit_order: Option<Vec<String>>,
}

impl Default for ImputationSpec {
    fn default() -> Self {
        Self {
            m: default_m(),
            iterations: default_iterations(),
            seed: 0,
            models: BTreeMap::new(),
            visit_order: None,
        }
    }
}

impl ImputationSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Incomplete columns by ascending missing count; ties keep column order.
pub fn order_variables(data: &MixedDataset) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..data.columns().len())
        .filter(|&j| data.column_at(j).missing_count() > 0)
        .collect();
    idx.sort_by_key(|&j| (data.column_at(j).missing_count(), j));
    idx
}

/// Independent generator for one (seed, stream, iteration, variable) cell.
/// Iteration 0 is the initial fill.
pub fn substream(seed: u64, stream: u64, iteration: u64, variable: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (k, part) in [seed, stream, iteration, variable].iter().enumerate() {
        key[k * 8..(k + 1) * 8].copy_from_slice(&part.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Replaces each missing cell with a uniformly drawn observed value (whole
/// curves for functional columns).
pub fn initialize_fill<R: Rng + ?Sized>(data: &MixedDataset, rng: &mut R) -> Result<MixedDataset> {
    let mut out = data.clone();
    for j in 0..data.columns().len() {
        hot_deck(&mut out, data, j, rng)?;
    }
    Ok(out)
}

/// Fills the cells of column `j` that are missing in `original` from its
/// observed donors.
fn hot_deck<R: Rng + ?Sized>(
    target: &mut MixedDataset,
    original: &MixedDataset,
    j: usize,
    rng: &mut R,
) -> Result<()> {
    let col = original.column_at(j);
    let donors: Vec<usize> = (0..original.n_rows()).filter(|&i| col.observed[i]).collect();
    let missing: Vec<usize> = (0..original.n_rows()).filter(|&i| !col.observed[i]).collect();
    if missing.is_empty() {
        return Ok(());
    }
    if donors.is_empty() {
        return Err(Error::Unimputable(col.name.clone()));
    }
    for i in missing {
        let d = donors[rng.random_range(0..donors.len())];
        match &col.data {
            ColumnData::Scalar(v) => target.fill_scalar(j, i, v[d]),
            ColumnData::Functional(v) => target.fill_curve(j, i, v[d].clone()),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fallback {
    pub stream: usize,
    pub iteration: usize,
    pub variable: String,
    pub reason: String,
}

/// What happened during one visit.
#[derive(Debug, Clone, PartialEq)]
pub enum VisitOutcome {
    Unchanged,
    Imputed { notes: Vec<String> },
    HotDeck { reason: String },
}

fn response_is_constant(data: &MixedDataset, j: usize) -> bool {
    match &data.column_at(j).data {
        ColumnData::Scalar(v) => v.iter().all(|x| *x == v[0]),
        ColumnData::Functional(c) => c.iter().all(|x| *x == c[0]),
    }
}

fn clamp(v: f64, range: Option<(f64, f64)>) -> f64 {
    match range {
        Some((lo, hi)) => v.clamp(lo, hi),
        None => v,
    }
}

/// One visit of variable `j`. `current` must be completely filled;
/// `original` carries the original observation mask and observed values.
pub fn impute_variable_once<R: Rng + ?Sized>(
    current: &mut MixedDataset,
    j: usize,
    model: &ConditionalModel,
    original: &MixedDataset,
    rng: &mut R,
) -> Result<VisitOutcome> {
    let col = original.column_at(j);
    let obs: Vec<usize> = (0..original.n_rows()).filter(|&i| col.observed[i]).collect();
    let missing: Vec<usize> = (0..original.n_rows()).filter(|&i| !col.observed[i]).collect();
    if missing.is_empty() {
        return Ok(VisitOutcome::Unchanged);
    }
    if obs.is_empty() {
        return Err(Error::Unimputable(col.name.clone()));
    }
    if model.response() != col.name {
        return Err(Error::Spec(format!(
            "model for `{}` has response `{}`",
            col.name,
            model.response()
        )));
    }
    let boot: Vec<usize> = (0..obs.len())
        .map(|_| obs[rng.random_range(0..obs.len())])
        .collect();
    let sample = current.select_rows(&boot);
    if response_is_constant(&sample, j) {
        hot_deck(current, original, j, rng)?;
        return Ok(VisitOutcome::HotDeck {
            reason: "bootstrap response has zero variance".into(),
        });
    }
    let targets = current.select_rows(&missing);
    let range = col.range;
    let mut notes = Vec::new();
    let drawn: Result<()> = (|| {
        match model {
            ConditionalModel::Srm(spec) => {
                let fit = fit_srm(&sample, spec)?;
                for d in fit.dropped_terms() {
                    notes.push(format!("term `{d}` dropped (constant curves)"));
                }
                if fit.penalized_fit().separation {
                    notes.push("separation in Bernoulli fit".into());
                }
                let mu = fit.predict(&targets)?;
                let sigma = fit.penalized_fit().dispersion.sqrt();
                for (&i, m) in missing.iter().zip(mu) {
                    let v = match spec.family {
                        Family::Gaussian => {
                            let z: f64 = rng.sample(StandardNormal);
                            clamp(m + sigma * z, range)
                        }
                        Family::Bernoulli => f64::from(rng.random_bool(m.clamp(0.0, 1.0))),
                    };
                    current.fill_scalar(j, i, v);
                }
            }
            ConditionalModel::Frm(spec) => {
                let fit = fit_frm(&sample, spec)?;
                let resid = fit.residuals(&sample)?;
                let fpca = fit_fpca(&resid, fit.grid(), RESIDUAL_PVE)?;
                let mu = fit.predict(&targets)?;
                for (&i, m) in missing.iter().zip(mu) {
                    let e = fpca.draw_curve(rng);
                    current.fill_curve(j, i, m.iter().zip(e).map(|(a, b)| a + b).collect());
                }
            }
        }
        Ok(())
    })();
    match drawn {
        Ok(()) => Ok(VisitOutcome::Imputed { notes }),
        Err(err) => {
            hot_deck(current, original, j, rng)?;
            Ok(VisitOutcome::HotDeck {
                reason: format!("model fit failed: {err}"),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TraceValue {
    Scalar { mean: f64, sd: f64 },
    Functional { mean: Vec<f64>, sd: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stream: usize,
    /// 1-based sweep number.
    pub iteration: usize,
    pub variable: String,
    pub value: TraceValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationRun {
    pub datasets: Vec<MixedDataset>,
    pub traces: Vec<TraceEntry>,
    pub order: Vec<String>,
    pub fallbacks: Vec<Fallback>,
    pub notes: Vec<String>,
    pub spec: ImputationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub m: usize,
    pub iterations: usize,
    pub visit_order: Vec<String>,
    pub fallbacks: Vec<Fallback>,
    pub warnings: Vec<String>,
}

impl ImputationRun {
    pub fn meta(&self) -> RunMeta {
        RunMeta {
            seed: self.spec.seed,
            m: self.spec.m,
            iterations: self.spec.iterations,
            visit_order: self.order.clone(),
            fallbacks: self.fallbacks.clone(),
            warnings: self.notes.clone(),
        }
    }
}

fn trace_of(data: &MixedDataset, j: usize, missing: &[usize]) -> TraceValue {
    match &data.column_at(j).data {
        ColumnData::Scalar(v) => {
            let vals: Vec<[f64; 1]> = missing.iter().map(|&i| [v[i]]).collect();
            let (m, s) = pointwise_mean_sd(&vals, 1);
            TraceValue::Scalar { mean: m[0], sd: s[0] }
        }
        ColumnData::Functional(c) => {
            let curves: Vec<&Vec<f64>> = missing.iter().map(|&i| &c[i]).collect();
            let g = c.first().map_or(0, Vec::len);
            let (mean, sd) = pointwise_mean_sd(&curves, g);
            TraceValue::Functional { mean, sd }
        }
    }
}

struct StreamResult {
    data: MixedDataset,
    traces: Vec<TraceEntry>,
    fallbacks: Vec<Fallback>,
    notes: Vec<String>,
}

fn resolve_plan(data: &MixedDataset, spec: &ImputationSpec) -> Result<(Vec<usize>, Vec<ConditionalModel>)> {
    if spec.m == 0 || spec.iterations == 0 {
        return Err(Error::Spec("m and iterations must be at least 1".into()));
    }
    let natural = order_variables(data);
    let order = match &spec.visit_order {
        None => natural,
        Some(names) => {
            let idx: Vec<usize> = names.iter().map(|n| data.index_of(n)).collect::<Result<_>>()?;
            let mut a = idx.clone();
            let mut b = natural.clone();
            a.sort_unstable();
            b.sort_unstable();
            if a != b {
                return Err(Error::Spec(
                    "visit_order must list each incomplete variable exactly once".into(),
                ));
            }
            idx
        }
    };
    for name in spec.models.keys() {
        data.index_of(name)?;
    }
    let models = order
        .iter()
        .map(|&j| {
            let name = &data.column_at(j).name;
            let model = match spec.models.get(name) {
                Some(m) => m.clone(),
                None => ConditionalModel::default_for(data, name)?,
            };
            if model.response() != name {
                return Err(Error::Spec(format!(
                    "model listed under `{name}` has response `{}`",
                    model.response()
                )));
            }
            Ok(model)
        })
        .collect::<Result<Vec<_>>>()?;
    for &j in &order {
        if data.column_at(j).observed.iter().all(|o| !o) {
            return Err(Error::Unimputable(data.column_at(j).name.clone()));
        }
    }
    Ok((order, models))
}

fn run_stream(
    data: &MixedDataset,
    spec: &ImputationSpec,
    order: &[usize],
    models: &[ConditionalModel],
    stream: usize,
) -> Result<StreamResult> {
    let mut rng = substream(spec.seed, stream as u64, 0, 0);
    let mut current = initialize_fill(data, &mut rng)?;
    let mut traces = Vec::new();
    let mut fallbacks = Vec::new();
    let mut notes = Vec::new();
    let missing: Vec<Vec<usize>> = order
        .iter()
        .map(|&j| {
            let c = data.column_at(j);
            (0..data.n_rows()).filter(|&i| !c.observed[i]).collect()
        })
        .collect();
    for iteration in 1..=spec.iterations {
        for (k, (&j, model)) in order.iter().zip(models).enumerate() {
            let mut rng = substream(spec.seed, stream as u64, iteration as u64, j as u64);
            let name = data.column_at(j).name.clone();
            match impute_variable_once(&mut current, j, model, data, &mut rng)? {
                VisitOutcome::HotDeck { reason } => fallbacks.push(Fallback {
                    stream,
                    iteration,
                    variable: name.clone(),
                    reason,
                }),
                VisitOutcome::Imputed { notes: n } => notes.extend(
                    n.into_iter()
                        .map(|s| format!("stream {stream}, iteration {iteration}, `{name}`: {s}")),
                ),
                VisitOutcome::Unchanged => {}
            }
            traces.push(TraceEntry {
                stream,
                iteration,
                variable: name,
                value: trace_of(&current, j, &missing[k]),
            });
        }
    }
    Ok(StreamResult {
        data: current,
        traces,
        fallbacks,
        notes,
    })
}

/// Runs `spec.m` independent imputation streams.
pub fn run_fregmice(data: &MixedDataset, spec: &ImputationSpec) -> Result<ImputationRun> {
    let (order, models) = resolve_plan(data, spec)?;
    let streams: Vec<usize> = (0..spec.m).collect();
    let run = |s: &usize| run_stream(data, spec, &order, &models, *s);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<StreamResult>> = {
        use rayon::prelude::*;
        streams.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<StreamResult>> = streams.iter().map(run).collect();

    let mut out = ImputationRun {
        datasets: Vec::with_capacity(spec.m),
        traces: Vec::new(),
        order: order.iter().map(|&j| data.column_at(j).name.clone()).collect(),
        fallbacks: Vec::new(),
        notes: Vec::new(),
        spec: spec.clone(),
    };
    for r in results {
        let r = r?;
        out.datasets.push(r.data);
        out.traces.extend(r.traces);
        out.fallbacks.extend(r.fallbacks);
        out.notes.extend(r.notes);
    }
    Ok(out)
}

/// Imputes each level of the complete scalar column `group` separately and
/// reassembles the rows in their original order.
pub fn run_fregmice_grouped(
    data: &MixedDataset,
    spec: &ImputationSpec,
    group: &str,
) -> Result<ImputationRun> {
    let gcol = data.column(group)?;
    if gcol.kind.is_functional() || !gcol.is_complete() {
        return Err(Error::Spec(format!(
            "grouping variable `{group}` must be a fully observed scalar"
        )));
    }
    let values = gcol.scalars().expect("scalar");
    let mut levels: Vec<f64> = values.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut runs = Vec::new();
    for (k, level) in levels.iter().enumerate() {
        let rows: Vec<usize> = (0..data.n_rows()).filter(|&i| values[i] == *level).collect();
        let subset = data.select_rows(&rows);
        let mut sub_spec = spec.clone();
        sub_spec.seed = spec
            .seed
            .wrapping_add((k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let run = run_fregmice(&subset, &sub_spec)?;
        runs.push((rows, *level, run));
    }
    let mut datasets = vec![data.clone(); spec.m];
    let mut out = ImputationRun {
        datasets: Vec::new(),
        traces: Vec::new(),
        order: order_variables(data)
            .into_iter()
            .map(|j| data.column_at(j).name.clone())
            .collect(),
        fallbacks: Vec::new(),
        notes: Vec::new(),
        spec: spec.clone(),
    };
    for (rows, level, run) in runs {
        for (m, imputed) in run.datasets.iter().enumerate() {
            for j in 0..data.columns().len() {
                match &imputed.column_at(j).data {
                    ColumnData::Scalar(v) => {
                        for (r, &i) in rows.iter().enumerate() {
                            if !data.column_at(j).observed[i] {
                                datasets[m].fill_scalar(j, i, v[r]);
                            }
                        }
                    }
                    ColumnData::Functional(c) => {
                        for (r, &i) in rows.iter().enumerate() {
                            if !data.column_at(j).observed[i] {
                                datasets[m].fill_curve(j, i, c[r].clone());
                            }
                        }
                    }
                }
            }
        }
        out.traces.extend(run.traces.into_iter().map(|mut t| {
            t.variable = format!("{}[{group}={level}]", t.variable);
            t
        }));
        out.fallbacks.extend(run.fallbacks);
        out.notes.extend(run.notes);
    }
    out.datasets = datasets;
    Ok(out)
}

/// One row of the long-format trace table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub stream: usize,
    pub iteration: usize,
    pub variable: String,
    pub statistic: &'static str,
    /// Grid point for functional statistics.
    pub t: Option<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendFlag {
    pub stream: usize,
    pub variable: String,
    /// Least-squares slope of the mean trace over iterations.
    pub slope: f64,
    /// Cross-stream sd of the final-iteration means.
    pub between_sd: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub rows: Vec<TraceRow>,
    pub trends: Vec<TrendFlag>,
}

fn slope(y: &[f64]) -> f64 {
    let n = y.len();
    if n < 2 {
        return 0.0;
    }
    let xm = (n as f64 + 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, v) in y.iter().enumerate() {
        let dx = (k + 1) as f64 - xm;
        sxy += dx * (v - ym);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Long trace table plus per-stream trend flags. Functional variables are
/// summarised for trends by the grid average of their pointwise mean.
pub fn stream_diagnostics(traces: &[TraceEntry], grids: &BTreeMap<String, Vec<f64>>) -> Diagnostics {
    let mut rows = Vec::new();
    // (variable -> stream -> summary per iteration)
    let mut series: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for e in traces {
        let summary = match &e.value {
            TraceValue::Scalar { mean, sd } => {
                for (stat, v) in [("mean", *mean), ("sd", *sd)] {
                    rows.push(TraceRow {
                        stream: e.stream,
                        iteration: e.iteration,
                        variable: e.variable.clone(),
                        statistic: stat,
                        t: None,
                        value: v,
                    });
                }
                *mean
            }
            TraceValue::Functional { mean, sd } => {
                let ts = grids.get(&e.variable);
                for (stat, curve) in [("pointwise-mean", mean), ("pointwise-sd", sd)] {
                    for (k, v) in curve.iter().enumerate() {
                        rows.push(TraceRow {
                            stream: e.stream,
                            iteration: e.iteration,
                            variable: e.variable.clone(),
                            statistic: stat,
                            t: Some(ts.map_or(k as f64, |g| g[k])),
                            value: *v,
                        });
                    }
                }
                mean.iter().sum::<f64>() / mean.len().max(1) as f64
            }
        };
        series
            .entry(e.variable.clone())
            .or_default()
            .entry(e.stream)
            .or_default()
            .push(summary);
    }
    let mut trends = Vec::new();
    for (variable, by_stream) in &series {
        let finals: Vec<[f64; 1]> = by_stream
            .values()
            .map(|s| [*s.last().expect("nonempty")])
            .collect();
        let between_sd = pointwise_mean_sd(&finals, 1).1[0];
        for (&stream, s) in by_stream {
            let b = slope(s);
            trends.push(TrendFlag {
                stream,
                variable: variable.clone(),
                slope: b,
                between_sd,
                flagged: b.abs() > 2.0 * between_sd,
            });
        }
    }
    Diagnostics { rows, trends }
}

/// Writes the long trace table.
pub fn write_trace_csv<W: std::io::Write>(rows: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["stream", "iteration", "variable", "statistic", "t", "value"])?;
    for r in rows {
        w.write_record([
            r.stream.to_string(),
            r.iteration.to_string(),
            r.variable.clone(),
            r.statistic.to_string(),
            r.t.map_or_else(|| crate::csvio::MISSING.to_string(), crate::csvio::fmt_f64),
            crate::csvio::fmt_f64(r.value),
        ])?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

/// Reads a table written by [`write_trace_csv`] back into trace entries.
pub fn read_trace_csv<R: std::io::Read>(reader: R) -> Result<Vec<TraceEntry>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<TraceEntry> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            field(k)
                .parse()
                .map_err(|_| Error::Parse(format!("trace: bad number `{}`", field(k))))
        };
        let stream: usize = field(0)
            .parse()
            .map_err(|_| Error::Parse("trace: bad stream".into()))?;
        let iteration: usize = field(1)
            .parse()
            .map_err(|_| Error::Parse("trace: bad iteration".into()))?;
        let variable = field(2).to_string();
        let stat = field(3);
        let value = num(5)?;
        let same = out
            .last()
            .is_some_and(|e| e.stream == stream && e.iteration == iteration && e.variable == variable);
        if !same {
            let value = if stat.starts_with("pointwise") {
                TraceValue::Functional {
                    mean: Vec::new(),
                    sd: Vec::new(),
                }
            } else {
                TraceValue::Scalar {
                    mean: f64::NAN,
                    sd: f64::NAN,
                }
            };
            out.push(TraceEntry {
                stream,
                iteration,
                variable,
                value,
            });
        }
        let entry = out.last_mut().expect("pushed");
        match (&mut entry.value, stat) {
            (TraceValue::Scalar { mean, .. }, "mean") => *mean = value,
            (TraceValue::Scalar { sd, .. }, "sd") => *sd = value,
            (TraceValue::Functional { mean, .. }, "pointwise-mean") => mean.push(value),
            (TraceValue::Functional { sd, .. }, "pointwise-sd") => sd.push(value),
            _ => return Err(Error::Parse(format!("trace: unexpected statistic `{stat}`"))),
        }
    }
    Ok(out)
}
