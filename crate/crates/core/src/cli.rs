//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_f64, read_dataset, read_sidecar, write_dataset, write_sidecar, MISSING};
use crate::dataset::{ColumnData, GridSidecar, MixedDataset};
use crate::error::{Error, Result};
use crate::frm::fit_frm;
use crate::mice::{
    read_trace_csv, run_fregmice, run_fregmice_grouped, stream_diagnostics, write_trace_csv,
    ConditionalModel, ImputationSpec, TraceValue,
};
use crate::model::{FitRecord, ModelKind, TermBasis};
use crate::plot::{Chart, Series};
use crate::pool::{pool_records, pooled_band_at, Band, PooledCoefficient, Quantile};
use crate::simlab::{run_experiment, write_metrics_csv, write_summary_csv, ScenarioConfig};
use crate::srm::fit_srm;

#[derive(Debug, Parser)]
#[command(
    name = "fregmice",
    version,
    about = "Multiple imputation and penalized regression for mixed scalar and functional data"
)]
pub struct Cli {
    /// Worker threads for parallel streams and replications.
    #[arg(long, global = true, env = "FREGMICE_THREADS")]
    pub threads: Option<usize>,
    /// Print the files written.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Impute missing cells M times by chained equations.
    Impute(ImputeArgs),
    /// Fit a functional- or scalar-response model to one or more datasets.
    Fit(FitArgs),
    /// Pool fits from imputed datasets into estimates with pointwise bands.
    Pool(PoolArgs),
    /// Run a simulation study and write performance metrics.
    Simulate(SimulateArgs),
    /// Convergence traces and observed-versus-imputed strip data.
    Diagnose(DiagnoseArgs),
    /// Print a plain-text summary of pooled estimates.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Wide CSV (functional columns `<var>__t<k>`, missing as empty or NA).
    #[arg(long)]
    pub data: PathBuf,
    /// JSON sidecar with grids, binary/continuous overrides and ranges.
    #[arg(long)]
    pub grids: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Imputation spec JSON (defaults: all other columns as predictors).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the imputation spec.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the number of imputations.
    #[arg(long)]
    pub m: Option<usize>,
    /// Overrides the number of sweeps.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Impute each level of this fully observed scalar separately.
    #[arg(long)]
    pub group_by: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// One or more datasets (e.g. imp_1.csv imp_2.csv ...).
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub grids: PathBuf,
    /// Model JSON: {"frm": {...}} or {"srm": {...}}.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PoolArgs {
    /// Fit JSON files written by `fit`.
    #[arg(long, num_args = 1.., required = true)]
    pub fits: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Student-t critical values with Rubin's degrees of freedom.
    #[arg(long)]
    pub t_quantile: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario config JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// The incomplete input dataset.
    #[command(flatten)]
    pub input: DataArgs,
    /// Output directory of `impute` (trace.csv and imp_*.csv).
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// pooled.json written by `pool`.
    #[arg(long)]
    pub pooled: PathBuf,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("error:{}:{}", e.category(), detail);
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.category() {
        "io" => 2,
        "parse" => 3,
        "spec" => 4,
        "data" => 5,
        _ => 6,
    }
}

fn execute(cli: &Cli) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = cli.threads {
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let mut out = Output { verbose: cli.verbose };
    match &cli.command {
        Command::Impute(a) => impute(a, &mut out),
        Command::Fit(a) => fit(a, &mut out),
        Command::Pool(a) => pool(a, &mut out),
        Command::Simulate(a) => simulate(a, &mut out),
        Command::Diagnose(a) => diagnose(a, &mut out),
        Command::Report(a) => report(a, &mut out),
    }
}

struct Output {
    verbose: bool,
}

impl Output {
    fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
        fs::write(path, contents).map_err(|e| Error::io(path, e))?;
        self.note(path);
        Ok(())
    }

    fn note(&self, path: &Path) {
        if self.verbose {
            eprintln!("wrote {}", path.display());
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn load(input: &DataArgs) -> Result<(MixedDataset, GridSidecar)> {
    let sidecar = read_sidecar(&input.grids)?;
    let data = read_dataset(&input.data, &sidecar)?;
    Ok((data, sidecar))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn impute(a: &ImputeArgs, out: &mut Output) -> Result<()> {
    let (data, sidecar) = load(&a.input)?;
    let mut spec = match &a.spec {
        Some(p) => ImputationSpec::from_json(&read_text(p)?)?,
        None => ImputationSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(m) = a.m {
        spec.m = m;
    }
    if let Some(v) = a.iterations {
        spec.iterations = v;
    }
    let run = match &a.group_by {
        Some(g) => run_fregmice_grouped(&data, &spec, g)?,
        None => run_fregmice(&data, &spec)?,
    };
    ensure_dir(&a.out)?;
    for (k, d) in run.datasets.iter().enumerate() {
        let p = a.out.join(format!("imp_{}.csv", k + 1));
        write_dataset(&p, d)?;
        out.note(&p);
    }
    let grids = grid_points(&sidecar);
    let diag = stream_diagnostics(&run.traces, &grids);
    out.write(
        &a.out.join("trace.csv"),
        csv_bytes(|b| write_trace_csv(&diag.rows, b))?,
    )?;
    out.write(&a.out.join("run_meta.json"), to_json(&run.meta())?)?;
    let p = a.out.join("grids.json");
    write_sidecar(&p, &sidecar)?;
    out.note(&p);
    Ok(())
}

fn grid_points(sidecar: &GridSidecar) -> BTreeMap<String, Vec<f64>> {
    sidecar
        .grids
        .iter()
        .map(|(k, g)| (k.clone(), g.points().to_vec()))
        .collect()
}

fn fit(a: &FitArgs, out: &mut Output) -> Result<()> {
    let sidecar = read_sidecar(&a.grids)?;
    let model: ConditionalModel = serde_json::from_str(&read_text(&a.model)?)?;
    ensure_dir(&a.out)?;
    for path in &a.data {
        let data = read_dataset(path, &sidecar)?;
        let record = match &model {
            ConditionalModel::Frm(spec) => fit_frm(&data, spec)?.to_record()?,
            ConditionalModel::Srm(spec) => fit_srm(&data, spec)?.to_record()?,
        };
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
        out.write(&a.out.join(format!("fit_{stem}.json")), record.to_json()? + "\n")?;
    }
    Ok(())
}

/// Contents of `pooled.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledFile {
    pub model: ModelKind,
    pub response: String,
    pub m: usize,
    pub level: f64,
    pub quantile: Quantile,
    pub terms: Vec<PooledTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledTerm {
    pub pooled: PooledCoefficient,
    /// Reporting abscissae (`t`; empty for scalars; s-major pairs for surfaces).
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub band: Band,
}

fn term_points(basis: &TermBasis) -> (Vec<f64>, Vec<f64>) {
    match basis {
        TermBasis::Surface { s_grid, t_grid, .. } => crate::model::surface_pairs(s_grid, t_grid),
        other => (Vec::new(), other.default_points()),
    }
}

fn pool(a: &PoolArgs, out: &mut Output) -> Result<()> {
    let records: Vec<FitRecord> = a
        .fits
        .iter()
        .map(|p| FitRecord::from_json(&read_text(p)?))
        .collect::<Result<_>>()?;
    let pooled = pool_records(&records)?;
    let quantile = if a.t_quantile {
        Quantile::Rubin
    } else {
        Quantile::Normal
    };
    let mut terms = Vec::new();
    for p in pooled {
        let band = pooled_band_at(&p, &p.basis.default_design()?, a.level, quantile)?;
        let (s, t) = term_points(&p.basis);
        terms.push(PooledTerm {
            pooled: p,
            s,
            t,
            band,
        });
    }
    let file = PooledFile {
        model: records[0].model,
        response: records[0].response.clone(),
        m: records.len(),
        level: a.level,
        quantile,
        terms,
    };
    ensure_dir(&a.out)?;
    out.write(&a.out.join("pooled.json"), to_json(&file)?)?;
    out.write(
        &a.out.join("bands.csv"),
        csv_bytes(|b| write_bands_csv(&file, b))?,
    )?;
    Ok(())
}

/// Curve terms one row per grid point; scalar terms one row with `t = NA`.
/// Surfaces are only in pooled.json.
pub fn write_bands_csv<W: std::io::Write>(file: &PooledFile, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["term", "t", "estimate", "se", "lo", "hi"])?;
    for term in &file.terms {
        let b = &term.band;
        match term.pooled.basis {
            TermBasis::Surface { .. } => continue,
            TermBasis::Scalar => {
                w.write_record([
                    term.pooled.label.clone(),
                    MISSING.to_string(),
                    fmt_f64(b.estimate[0]),
                    fmt_f64(b.se[0]),
                    fmt_f64(b.lower[0]),
                    fmt_f64(b.upper[0]),
                ])?;
            }
            TermBasis::Curve { .. } => {
                for (g, t) in term.t.iter().enumerate() {
                    w.write_record([
                        term.pooled.label.clone(),
                        fmt_f64(*t),
                        fmt_f64(b.estimate[g]),
                        fmt_f64(b.se[g]),
                        fmt_f64(b.lower[g]),
                        fmt_f64(b.upper[g]),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn simulate(a: &SimulateArgs, out: &mut Output) -> Result<()> {
    let mut config = ScenarioConfig::from_json(&read_text(&a.config)?)?;
    if let Some(r) = a.replications {
        config.replications = r;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let report = run_experiment(&config)?;
    ensure_dir(&a.out)?;
    out.write(
        &a.out.join("metrics.csv"),
        csv_bytes(|b| write_metrics_csv(&report, b))?,
    )?;
    out.write(
        &a.out.join("summary.csv"),
        csv_bytes(|b| write_summary_csv(&report, b))?,
    )?;
    let mut coefs: Vec<&str> = report.curves.iter().map(|c| c.coefficient.as_str()).collect();
    coefs.dedup();
    coefs.sort_unstable();
    coefs.dedup();
    for coef in coefs {
        for (stat, label, reference) in [
            ("pwSB", "standardized bias", vec![0.0]),
            ("pwCov", "coverage", vec![0.95]),
            ("pwWidth", "band width", vec![]),
        ] {
            let mut chart = Chart::new(format!("{stat} {coef}"), "t", label);
            chart.reference = reference;
            for c in report.curves.iter().filter(|c| c.coefficient == coef) {
                let y = match stat {
                    "pwSB" => c.pw_sb.clone(),
                    "pwCov" => c.pw_cov.clone(),
                    _ => c.pw_width.clone(),
                };
                chart.series.push(Series::line(c.method.name(), c.t.clone(), y));
            }
            out.write(
                &a.out.join(format!("{stat}_{}.svg", file_safe(coef))),
                chart.to_svg(),
            )?;
        }
    }
    Ok(())
}

fn imputed_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(k) = name
            .strip_prefix("imp_")
            .and_then(|r| r.strip_suffix(".csv"))
            .and_then(|k| k.parse().ok())
        {
            found.push((k, path));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::io(
            dir.join("imp_1.csv"),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no imputed datasets"),
        ));
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn diagnose(a: &DiagnoseArgs, out: &mut Output) -> Result<()> {
    let (original, sidecar) = load(&a.input)?;
    let trace_path = a.run.join("trace.csv");
    let file = fs::File::open(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    let traces = read_trace_csv(file)?;
    let diag = stream_diagnostics(&traces, &grid_points(&sidecar));
    let imputed: Vec<MixedDataset> = imputed_files(&a.run)?
        .iter()
        .map(|p| read_dataset(p, &sidecar))
        .collect::<Result<_>>()?;
    ensure_dir(&a.out)?;
    out.write(
        &a.out.join("convergence.csv"),
        csv_bytes(|b| write_trace_csv(&diag.rows, b))?,
    )?;

    let trends = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["stream", "variable", "slope", "between_sd", "flagged"])?;
        for t in &diag.trends {
            w.write_record([
                t.stream.to_string(),
                t.variable.clone(),
                fmt_f64(t.slope),
                fmt_f64(t.between_sd),
                t.flagged.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    })?;
    out.write(&a.out.join("trends.csv"), trends)?;

    // strip data: per dataset, per incomplete variable, one value per row
    // (curves summarised by their grid average)
    let incomplete: Vec<usize> = (0..original.columns().len())
        .filter(|&j| !original.column_at(j).is_complete())
        .collect();
    let summary = |d: &MixedDataset, j: usize, i: usize| match &d.column_at(j).data {
        ColumnData::Scalar(v) => v[i],
        ColumnData::Functional(c) => c[i].iter().sum::<f64>() / c[i].len() as f64,
    };
    let strip = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["dataset", "variable", "row", "status", "value"])?;
        for &j in &incomplete {
            let col = original.column_at(j);
            for i in 0..original.n_rows() {
                if col.observed[i] {
                    w.write_record([
                        "0".into(),
                        col.name.clone(),
                        i.to_string(),
                        "observed".into(),
                        fmt_f64(summary(&original, j, i)),
                    ])?;
                }
            }
            for (m, d) in imputed.iter().enumerate() {
                for i in 0..original.n_rows() {
                    if !col.observed[i] {
                        w.write_record([
                            (m + 1).to_string(),
                            col.name.clone(),
                            i.to_string(),
                            "imputed".into(),
                            fmt_f64(summary(d, j, i)),
                        ])?;
                    }
                }
            }
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    })?;
    out.write(&a.out.join("strip.csv"), strip)?;

    for &j in &incomplete {
        let col = original.column_at(j);
        let name = &col.name;
        let mut strip_chart = Chart::new(
            format!("Observed and imputed {name}"),
            "dataset (0 = observed)",
            name.as_str(),
        );
        let obs: Vec<usize> = (0..original.n_rows()).filter(|&i| col.observed[i]).collect();
        strip_chart.series.push(Series::points(
            "observed",
            vec![0.0; obs.len()],
            obs.iter().map(|&i| summary(&original, j, i)).collect(),
        ));
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (m, d) in imputed.iter().enumerate() {
            for i in (0..original.n_rows()).filter(|&i| !col.observed[i]) {
                xs.push((m + 1) as f64);
                ys.push(summary(d, j, i));
            }
        }
        strip_chart.series.push(Series::points("imputed", xs, ys));
        out.write(
            &a.out.join(format!("strip_{}.svg", file_safe(name))),
            strip_chart.to_svg(),
        )?;

        let mut trace_chart = Chart::new(format!("Mean of imputed {name}"), "iteration", "mean");
        let mut by_stream: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for e in traces.iter().filter(|e| &e.variable == name) {
            let v = match &e.value {
                TraceValue::Scalar { mean, .. } => *mean,
                TraceValue::Functional { mean, .. } => mean.iter().sum::<f64>() / mean.len().max(1) as f64,
            };
            let s = by_stream.entry(e.stream).or_default();
            s.0.push(e.iteration as f64);
            s.1.push(v);
        }
        for (stream, (x, y)) in by_stream {
            trace_chart
                .series
                .push(Series::line(format!("stream {}", stream + 1), x, y));
        }
        out.write(
            &a.out.join(format!("trace_{}.svg", file_safe(name))),
            trace_chart.to_svg(),
        )?;
    }
    Ok(())
}

/// Human-readable summary of a pooled file.
pub fn render_report(file: &PooledFile) -> String {
    let mut s = String::new();
    let model = match file.model {
        ModelKind::Frm => "functional response",
        ModelKind::Srm => "scalar response",
    };
    let _ = writeln!(
        s,
        "Pooled {model} model for `{}` from {} fits",
        file.response, file.m
    );
    let quant = match file.quantile {
        Quantile::Normal => "normal",
        Quantile::Rubin => "Student t (Rubin df)",
    };
    let _ = writeln!(
        s,
        "Pointwise {:.0}% bands, {quant} critical values",
        file.level * 100.0
    );
    let _ = writeln!(s);
    for term in &file.terms {
        let b = &term.band;
        let label = &term.pooled.label;
        match term.pooled.basis {
            TermBasis::Scalar => {
                let _ = writeln!(
                    s,
                    "{label}: {:.4} (se {:.4}), interval [{:.4}, {:.4}]",
                    b.estimate[0], b.se[0], b.lower[0], b.upper[0]
                );
            }
            _ => {
                let kind = if matches!(term.pooled.basis, TermBasis::Surface { .. }) {
                    "surface"
                } else {
                    "curve"
                };
                let n = b.estimate.len().max(1) as f64;
                let lo = b.estimate.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = b.estimate.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let excl = b
                    .lower
                    .iter()
                    .zip(&b.upper)
                    .filter(|(l, u)| **l > 0.0 || **u < 0.0)
                    .count();
                let width = b.lower.iter().zip(&b.upper).map(|(l, u)| u - l).sum::<f64>() / n;
                let between = b.between_var.iter().sum::<f64>();
                let total = b.se.iter().map(|v| v * v).sum::<f64>();
                let share = if total > 0.0 {
                    (1.0 + 1.0 / file.m as f64) * between / total
                } else {
                    0.0
                };
                let _ = writeln!(s, "{label} ({kind}, {} points)", b.estimate.len());
                let _ = writeln!(s, "  estimate range      [{lo:.4}, {hi:.4}]");
                let _ = writeln!(s, "  mean band width     {width:.4}");
                let _ = writeln!(s, "  band excludes zero  {excl} of {} points", b.estimate.len());
                let _ = writeln!(s, "  between-imputation share of variance {share:.3}");
            }
        }
    }
    s
}

fn report(a: &ReportArgs, out: &mut Output) -> Result<()> {
    let file: PooledFile = serde_json::from_str(&read_text(&a.pooled)?)?;
    let text = render_report(&file);
    print!("{text}");
    if let Some(p) = &a.out {
        out.write(p, text)?;
    }
    Ok(())
}
