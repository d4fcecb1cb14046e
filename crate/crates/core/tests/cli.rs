use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fregmice::cli::PooledFile;
use fregmice::mice::{ConditionalModel, ImputationSpec};
use fregmice::simlab::ScenarioConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fregmice"));
    c.env_remove("FREGMICE_THREADS");
    c
}

fn toy(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy").join(name)
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn sorted_files(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with(prefix))
        .collect();
    v.sort();
    v
}

/// impute -> fit -> pool -> report -> diagnose on the bundled toy data.
fn pipeline(root: &Path, seed: u64) {
    let imp = root.join("imp");
    ok(bin()
        .args(["impute", "--data"])
        .arg(toy("toy.csv"))
        .arg("--grids")
        .arg(toy("grids.json"))
        .arg("--spec")
        .arg(toy("spec.json"))
        .arg("--out")
        .arg(&imp)
        .args(["--seed", &seed.to_string()])
        .output()
        .unwrap());
    let imputed = sorted_files(&imp, "imp_");
    assert_eq!(imputed.len(), 3);
    let fits = root.join("fits");
    ok(bin()
        .arg("fit")
        .arg("--data")
        .args(&imputed)
        .arg("--grids")
        .arg(imp.join("grids.json"))
        .arg("--model")
        .arg(toy("model.json"))
        .arg("--out")
        .arg(&fits)
        .output()
        .unwrap());
    let pool = root.join("pool");
    ok(bin()
        .arg("pool")
        .arg("--fits")
        .args(sorted_files(&fits, "fit_"))
        .arg("--out")
        .arg(&pool)
        .output()
        .unwrap());
    let report = ok(bin()
        .arg("report")
        .arg("--pooled")
        .arg(pool.join("pooled.json"))
        .arg("--out")
        .arg(root.join("report.txt"))
        .output()
        .unwrap());
    assert_eq!(report.stdout, fs::read(root.join("report.txt")).unwrap());
    ok(bin()
        .arg("diagnose")
        .arg("--data")
        .arg(toy("toy.csv"))
        .arg("--grids")
        .arg(toy("grids.json"))
        .arg("--run")
        .arg(&imp)
        .arg("--out")
        .arg(root.join("diag"))
        .output()
        .unwrap());
}

fn all_files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn toy_pipeline_outputs() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), 2024);
    let root = dir.path();

    let bands = fs::read_to_string(root.join("pool/bands.csv")).unwrap();
    let mut lines = bands.lines();
    assert_eq!(lines.next(), Some("term,t,estimate,se,lo,hi"));
    // four curve terms on the 26-point toy grid
    assert_eq!(lines.count(), 4 * 26);

    let pooled: PooledFile =
        serde_json::from_str(&fs::read_to_string(root.join("pool/pooled.json")).unwrap()).unwrap();
    assert_eq!(pooled.m, 3);
    assert_eq!(pooled.response, "Y");
    let labels: Vec<&str> = pooled.terms.iter().map(|t| t.pooled.label.as_str()).collect();
    assert_eq!(labels, ["intercept", "z1", "z2", "z3"]);
    for t in &pooled.terms {
        for g in 0..t.band.se.len() {
            assert!(t.band.se[g].powi(2) + 1e-12 >= t.band.within_var[g]);
            assert!(t.band.lower[g] <= t.band.estimate[g] && t.band.estimate[g] <= t.band.upper[g]);
        }
    }

    // observed cells survive imputation untouched
    let original = fs::read_to_string(toy("toy.csv")).unwrap();
    let imputed = fs::read_to_string(root.join("imp/imp_1.csv")).unwrap();
    for (a, b) in original.lines().zip(imputed.lines()).skip(1) {
        for (x, y) in a.split(',').zip(b.split(',')) {
            assert_ne!(y, "NA");
            if x != "NA" {
                assert_eq!(x.parse::<f64>().unwrap(), y.parse::<f64>().unwrap());
            }
        }
    }

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("imp/run_meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 2024);
    assert_eq!(meta["m"], 3);

    let strip = fs::read_to_string(root.join("diag/strip.csv")).unwrap();
    assert!(strip.starts_with("dataset,variable,row,status,value\n"));
    assert!(strip.contains(",z2,") && strip.contains(",Y,") && strip.contains("imputed"));
    let conv = fs::read_to_string(root.join("diag/convergence.csv")).unwrap();
    assert!(conv.starts_with("stream,iteration,variable,statistic,t,value\n"));
    for svg in ["strip_z2.svg", "strip_Y.svg", "trace_z2.svg", "trace_Y.svg"] {
        assert!(fs::read_to_string(root.join("diag").join(svg))
            .unwrap()
            .starts_with("<svg"));
    }
    let report = fs::read_to_string(root.join("report.txt")).unwrap();
    assert!(report.contains("z2 (curve, 26 points)"));
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), 7);
    pipeline(b.path(), 7);
    let fa = all_files(a.path());
    let fb = all_files(b.path());
    assert_eq!(fa.len(), fb.len());
    for ((pa, ca), (pb, cb)) in fa.iter().zip(&fb) {
        assert_eq!(pa, pb);
        assert!(ca == cb, "{} differs", pa.display());
    }
    // a different seed changes the imputations
    let c = tempfile::tempdir().unwrap();
    pipeline(c.path(), 8);
    assert_ne!(
        fs::read(a.path().join("imp/imp_1.csv")).unwrap(),
        fs::read(c.path().join("imp/imp_1.csv")).unwrap()
    );
}

#[test]
fn thread_count_does_not_change_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        ok(bin()
            .env("FREGMICE_THREADS", threads)
            .arg("impute")
            .arg("--data")
            .arg(toy("toy.csv"))
            .arg("--grids")
            .arg(toy("grids.json"))
            .arg("--spec")
            .arg(toy("spec.json"))
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap());
    }
    assert_eq!(all_files(a.path()), all_files(b.path()));
}

#[test]
fn simulate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        ok(bin()
            .arg("simulate")
            .arg("--config")
            .arg(toy("simulate.json"))
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap());
    }
    let fa = all_files(a.path());
    assert_eq!(fa, all_files(b.path()));
    let metrics = String::from_utf8(fs::read(a.path().join("metrics.csv")).unwrap()).unwrap();
    assert!(metrics.starts_with("method,coefficient,t,statistic,value\n"));
    assert!(metrics.lines().skip(1).all(|l| l.starts_with("ANM,")));
    for stat in ["pwSB", "pwCov", "pwWidth"] {
        assert!(a.path().join(format!("{stat}_beta2.svg")).exists());
    }
    let summary = fs::read_to_string(a.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("method,coefficient,statistic,value\n"));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["impute", "--data", "/definitely/not/here.csv", "--grids"])
        .arg(toy("grids.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error:io:"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn bad_spec_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"m": 2, "bogus": true}"#).unwrap();
    let out = bin()
        .arg("impute")
        .arg("--data")
        .arg(toy("toy.csv"))
        .arg("--grids")
        .arg(toy("grids.json"))
        .arg("--spec")
        .arg(&spec)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert_ne!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error:parse:"));
}

#[test]
fn help_lists_every_command() {
    let out = ok(bin().arg("--help").output().unwrap());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in [
        "impute",
        "fit",
        "pool",
        "simulate",
        "diagnose",
        "report",
        "--threads",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn bundled_configs_parse() {
    ImputationSpec::from_json(&fs::read_to_string(toy("spec.json")).unwrap()).unwrap();
    let _: ConditionalModel = serde_json::from_str(&fs::read_to_string(toy("model.json")).unwrap()).unwrap();
    ScenarioConfig::from_json(&fs::read_to_string(toy("simulate.json")).unwrap()).unwrap();
    let schemas = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas");
    let mut n = 0;
    for e in fs::read_dir(schemas).unwrap() {
        let text = fs::read_to_string(e.unwrap().path()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["$schema"].is_string());
        n += 1;
    }
    assert_eq!(n, 4);
}
