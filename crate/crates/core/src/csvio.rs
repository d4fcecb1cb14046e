//! Wide CSV reading and writing.
//!
//! Scalar variables occupy one column each. A functional variable `Y` on a
//! `G`-point grid occupies columns `Y__t0 .. Y__t{G-1}`; the grid itself lives
//! in a JSON sidecar. Missing cells are empty or `NA`; a curve is missing only
//! when all of its cells are.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::dataset::{ColumnKind, GridSidecar, MixedDataset};
use crate::error::{Error, Result};

pub const MISSING: &str = "NA";

/// Round-trip exact float text (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        MISSING.to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_cell(raw: &str, col: &str, row: usize) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() || s == MISSING {
        return Ok(None);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Parse(format!("column `{col}` row {row}: cannot parse `{s}`")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!(
            "column `{col}` row {row}: non-finite `{s}`"
        )));
    }
    Ok(Some(v))
}

enum Slot {
    Scalar(String),
    Functional(String, usize),
}

fn split_header(h: &str) -> Result<Slot> {
    match h.rsplit_once("__t") {
        Some((name, idx)) if !name.is_empty() => {
            let g = idx
                .parse()
                .map_err(|_| Error::Parse(format!("bad functional column header `{h}`")))?;
            Ok(Slot::Functional(name.to_string(), g))
        }
        _ => Ok(Slot::Scalar(h.to_string())),
    }
}

pub fn read_sidecar(path: &Path) -> Result<GridSidecar> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_sidecar(path: &Path, sidecar: &GridSidecar) -> Result<()> {
    let text = serde_json::to_string_pretty(sidecar)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_dataset(csv_path: &Path, sidecar: &GridSidecar) -> Result<MixedDataset> {
    let file = File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
    read_dataset_from(file, sidecar)
}

pub fn read_dataset_from<R: Read>(reader: R, sidecar: &GridSidecar) -> Result<MixedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    let n = records.len();

    // variable order follows first appearance in the header
    let mut order: Vec<String> = Vec::new();
    let mut scalar_cols: BTreeMap<String, usize> = BTreeMap::new();
    let mut func_cols: BTreeMap<String, BTreeMap<usize, usize>> = BTreeMap::new();
    for (j, h) in headers.iter().enumerate() {
        match split_header(h)? {
            Slot::Scalar(name) => {
                if scalar_cols.insert(name.clone(), j).is_some() || func_cols.contains_key(&name) {
                    return Err(Error::Parse(format!("duplicate column `{name}`")));
                }
                order.push(name);
            }
            Slot::Functional(name, g) => {
                if scalar_cols.contains_key(&name) {
                    return Err(Error::Parse(format!("duplicate column `{name}`")));
                }
                let entry = func_cols.entry(name.clone()).or_default();
                if entry.is_empty() {
                    order.push(name.clone());
                }
                if entry.insert(g, j).is_some() {
                    return Err(Error::Parse(format!("duplicate column `{h}`")));
                }
            }
        }
    }
    for name in sidecar.grids.keys() {
        if !func_cols.contains_key(name) {
            return Err(Error::Spec(format!(
                "sidecar grid `{name}` has no columns in the CSV"
            )));
        }
    }

    let mut data = MixedDataset::new(n);
    for name in &order {
        if let Some(&j) = scalar_cols.get(name) {
            let values: Vec<Option<f64>> = records
                .iter()
                .enumerate()
                .map(|(i, r)| parse_cell(r.get(j).unwrap_or(""), name, i))
                .collect::<Result<_>>()?;
            let kind = if sidecar.binary.contains(name) {
                ColumnKind::Binary
            } else if sidecar.continuous.contains(name) {
                ColumnKind::Continuous
            } else {
                let obs: Vec<f64> = values.iter().flatten().copied().collect();
                if !obs.is_empty() && obs.iter().all(|&v| v == 0.0 || v == 1.0) {
                    ColumnKind::Binary
                } else {
                    ColumnKind::Continuous
                }
            };
            data.push_scalar(name, kind, values)?;
        } else {
            let cols = &func_cols[name];
            let grid = sidecar
                .grids
                .get(name)
                .ok_or_else(|| Error::Spec(format!("no grid for functional variable `{name}`")))?
                .clone();
            if cols.len() != grid.len() || cols.keys().enumerate().any(|(k, &g)| k != g) {
                return Err(Error::Spec(format!(
                    "`{name}` needs columns {name}__t0..{name}__t{} to match its {}-point grid",
                    grid.len() - 1,
                    grid.len()
                )));
            }
            let mut curves = Vec::with_capacity(n);
            for (i, r) in records.iter().enumerate() {
                let cells: Vec<Option<f64>> = cols
                    .values()
                    .map(|&j| parse_cell(r.get(j).unwrap_or(""), name, i))
                    .collect::<Result<_>>()?;
                let present = cells.iter().filter(|c| c.is_some()).count();
                if present == 0 {
                    curves.push(None);
                } else if present == cells.len() {
                    curves.push(Some(cells.into_iter().flatten().collect()));
                } else {
                    return Err(Error::Data(format!(
                        "`{name}` row {i}: partially observed curve ({present} of {} points)",
                        cells.len()
                    )));
                }
            }
            data.push_functional(name, grid, curves)?;
        }
    }
    for (name, &(lo, hi)) in &sidecar.ranges {
        data.set_range(name, lo, hi)?;
    }
    Ok(data)
}

pub fn write_dataset(path: &Path, data: &MixedDataset) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_to(&mut file, data).map_err(|e| match e {
        Error::Parse(msg) => Error::io(path, std::io::Error::other(msg)),
        other => other,
    })
}

pub fn write_dataset_to<W: Write>(writer: W, data: &MixedDataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = Vec::new();
    for c in data.columns() {
        match &c.kind {
            ColumnKind::Functional(g) => {
                header.extend((0..g.len()).map(|k| format!("{}__t{k}", c.name)));
            }
            _ => header.push(c.name.clone()),
        }
    }
    wtr.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..data.n_rows() {
        row.clear();
        for c in data.columns() {
            let obs = c.observed[i];
            match (&c.kind, c.scalars(), c.curves()) {
                (ColumnKind::Binary, Some(v), _) => row.push(if obs {
                    format!("{}", v[i] as i64)
                } else {
                    MISSING.to_string()
                }),
                (_, Some(v), _) => row.push(if obs { fmt_f64(v[i]) } else { MISSING.into() }),
                (_, _, Some(curves)) => {
                    for &x in &curves[i] {
                        row.push(if obs { fmt_f64(x) } else { MISSING.into() });
                    }
                }
                _ => unreachable!("column data matches kind"),
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdgrid::Grid;

    fn sidecar() -> GridSidecar {
        let mut s = GridSidecar::default();
        s.grids.insert("Y".into(), Grid::uniform(0.0, 3.0, 4).unwrap());
        s
    }

    #[test]
    fn reads_wide_csv() {
        let text = "id,z,Y__t0,Y__t1,Y__t2,Y__t3,b\n\
                    1,0.5,1,2,3,4,0\n\
                    2,NA,,,,,1\n\
                    3,,0,0,0,0,NA\n";
        let d = read_dataset_from(text.as_bytes(), &sidecar()).unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.names(), vec!["id", "z", "Y", "b"]);
        assert_eq!(d.column("z").unwrap().missing_count(), 2);
        assert_eq!(d.column("Y").unwrap().observed, vec![true, false, true]);
        assert_eq!(d.column("b").unwrap().kind, ColumnKind::Binary);
        assert_eq!(d.curves("Y").unwrap()[0], vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_partial_curve_and_bad_headers() {
        let text = "Y__t0,Y__t1,Y__t2,Y__t3\n1,,3,4\n";
        assert!(matches!(
            read_dataset_from(text.as_bytes(), &sidecar()),
            Err(Error::Data(_))
        ));
        let short = "Y__t0,Y__t1,Y__t2\n1,2,3\n";
        assert!(matches!(
            read_dataset_from(short.as_bytes(), &sidecar()),
            Err(Error::Spec(_))
        ));
        let junk = "z\nabc\n";
        assert!(matches!(
            read_dataset_from(junk.as_bytes(), &sidecar()),
            Err(Error::Spec(_)) | Err(Error::Parse(_))
        ));
    }

    #[test]
    fn round_trip_is_exact() {
        let text = "z,Y__t0,Y__t1,Y__t2,Y__t3\n0.1,0.3333333333333333,2,3,4\nNA,NA,NA,NA,NA\n";
        let mut s = sidecar();
        s.continuous.push("z".into());
        let d = read_dataset_from(text.as_bytes(), &s).unwrap();
        let mut out = Vec::new();
        write_dataset_to(&mut out, &d).unwrap();
        let again = read_dataset_from(out.as_slice(), &GridSidecar::from_dataset(&d)).unwrap();
        assert_eq!(again.scalar("z").unwrap()[0], 0.1);
        assert_eq!(again.curves("Y").unwrap()[0], d.curves("Y").unwrap()[0]);
        assert_eq!(again.masks(), d.masks());
        let mut out2 = Vec::new();
        write_dataset_to(&mut out2, &again).unwrap();
        assert_eq!(out, out2);
    }

    #[test]
    fn sidecar_json() {
        let s: GridSidecar =
            serde_json::from_str(r#"{"grids": {"Y": [0, 1, 2, 3]}, "ranges": {"z": [20, 80]}}"#).unwrap();
        assert_eq!(s.grids["Y"].len(), 4);
        assert_eq!(s.ranges["z"], (20.0, 80.0));
        assert!(serde_json::from_str::<GridSidecar>(r#"{"grids": {"Y": [0, 1]}}"#).is_err());
    }
}
