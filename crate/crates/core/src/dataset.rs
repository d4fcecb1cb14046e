//! Mixed scalar/functional datasets with per-cell observation masks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdgrid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnKind {
    Continuous,
    Binary,
    Functional(Grid),
}

impl ColumnKind {
    pub fn is_functional(&self) -> bool {
        matches!(self, ColumnKind::Functional(_))
    }

    pub fn grid(&self) -> Option<&Grid> {
        match self {
            ColumnKind::Functional(g) => Some(g),
            _ => None,
        }
    }
}

/// Cell values. Missing scalar cells hold NaN; missing curves hold a
/// NaN-filled vector of grid length. The mask is authoritative.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Scalar(Vec<f64>),
    Functional(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub data: ColumnData,
    pub observed: Vec<bool>,
    /// Inclusive bounds for imputed scalar values.
    pub range: Option<(f64, f64)>,
}

impl Column {
    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|o| *o)
    }

    pub fn scalars(&self) -> Option<&[f64]> {
        match &self.data {
            ColumnData::Scalar(v) => Some(v),
            ColumnData::Functional(_) => None,
        }
    }

    pub fn curves(&self) -> Option<&[Vec<f64>]> {
        match &self.data {
            ColumnData::Functional(v) => Some(v),
            ColumnData::Scalar(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MixedDataset {
    n: usize,
    columns: Vec<Column>,
}

impl MixedDataset {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            columns: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    fn check_new(&self, name: &str, len: usize) -> Result<()> {
        if self.columns.iter().any(|c| c.name == name) {
            return Err(Error::Spec(format!("duplicate column `{name}`")));
        }
        if name.is_empty() || name.contains("__t") {
            return Err(Error::Spec(format!("invalid column name `{name}`")));
        }
        if len != self.n {
            return Err(Error::Dimension(format!(
                "column `{name}` has {len} rows, dataset has {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Adds a scalar column; `None` marks a missing cell.
    pub fn push_scalar(&mut self, name: &str, kind: ColumnKind, values: Vec<Option<f64>>) -> Result<()> {
        self.check_new(name, values.len())?;
        if kind.is_functional() {
            return Err(Error::Spec(format!(
                "`{name}` pushed as scalar with functional kind"
            )));
        }
        let observed: Vec<bool> = values.iter().map(Option::is_some).collect();
        let data: Vec<f64> = values.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        for (i, (&v, &o)) in data.iter().zip(&observed).enumerate() {
            if o && !v.is_finite() {
                return Err(Error::Data(format!("`{name}` row {i}: non-finite value")));
            }
            if o && kind == ColumnKind::Binary && v != 0.0 && v != 1.0 {
                return Err(Error::Data(format!("`{name}` row {i}: binary value {v}")));
            }
        }
        self.columns.push(Column {
            name: name.to_string(),
            kind,
            data: ColumnData::Scalar(data),
            observed,
            range: None,
        });
        Ok(())
    }

    /// Adds a fully observed scalar column.
    pub fn push_complete_scalar(&mut self, name: &str, kind: ColumnKind, values: Vec<f64>) -> Result<()> {
        self.push_scalar(name, kind, values.into_iter().map(Some).collect())
    }

    /// Adds a functional column; `None` marks a wholly missing curve.
    pub fn push_functional(&mut self, name: &str, grid: Grid, curves: Vec<Option<Vec<f64>>>) -> Result<()> {
        self.check_new(name, curves.len())?;
        let g = grid.len();
        let mut observed = Vec::with_capacity(curves.len());
        let mut data = Vec::with_capacity(curves.len());
        for (i, c) in curves.into_iter().enumerate() {
            match c {
                Some(c) => {
                    if c.len() != g {
                        return Err(Error::Dimension(format!(
                            "`{name}` row {i}: curve of length {} on a {g}-point grid",
                            c.len()
                        )));
                    }
                    if c.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Data(format!("`{name}` row {i}: non-finite curve value")));
                    }
                    observed.push(true);
                    data.push(c);
                }
                None => {
                    observed.push(false);
                    data.push(vec![f64::NAN; g]);
                }
            }
        }
        self.columns.push(Column {
            name: name.to_string(),
            kind: ColumnKind::Functional(grid),
            data: ColumnData::Functional(data),
            observed,
            range: None,
        });
        Ok(())
    }

    pub fn push_complete_functional(&mut self, name: &str, grid: Grid, curves: Vec<Vec<f64>>) -> Result<()> {
        self.push_functional(name, grid, curves.into_iter().map(Some).collect())
    }

    pub fn set_range(&mut self, name: &str, lo: f64, hi: f64) -> Result<()> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Spec(format!("range for `{name}` has lo > hi")));
        }
        let col = self.column_mut(name)?;
        if col.kind.is_functional() {
            return Err(Error::Spec(format!(
                "range constraint on functional column `{name}`"
            )));
        }
        let vals = col.scalars().expect("scalar");
        if vals
            .iter()
            .zip(&col.observed)
            .any(|(v, o)| *o && (*v < lo || *v > hi))
        {
            return Err(Error::Data(format!(
                "observed values of `{name}` fall outside [{lo}, {hi}]"
            )));
        }
        col.range = Some((lo, hi));
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        Ok(&self.columns[self.index_of(name)?])
    }

    pub fn column_at(&self, idx: usize) -> &Column {
        &self.columns[idx]
    }

    pub fn column_mut(&mut self, name: &str) -> Result<&mut Column> {
        let idx = self.index_of(name)?;
        Ok(&mut self.columns[idx])
    }

    pub fn scalar(&self, name: &str) -> Result<&[f64]> {
        self.column(name)?
            .scalars()
            .ok_or_else(|| Error::Spec(format!("`{name}` is functional, expected scalar")))
    }

    pub fn curves(&self, name: &str) -> Result<&[Vec<f64>]> {
        self.column(name)?
            .curves()
            .ok_or_else(|| Error::Spec(format!("`{name}` is scalar, expected functional")))
    }

    pub fn grid(&self, name: &str) -> Result<&Grid> {
        self.column(name)?
            .kind
            .grid()
            .ok_or_else(|| Error::Spec(format!("`{name}` is scalar, expected functional")))
    }

    pub fn is_complete(&self) -> bool {
        self.columns.iter().all(Column::is_complete)
    }

    /// Errors naming the first listed variable with a missing cell.
    pub fn require_observed(&self, names: &[&str]) -> Result<()> {
        for name in names {
            let col = self.column(name)?;
            if let Some(i) = col.observed.iter().position(|o| !o) {
                return Err(Error::IncompleteData(format!("`{name}` is missing in row {i}")));
            }
        }
        Ok(())
    }

    /// Rows with every column observed.
    pub fn complete_row_indices(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.columns.iter().all(|c| c.observed[i]))
            .collect()
    }

    /// New dataset holding the given rows (repeats allowed) in order.
    pub fn select_rows(&self, rows: &[usize]) -> MixedDataset {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                kind: c.kind.clone(),
                data: match &c.data {
                    ColumnData::Scalar(v) => ColumnData::Scalar(rows.iter().map(|&i| v[i]).collect()),
                    ColumnData::Functional(v) => {
                        ColumnData::Functional(rows.iter().map(|&i| v[i].clone()).collect())
                    }
                },
                observed: rows.iter().map(|&i| c.observed[i]).collect(),
                range: c.range,
            })
            .collect();
        MixedDataset {
            n: rows.len(),
            columns,
        }
    }

    /// Overwrites a scalar cell and marks it observed.
    pub fn fill_scalar(&mut self, col: usize, row: usize, value: f64) {
        let c = &mut self.columns[col];
        if let ColumnData::Scalar(v) = &mut c.data {
            v[row] = value;
            c.observed[row] = true;
        }
    }

    /// Overwrites a curve and marks it observed.
    pub fn fill_curve(&mut self, col: usize, row: usize, curve: Vec<f64>) {
        let c = &mut self.columns[col];
        if let ColumnData::Functional(v) = &mut c.data {
            v[row] = curve;
            c.observed[row] = true;
        }
    }

    /// Observation masks by column name.
    pub fn masks(&self) -> BTreeMap<String, Vec<bool>> {
        self.columns
            .iter()
            .map(|c| (c.name.clone(), c.observed.clone()))
            .collect()
    }

    /// Replaces each column's mask (values at newly masked cells become NaN).
    pub fn apply_mask(&mut self, name: &str, observed: &[bool]) -> Result<()> {
        let n = self.n;
        let col = self.column_mut(name)?;
        if observed.len() != n {
            return Err(Error::Dimension("mask length differs from row count".into()));
        }
        for (i, &o) in observed.iter().enumerate() {
            if !o {
                col.observed[i] = false;
                match &mut col.data {
                    ColumnData::Scalar(v) => v[i] = f64::NAN,
                    ColumnData::Functional(v) => v[i].iter_mut().for_each(|x| *x = f64::NAN),
                }
            }
        }
        Ok(())
    }
}

/// Grid sidecar: `{"grids": {"Y": [t0, t1, ...]}, "binary": [...], "ranges": {...}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSidecar {
    pub grids: BTreeMap<String, Grid>,
    /// Scalar columns to read as 0/1. Other all-0/1 columns are also treated as binary
    /// unless listed in `continuous`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub binary: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub continuous: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ranges: BTreeMap<String, (f64, f64)>,
}

impl GridSidecar {
    pub fn from_dataset(data: &MixedDataset) -> Self {
        let mut out = GridSidecar::default();
        for c in data.columns() {
            match &c.kind {
                ColumnKind::Functional(g) => {
                    out.grids.insert(c.name.clone(), g.clone());
                }
                ColumnKind::Binary => out.binary.push(c.name.clone()),
                ColumnKind::Continuous => out.continuous.push(c.name.clone()),
            }
            if let Some(r) = c.range {
                out.ranges.insert(c.name.clone(), r);
            }
        }
        out
    }
}
