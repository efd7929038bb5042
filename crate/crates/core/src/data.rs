//! Dataset validation and fold arithmetic.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TsciError};
use crate::rng;

pub const MIN_ROWS: usize = 20;
pub const MIN_A2: usize = 10;
pub const DEFAULT_SPLIT_PROP: f64 = 2.0 / 3.0;
pub const INTERCEPT_NAME: &str = "(Intercept)";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedColumn {
    pub name: String,
    pub values: Vec<f64>,
}

impl NamedColumn {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        NamedColumn {
            name: name.into(),
            values,
        }
    }
}

/// Columns with their roles assigned but not yet checked.
#[derive(Debug, Clone, PartialEq)]
pub struct RawColumns {
    pub y: NamedColumn,
    pub d: NamedColumn,
    pub z: Vec<NamedColumn>,
    pub x: Vec<NamedColumn>,
    /// Outcome-model basis; `None` means "use x".
    pub w: Option<Vec<NamedColumn>>,
}

/// Aligned outcome, treatment, instruments and covariates.
///
/// `w` always holds an all-ones column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub d: DVector<f64>,
    pub z: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub y_name: String,
    pub d_name: String,
    pub z_names: Vec<String>,
    pub x_names: Vec<String>,
    pub w_names: Vec<String>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Instruments and covariates side by side, the treatment learner's input.
    pub fn features(&self) -> DMatrix<f64> {
        hstack(&[&self.z, &self.x])
    }

    pub fn to_raw(&self) -> RawColumns {
        RawColumns {
            y: NamedColumn::new(&self.y_name, self.y.iter().copied().collect()),
            d: NamedColumn::new(&self.d_name, self.d.iter().copied().collect()),
            z: matrix_columns(&self.z, &self.z_names),
            x: matrix_columns(&self.x, &self.x_names),
            w: Some(matrix_columns(&self.w, &self.w_names)),
        }
    }
}

fn matrix_columns(m: &DMatrix<f64>, names: &[String]) -> Vec<NamedColumn> {
    names
        .iter()
        .enumerate()
        .map(|(j, name)| NamedColumn::new(name, m.column(j).iter().copied().collect()))
        .collect()
}

pub fn hstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = parts.first().map_or(0, |p| p.nrows());
    let p: usize = parts.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(n, p);
    let mut at = 0;
    for m in parts {
        out.view_mut((0, at), (n, m.ncols())).copy_from(*m);
        at += m.ncols();
    }
    out
}

/// Rows of `m` at `rows`, in the given order.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn select_entries(v: &DVector<f64>, rows: &[usize]) -> DVector<f64> {
    DVector::from_iterator(rows.len(), rows.iter().map(|&i| v[i]))
}

fn check_column(col: &NamedColumn, n: usize) -> Result<()> {
    if col.values.len() != n {
        return Err(TsciError::DimensionMismatch {
            column: col.name.clone(),
            expected: n,
            found: col.values.len(),
        });
    }
    if let Some(row) = col.values.iter().position(|v| !v.is_finite()) {
        return Err(TsciError::NonFinite {
            column: col.name.clone(),
            row,
        });
    }
    Ok(())
}

fn to_matrix(cols: &[NamedColumn], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j].values[i])
}

pub fn validate_dataset(raw: RawColumns) -> Result<Dataset> {
    let n = raw.y.values.len();
    if n < MIN_ROWS {
        return Err(TsciError::TooFewRows {
            min: MIN_ROWS,
            found: n,
        });
    }
    if raw.z.is_empty() {
        return Err(TsciError::NoInstruments);
    }

    let mut seen = HashSet::new();
    for col in std::iter::once(&raw.y)
        .chain(std::iter::once(&raw.d))
        .chain(&raw.z)
        .chain(&raw.x)
    {
        if !seen.insert(col.name.as_str()) {
            return Err(TsciError::DuplicateColumn(col.name.clone()));
        }
        check_column(col, n)?;
    }

    let mut w_cols = match raw.w {
        Some(w) => {
            let mut w_seen = HashSet::new();
            for col in &w {
                if !w_seen.insert(col.name.as_str()) {
                    return Err(TsciError::DuplicateColumn(col.name.clone()));
                }
                check_column(col, n)?;
            }
            w
        }
        None => raw.x.clone(),
    };
    if !w_cols.iter().any(|c| c.values.iter().all(|&v| v == 1.0)) {
        w_cols.insert(0, NamedColumn::new(INTERCEPT_NAME, vec![1.0; n]));
    }

    let d0 = raw.d.values[0];
    if raw.d.values.iter().all(|&v| v == d0) {
        return Err(TsciError::ConstantTreatment);
    }

    Ok(Dataset {
        y: DVector::from_vec(raw.y.values),
        d: DVector::from_vec(raw.d.values),
        z: to_matrix(&raw.z, n),
        x: to_matrix(&raw.x, n),
        w: to_matrix(&w_cols, n),
        y_name: raw.y.name,
        d_name: raw.d.name,
        z_names: raw.z.into_iter().map(|c| c.name).collect(),
        x_names: raw.x.into_iter().map(|c| c.name).collect(),
        w_names: w_cols.into_iter().map(|c| c.name).collect(),
    })
}

/// Partition of the row indices into the outcome-model fold `a1` and the
/// treatment-learner fold `a2`, both sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub a1: Vec<usize>,
    pub a2: Vec<usize>,
    pub seed: u64,
}

/// Size of A1 for `n` rows: `round(split_prop * n)`.
pub fn a1_size(n: usize, split_prop: f64) -> usize {
    (split_prop * n as f64).round() as usize
}

/// Uniformly random split, deterministic in `seed`. `p_w` is the width of
/// the outcome-model basis, which sets the minimum size of A1.
pub fn make_split(n: usize, split_prop: f64, seed: u64, p_w: usize) -> Result<FoldSplit> {
    if !(split_prop > 0.0 && split_prop < 1.0) {
        return Err(TsciError::InvalidSplitProportion(split_prop));
    }
    let m = a1_size(n, split_prop);
    if m < p_w + 2 {
        return Err(TsciError::FoldTooSmall {
            fold: "A1",
            size: m,
            min: p_w + 2,
        });
    }
    if n - m.min(n) < MIN_A2 {
        return Err(TsciError::FoldTooSmall {
            fold: "A2",
            size: n - m.min(n),
            min: MIN_A2,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng_from(seed, &[rng::STREAM_SPLIT]));
    let mut a1 = idx[..m].to_vec();
    let mut a2 = idx[m..].to_vec();
    a1.sort_unstable();
    a2.sort_unstable();
    Ok(FoldSplit { a1, a2, seed })
}
