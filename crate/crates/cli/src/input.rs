//! CSV loading and the violation space mini-language.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use tsci_core::{
    create_interactions, create_monomials, validate_dataset, Dataset, NamedColumn, RawColumns,
};

use crate::config::RunConfig;
use crate::{CliError, CliResult};

/// Numeric columns of a CSV file with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    names: Vec<String>,
    columns: HashMap<String, Vec<f64>>,
    rows: usize,
}

impl Table {
    pub fn from_reader<R: std::io::Read>(reader: R) -> CliResult<Table> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let names: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::Validation(format!("cannot read CSV header: {e}")))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut data: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        let mut rows = 0;
        for (r, record) in rdr.records().enumerate() {
            let record =
                record.map_err(|e| CliError::Validation(format!("CSV row {}: {e}", r + 1)))?;
            for (j, field) in record.iter().enumerate() {
                let field = field.trim();
                // unparseable cells become NaN and are reported for used columns only
                let v = field.parse::<f64>().unwrap_or(f64::NAN);
                data[j].push(v);
            }
            rows += 1;
        }
        let mut columns = HashMap::new();
        for (name, values) in names.iter().zip(data) {
            if columns.insert(name.clone(), values).is_some() {
                return Err(CliError::Validation(format!(
                    "duplicate CSV header `{name}`"
                )));
            }
        }
        Ok(Table {
            names,
            columns,
            rows,
        })
    }

    pub fn from_path(path: &Path) -> CliResult<Table> {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        Table::from_reader(file)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> CliResult<NamedColumn> {
        self.columns
            .get(name)
            .map(|v| NamedColumn::new(name, v.clone()))
            .ok_or_else(|| CliError::Validation(format!("column `{name}` not found in input")))
    }

    fn columns(&self, names: &[String]) -> CliResult<Vec<NamedColumn>> {
        names.iter().map(|n| self.column(n)).collect()
    }
}

/// One `+`-separated element of a violation specification.
#[derive(Debug, Clone, PartialEq)]
pub enum VioElement {
    /// `{Z, Z², ..., Z^k}`, one candidate block per power.
    Monomials(usize),
    /// `{z, z * X}` for the named instrument.
    Interactions(String),
    /// One block made of the named input columns.
    Columns(Vec<String>),
}

pub fn parse_vio(spec: &str) -> CliResult<Vec<VioElement>> {
    let bad = |m: String| CliError::Validation(format!("violation space `{spec}`: {m}"));
    spec.split('+')
        .map(|part| {
            let part = part.trim();
            let (kind, arg) = part
                .split_once(':')
                .ok_or_else(|| bad(format!("element `{part}` lacks a `kind:` prefix")))?;
            let arg = arg.trim();
            match kind.trim() {
                "monomials" => arg
                    .parse::<usize>()
                    .ok()
                    .filter(|&k| k >= 1)
                    .map(VioElement::Monomials)
                    .ok_or_else(|| bad(format!("degree `{arg}` must be a positive integer"))),
                "interactions" if !arg.is_empty() => Ok(VioElement::Interactions(arg.to_string())),
                "cols" => {
                    let names: Vec<String> = arg
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect();
                    if names.is_empty() {
                        Err(bad("`cols:` needs at least one column".into()))
                    } else {
                        Ok(VioElement::Columns(names))
                    }
                }
                other => Err(bad(format!(
                    "unknown element `{other}` (expected monomials, interactions or cols)"
                ))),
            }
        })
        .collect()
}

/// Expand the elements into violation blocks over all rows of `dataset`.
pub fn build_vio_space(
    elements: &[VioElement],
    dataset: &Dataset,
    table: &Table,
) -> CliResult<Vec<DMatrix<f64>>> {
    let mut blocks = Vec::new();
    for el in elements {
        match el {
            VioElement::Monomials(k) => {
                blocks.extend(create_monomials(&dataset.z, *k).map_err(CliError::from_core)?)
            }
            VioElement::Interactions(name) => {
                let j = dataset
                    .z_names
                    .iter()
                    .position(|z| z == name)
                    .ok_or_else(|| {
                        CliError::Validation(format!(
                            "`interactions:{name}` must name an instrument"
                        ))
                    })?;
                let z_col: DVector<f64> = dataset.z.column(j).clone_owned();
                blocks
                    .extend(create_interactions(&z_col, &dataset.x).map_err(CliError::from_core)?);
            }
            VioElement::Columns(names) => {
                let cols = table.columns(names)?;
                if let Some(c) = cols
                    .iter()
                    .find(|c| c.values.iter().any(|v| !v.is_finite()))
                {
                    return Err(CliError::Validation(format!(
                        "violation column `{}` has missing or non-numeric values",
                        c.name
                    )));
                }
                blocks.push(DMatrix::from_fn(dataset.n(), cols.len(), |i, j| {
                    cols[j].values[i]
                }));
            }
        }
    }
    Ok(blocks)
}

pub fn load_dataset(cfg: &RunConfig, table: &Table) -> CliResult<Dataset> {
    let raw = RawColumns {
        y: table.column(&cfg.y)?,
        d: table.column(&cfg.d)?,
        z: table.columns(&cfg.z)?,
        x: table.columns(&cfg.x)?,
        w: cfg.w.as_ref().map(|w| table.columns(w)).transpose()?,
    };
    validate_dataset(raw).map_err(CliError::from_core)
}

/// Headerless numeric CSV.
pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::io(path, e))?;
        let row = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CliError::Validation(format!("{}: row {}: {e}", path.display(), r + 1)))?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || ncols == 0 {
        return Err(CliError::Validation(format!(
            "{}: empty matrix",
            path.display()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}
