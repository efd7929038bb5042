//! Violation space candidates `V_0 = W, V_1, ..., V_Q` on A1.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::data::hstack;
use crate::error::{Result, TsciError};
use crate::learners::polynomial::is_binary;
use crate::linalg::IncrementalBasis;

#[derive(Debug, Clone, PartialEq)]
pub struct ViolationCandidate {
    pub q: usize,
    /// Basis `V_q`; the first `W` columns are always `W` itself.
    pub columns: DMatrix<f64>,
    pub label: String,
    /// Violation columns dropped because they added nothing to the span.
    pub dropped: usize,
}

/// Build the candidate sequence from the outcome basis `w` (rows of A1) and a
/// list of violation blocks with the same rows.
///
/// Nested: `V_q = [W | e_1 | ... | e_q]`. Non-nested: `V_q = [W | e_q]`.
/// `V_0` is `W` exactly. Violation columns already in the span of the
/// preceding columns are dropped with a warning.
pub fn build_candidates(
    w: &DMatrix<f64>,
    vio_space: &[DMatrix<f64>],
    nested: bool,
) -> Result<Vec<ViolationCandidate>> {
    let n = w.nrows();
    for (k, block) in vio_space.iter().enumerate() {
        if block.nrows() != n {
            return Err(TsciError::DimensionMismatch {
                column: format!("violation space element {}", k + 1),
                expected: n,
                found: block.nrows(),
            });
        }
    }

    let mut out = vec![ViolationCandidate {
        q: 0,
        columns: w.clone(),
        label: "W".into(),
        dropped: 0,
    }];
    let mut nested_cols: Vec<DVector<f64>> = Vec::new();
    let mut nested_basis = IncrementalBasis::new(w);
    let mut nested_dropped = 0;

    for (k, block) in vio_space.iter().enumerate() {
        let q = k + 1;
        let mut fresh = IncrementalBasis::new(w);
        let basis = if nested { &mut nested_basis } else { &mut fresh };
        let mut block_cols = Vec::new();
        let mut block_dropped = 0;
        for j in 0..block.ncols() {
            let col = block.column(j).clone_owned();
            if basis.push(&col) {
                block_cols.push(col);
            } else {
                block_dropped += 1;
            }
        }
        if block_dropped > 0 {
            warn!("violation candidate q{q}: dropped {block_dropped} linearly dependent column(s)");
        }
        let (extra, dropped) = if nested {
            nested_cols.extend(block_cols);
            nested_dropped += block_dropped;
            (nested_cols.clone(), nested_dropped)
        } else {
            (block_cols, block_dropped)
        };
        let columns = if extra.is_empty() {
            w.clone()
        } else {
            hstack(&[w, &DMatrix::from_columns(&extra)])
        };
        let label = if nested {
            (1..=q).fold("W".to_string(), |acc, i| format!("{acc} + e{i}"))
        } else {
            format!("W + e{q}")
        };
        out.push(ViolationCandidate {
            q,
            columns,
            label,
            dropped,
        });
    }
    Ok(out)
}

/// `{Z, Z^2, ..., Z^degree}`, powers taken per column without cross terms.
pub fn create_monomials(z: &DMatrix<f64>, degree: usize) -> Result<Vec<DMatrix<f64>>> {
    if degree < 1 {
        return Err(TsciError::InvalidParameter(
            "monomial degree must be at least 1".into(),
        ));
    }
    if degree > 1 && (0..z.ncols()).any(|j| is_binary(z.column(j).as_slice())) {
        warn!("monomials of a binary instrument are collinear with the instrument itself");
    }
    Ok((1..=degree)
        .map(|k| z.map(|v| v.powi(k as i32)))
        .collect())
}

/// `{z, z ⊙ X}`: the instrument and its interactions with every covariate.
pub fn create_interactions(z_col: &DVector<f64>, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    let n = z_col.len();
    if x.ncols() > 0 && x.nrows() != n {
        return Err(TsciError::DimensionMismatch {
            column: "interaction covariates".into(),
            expected: n,
            found: x.nrows(),
        });
    }
    let mut out = vec![DMatrix::from_column_slice(n, 1, z_col.as_slice())];
    if x.ncols() > 0 {
        out.push(DMatrix::from_fn(n, x.ncols(), |i, j| z_col[i] * x[(i, j)]));
    }
    Ok(out)
}
