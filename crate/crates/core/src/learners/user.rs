//! User supplied hat matrices.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;

use super::{HatMatrix, LearnerTag};
use crate::error::{Result, TsciError};
use crate::linalg::pivoted_qr;

/// Accepts either an `n x n` matrix, used as Ω as is, or an `n x p` design
/// with `p < n`, replaced by its least squares projection. No sample
/// splitting: A1 is the full sample.
pub fn user_hat_matrix(input: &DMatrix<f64>, n: usize) -> Result<HatMatrix> {
    let (rows, cols) = input.shape();
    if rows != n {
        return Err(TsciError::DimensionMismatch {
            column: "weight matrix".into(),
            expected: n,
            found: rows,
        });
    }
    if let Some(pos) = input.iter().position(|v| !v.is_finite()) {
        return Err(TsciError::NonFinite {
            column: format!("weight matrix column {}", pos / rows),
            row: pos % rows,
        });
    }
    let mut hyperparams = BTreeMap::new();
    let omega = if cols == n {
        hyperparams.insert("input".into(), "hat_matrix".into());
        input.clone()
    } else if cols < n {
        let qr = pivoted_qr(input);
        if !qr.dropped().is_empty() {
            warn!(
                "user design is rank deficient; dropped {} column(s)",
                qr.dropped().len()
            );
        }
        hyperparams.insert("input".into(), "design".into());
        hyperparams.insert("rank".into(), qr.rank().to_string());
        qr.q() * qr.q().transpose()
    } else {
        return Err(TsciError::InvalidParameter(format!(
            "weight matrix must be {n}x{n} or have fewer than {n} columns, got {rows}x{cols}"
        )));
    };
    Ok(HatMatrix {
        omega,
        rows: (0..n).collect(),
        learner: LearnerTag::User,
        hyperparams,
    })
}
