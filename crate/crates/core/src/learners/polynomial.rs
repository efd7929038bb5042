//! Polynomial basis expansion learner. No sample splitting is needed: A1 is
//! the full sample and Ω is the least squares projection onto the design.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use super::{HatMatrix, LearnerTag};
use crate::data::{hstack, select_entries, select_rows, Dataset};
use crate::error::{Result, TsciError};
use crate::linalg::{pivoted_qr, solve_least_squares};
use crate::rng;

pub const MAX_AUTO_DEGREE: usize = 5;
pub const CV_FOLDS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct PolySpec {
    /// `None` selects the degree by cross-validation.
    pub degree: Option<usize>,
    pub seed: u64,
}

impl Default for PolySpec {
    fn default() -> Self {
        PolySpec {
            degree: None,
            seed: 0,
        }
    }
}

/// A column with exactly two distinct values.
pub fn is_binary(col: &[f64]) -> bool {
    let first = col[0];
    let Some(&other) = col.iter().find(|&&v| v != first) else {
        return false;
    };
    col.iter().all(|&v| v == first || v == other)
}

fn has_binary_column(z: &DMatrix<f64>) -> bool {
    (0..z.ncols()).any(|j| is_binary(z.column(j).as_slice()))
}

/// `[1 | Z | Z^2 | ... | Z^degree | X]`, powers taken column by column.
pub fn poly_design(z: &DMatrix<f64>, x: &DMatrix<f64>, degree: usize) -> DMatrix<f64> {
    let n = z.nrows();
    let ones = DMatrix::from_element(n, 1, 1.0);
    let powers: Vec<DMatrix<f64>> = (1..=degree)
        .map(|k| z.map(|v| v.powi(k as i32)))
        .collect();
    let mut parts: Vec<&DMatrix<f64>> = vec![&ones];
    parts.extend(powers.iter());
    parts.push(x);
    hstack(&parts)
}

/// Ten-fold cross-validated mean squared error of each degree `1..=max`.
pub fn cv_errors(dataset: &Dataset, max_degree: usize, seed: u64) -> Vec<f64> {
    let n = dataset.n();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng_from(seed, &[rng::STREAM_CV]));
    let folds: Vec<Vec<usize>> = (0..CV_FOLDS)
        .map(|f| idx.iter().copied().skip(f).step_by(CV_FOLDS).collect())
        .collect();

    (1..=max_degree)
        .map(|degree| {
            let design = poly_design(&dataset.z, &dataset.x, degree);
            let mut sse = 0.0;
            for test in &folds {
                let mut in_test = vec![false; n];
                test.iter().for_each(|&i| in_test[i] = true);
                let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
                let coef = solve_least_squares(
                    &select_rows(&design, &train),
                    &select_entries(&dataset.d, &train),
                );
                let pred = select_rows(&design, test) * coef;
                let obs = select_entries(&dataset.d, test);
                sse += (obs - pred).norm_squared();
            }
            sse / n as f64
        })
        .collect()
}

pub fn select_degree(dataset: &Dataset, seed: u64) -> usize {
    if has_binary_column(&dataset.z) {
        return 1;
    }
    let errors = cv_errors(dataset, MAX_AUTO_DEGREE, seed);
    errors
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k + 1)
        .unwrap_or(1)
}

pub fn polynomial_hat_matrix(dataset: &Dataset, spec: &PolySpec) -> Result<HatMatrix> {
    let degree = match spec.degree {
        Some(0) => {
            return Err(TsciError::InvalidParameter("degree must be at least 1".into()))
        }
        Some(d) => {
            if d > 1 && has_binary_column(&dataset.z) {
                return Err(TsciError::BinaryInstrumentPolynomial);
            }
            d
        }
        None => select_degree(dataset, spec.seed),
    };
    let design = poly_design(&dataset.z, &dataset.x, degree);
    let qr = pivoted_qr(&design);
    let dropped = qr.dropped();
    if !dropped.is_empty() {
        warn!(
            "polynomial design is rank deficient; dropped {} column(s)",
            dropped.len()
        );
    }
    let q = qr.q();
    let omega = q * q.transpose();
    let mut hyperparams = BTreeMap::new();
    hyperparams.insert("degree".into(), degree.to_string());
    hyperparams.insert(
        "degree_selection".into(),
        if spec.degree.is_some() { "fixed" } else { "cv" }.into(),
    );
    Ok(HatMatrix {
        omega,
        rows: (0..dataset.n()).collect(),
        learner: LearnerTag::Polynomial,
        hyperparams,
    })
}
