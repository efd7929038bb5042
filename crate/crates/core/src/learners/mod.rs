//! Treatment learners expressed as hat matrices over the fold A1.

pub mod boosting;
pub mod forest;
pub mod polynomial;
pub mod tree;
pub mod user;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{select_entries, Dataset, FoldSplit};
use crate::error::{Result, TsciError};

pub use boosting::{boosting_hat_matrix, BoostingSpec};
pub use forest::{forest_hat_matrix, ForestSpec};
pub use polynomial::{polynomial_hat_matrix, PolySpec};
pub use user::user_hat_matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerTag {
    Forest,
    Boosting,
    Polynomial,
    User,
}

impl LearnerTag {
    /// Name printed in the report's treatment model block.
    pub fn display_name(self) -> &'static str {
        match self {
            LearnerTag::Forest => "Random Forest",
            LearnerTag::Boosting => "Boosting",
            LearnerTag::Polynomial => "Polynomial Basis Expansion",
            LearnerTag::User => "Specified by User",
        }
    }
}

impl fmt::Display for LearnerTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

/// `f̂_{A1} = Ω D_{A1}`, with `rows` the dataset indices forming A1.
#[derive(Debug, Clone, PartialEq)]
pub struct HatMatrix {
    pub omega: DMatrix<f64>,
    pub rows: Vec<usize>,
    pub learner: LearnerTag,
    pub hyperparams: BTreeMap<String, String>,
}

impl HatMatrix {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn fitted(&self, d_a1: &DVector<f64>) -> DVector<f64> {
        &self.omega * d_a1
    }

    pub fn fitted_treatment(&self, dataset: &Dataset) -> DVector<f64> {
        self.fitted(&select_entries(&dataset.d, &self.rows))
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.omega
            .row_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn symmetry_error(&self) -> f64 {
        (&self.omega - self.omega.transpose()).amax()
    }

    pub fn idempotence_error(&self) -> f64 {
        (&self.omega * &self.omega - &self.omega).amax()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LearnerSpec {
    Forest(ForestSpec),
    Boosting(BoostingSpec),
    Polynomial(PolySpec),
    /// Either an `n x n` hat matrix or an `n x p` design.
    User(DMatrix<f64>),
}

impl LearnerSpec {
    pub fn tag(&self) -> LearnerTag {
        match self {
            LearnerSpec::Forest(_) => LearnerTag::Forest,
            LearnerSpec::Boosting(_) => LearnerTag::Boosting,
            LearnerSpec::Polynomial(_) => LearnerTag::Polynomial,
            LearnerSpec::User(_) => LearnerTag::User,
        }
    }

    /// Machine-learning learners need the A1/A2 split; the others use the
    /// full sample as A1.
    pub fn requires_split(&self) -> bool {
        matches!(self, LearnerSpec::Forest(_) | LearnerSpec::Boosting(_))
    }

    pub fn reseeded(&self, seed: u64) -> LearnerSpec {
        match self {
            LearnerSpec::Forest(s) => LearnerSpec::Forest(ForestSpec { seed, ..s.clone() }),
            LearnerSpec::Boosting(s) => LearnerSpec::Boosting(BoostingSpec { seed, ..s.clone() }),
            LearnerSpec::Polynomial(s) => LearnerSpec::Polynomial(PolySpec { seed, ..s.clone() }),
            LearnerSpec::User(m) => LearnerSpec::User(m.clone()),
        }
    }

    pub fn hat_matrix(&self, dataset: &Dataset, split: Option<&FoldSplit>) -> Result<HatMatrix> {
        let need_split = || {
            split.ok_or_else(|| {
                TsciError::InvalidParameter("this learner requires a sample split".into())
            })
        };
        match self {
            LearnerSpec::Forest(s) => forest_hat_matrix(dataset, need_split()?, s),
            LearnerSpec::Boosting(s) => boosting_hat_matrix(dataset, need_split()?, s),
            LearnerSpec::Polynomial(s) => polynomial_hat_matrix(dataset, s),
            LearnerSpec::User(m) => user_hat_matrix(m, dataset.n()),
        }
    }
}
