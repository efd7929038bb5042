//! Two stage curvature identification (TSCI).
//!
//! Estimates a scalar treatment effect when the instruments may violate the
//! exclusion or unconfoundedness conditions. The treatment model is learned
//! with a smoother that can be written as a hat matrix (random forest, L2
//! boosting, polynomial regression or a user supplied matrix). A violation
//! space is then selected from a sequence of user candidates and projected
//! out before a bias corrected least squares step.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: validated datasets and fold splits
//! - [`learners`]: hat matrices from the supported treatment learners
//! - [`violation`]: violation space candidates
//! - [`estimator`]: projections, the bias corrected estimate and bootstrap SEs
//! - [`selection`]: IV strength tests and violation space selection
//! - [`multisplit`]: repeated sample splitting and aggregation
//! - [`simlab`]: synthetic data generating processes and independent oracles

pub mod data;
pub mod error;
pub mod estimator;
pub mod learners;
pub mod linalg;
pub mod multisplit;
pub mod rng;
pub mod selection;
pub mod simlab;
pub mod stats;
pub mod violation;

pub use data::{make_split, validate_dataset, Dataset, FoldSplit, NamedColumn, RawColumns};
pub use error::{Result, TsciError};
pub use estimator::{
    bootstrap_se, estimate_beta, projection_context, BootstrapDraws, EffectEstimate,
    ProjectionContext,
};
pub use learners::{HatMatrix, LearnerSpec, LearnerTag};
pub use multisplit::{
    aggregate_dml, aggregate_fwer, fit_tsci, run_splits, Aggregation, SplitFit, TsciOptions,
    TsciResult,
};
pub use selection::{SelectionMethod, SelectionResult, Validity};
pub use violation::{build_candidates, create_interactions, create_monomials, ViolationCandidate};
