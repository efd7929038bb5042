//! Command line front end: CSV ingestion, configuration, reports and the
//! simulation driver.

pub mod config;
pub mod input;
pub mod report;
pub mod sim;

use thiserror::Error;
use tsci_core::TsciError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    /// Help or version text requested on the command line.
    #[error("{0}")]
    Info(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io { .. } => 2,
            CliError::Estimation(_) => 3,
            CliError::Info(_) => 0,
        }
    }

    /// Input problems are validation errors; everything else failed while
    /// estimating.
    pub fn from_core(e: TsciError) -> Self {
        match e {
            TsciError::DimensionMismatch { .. }
            | TsciError::NonFinite { .. }
            | TsciError::DuplicateColumn(_)
            | TsciError::ConstantTreatment
            | TsciError::TooFewRows { .. }
            | TsciError::FoldTooSmall { .. }
            | TsciError::NoInstruments
            | TsciError::InvalidSplitProportion(_)
            | TsciError::InvalidParameter(_)
            | TsciError::BinaryInstrumentPolynomial => CliError::Validation(e.to_string()),
            _ => CliError::Estimation(e.to_string()),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

use config::{LearnerChoice, RunConfig};
use tsci_core::{fit_tsci, LearnerSpec, TsciResult};

/// Load the data named by `cfg` and run the full procedure.
pub fn execute(cfg: &RunConfig) -> CliResult<TsciResult> {
    let table = input::Table::from_path(&cfg.input)?;
    let dataset = input::load_dataset(cfg, &table)?;
    let vio = match &cfg.vio {
        Some(spec) => input::build_vio_space(&input::parse_vio(spec)?, &dataset, &table)?,
        None => {
            log::warn!("no violation space given; only the valid-instrument candidate is fitted");
            Vec::new()
        }
    };
    let learner = match &cfg.learner {
        LearnerChoice::Forest(s) => LearnerSpec::Forest(s.clone()),
        LearnerChoice::Boosting(s) => LearnerSpec::Boosting(s.clone()),
        LearnerChoice::Poly(s) => LearnerSpec::Polynomial(s.clone()),
        LearnerChoice::User(path) => LearnerSpec::User(input::read_matrix(path)?),
    };
    fit_tsci(&dataset, &learner, &vio, &cfg.options).map_err(CliError::from_core)
}
