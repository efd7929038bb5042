use thiserror::Error;

pub type Result<T> = std::result::Result<T, TsciError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TsciError {
    #[error("dimension mismatch in column `{column}`: expected {expected} rows, found {found}")]
    DimensionMismatch {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("treatment has zero variance")]
    ConstantTreatment,
    #[error("at least {min} rows are required, found {found}")]
    TooFewRows { min: usize, found: usize },
    #[error("at least one instrument column is required")]
    NoInstruments,
    #[error("split proportion must lie in (0, 1), got {0}")]
    InvalidSplitProportion(f64),
    #[error("fold too small: {fold} has {size} rows, at least {min} required")]
    FoldTooSmall {
        fold: &'static str,
        size: usize,
        min: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty neighborhood for query row {row}: no tree leaf holds reference points")]
    EmptyNeighborhood { row: usize },
    #[error("polynomial expansion cannot be employed for binary IVs")]
    BinaryInstrumentPolynomial,
    #[error("violation basis annihilated by hat matrix")]
    AnnihilatedBasis,
    #[error("IV fully absorbed by violation space")]
    FullyAbsorbed,
    #[error("not enough degrees of freedom: {rows} rows for rank {rank}")]
    DegreesOfFreedom { rows: usize, rank: usize },
    #[error("rank deficient design: {0}")]
    RankDeficient(String),
    #[error("all {0} data splits failed")]
    AllSplitsFailed(usize),
}
