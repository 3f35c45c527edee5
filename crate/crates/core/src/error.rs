use thiserror::Error;

/// Errors raised while loading data or evaluating an index.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("csv error: {0}")]
    Csv(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("label mismatch between prices and expenditures: {0}")]
    LabelMismatch(String),
    #[error("nonpositive price at ({item},{location})")]
    NonpositivePrice { item: String, location: String },
    #[error("nonfinite value at ({item},{location})")]
    NonfiniteValue { item: String, location: String },
    #[error("missing cell at ({item},{location})")]
    MissingCell { item: String, location: String },
    #[error("duplicate label '{0}'")]
    DuplicateLabel(String),
    #[error("need at least 2 items and 2 locations, got {items} x {locations}")]
    TooSmall { items: usize, locations: usize },
    #[error("zero total expenditure in location '{0}'")]
    ZeroTotalExpenditure(String),
    #[error("unknown location '{0}'")]
    UnknownLocation(String),
    #[error("{method} undefined: {reason}")]
    Undefined { method: &'static str, reason: String },
    #[error("nonpositive share for item '{item}' under {kind} weights")]
    NonpositiveShare { item: String, kind: &'static str },
    #[error("negative share product for item '{item}'; Walsh weights need s_j*s_k >= 0")]
    NegativeShareProduct { item: String },
    #[error("views do not share the same item set")]
    ItemMismatch,
    #[error("pair ({target},{base}): {source}")]
    Pair {
        target: String,
        base: String,
        #[source]
        source: Box<IndexError>,
    },
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),
    #[error("only {effective} computable bootstrap replicates, need at least 2")]
    InsufficientReplicates { effective: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl IndexError {
    pub(crate) fn for_pair(self, target: &str, base: &str) -> IndexError {
        IndexError::Pair {
            target: target.to_string(),
            base: base.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, IndexError>;
