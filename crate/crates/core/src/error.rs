use alloc::string::String;

/// Domain errors raised by the core. Variant names double as the error
/// taxonomy printed by the command-line front end.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("class ordinal {0} outside 0..=3")]
    InvalidClass(i64),
    #[error("unknown disaster type `{0}`")]
    UnknownDisasterType(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("bounding box is degenerate after clamping")]
    InvalidBBox,
    #[error("class {class} has only {count} records, need at least 2")]
    InsufficientClass { class: u8, count: usize },
    #[error("split ratio {0} must lie strictly between 0 and 1")]
    InvalidRatio(f64),
    #[error("duplicate record uid `{0}`")]
    DuplicateUid(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite value")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("weight load failure: {0}")]
    WeightLoadFailure(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("non-finite training loss at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("could not place {requested} non-overlapping buildings in scene {scene}")]
    InfeasiblePacking { scene: usize, requested: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

impl Error {
    /// Taxonomy name of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidClass(_) => "InvalidClass",
            Error::UnknownDisasterType(_) => "UnknownDisasterType",
            Error::InvalidPolygon(_) => "InvalidPolygon",
            Error::InvalidBBox => "InvalidBBox",
            Error::InsufficientClass { .. } => "InsufficientClass",
            Error::InvalidRatio(_) => "InvalidRatio",
            Error::DuplicateUid(_) => "DuplicateUid",
            Error::EmptyBatch => "EmptyBatch",
            Error::NonFinite => "NonFinite",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::WeightLoadFailure(_) => "WeightLoadFailure",
            Error::ConfigMismatch(_) => "ConfigMismatch",
            Error::DivergenceDetected { .. } => "DivergenceDetected",
            Error::EmptyEvalSet => "EmptyEvalSet",
            Error::UnknownLayer(_) => "UnknownLayer",
            Error::InfeasiblePacking { .. } => "InfeasiblePacking",
            Error::InvalidParams(_) => "InvalidParams",
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
