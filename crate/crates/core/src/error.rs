use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch on {axis}: expected {expected}, found {found}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("data corruption: {0}")]
    DataCorruption(String),

    #[error("non-finite loss in term `{term}`")]
    NonFiniteLoss { term: String },

    #[error("optimizer divergence: term `{term}` reached {value}")]
    Divergence { term: String, value: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unknown ablation variant `{0}`")]
    UnknownVariant(String),
}
