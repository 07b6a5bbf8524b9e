use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: field `{field}`: {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },

    #[error(
        "risk budget infeasible: B/(n+1) = {bound}/({n}+1) exceeds alpha = {alpha}; \
         at least {min_n} calibration samples are required"
    )]
    BudgetInfeasible {
        alpha: f64,
        bound: f64,
        n: usize,
        min_n: usize,
    },

    #[error("instance `{id}` has no guardian scores")]
    MissingGuardian { id: String },

    #[error("instance `{id}` is missing label `{label}`")]
    MissingLabel { id: String, label: &'static str },

    #[error("missing token count `{field}`")]
    MissingTokens { field: &'static str },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("scorer transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidInput(msg.into())
    }
}
