use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("value {value} at row {row}, column {col} lies outside the basis support [-{a}, {a}]; rescale inputs or refit with a wider support")]
    Domain {
        row: usize,
        col: usize,
        value: f64,
        a: f64,
    },

    #[error("basis capacity exceeded: requested {requested} indices but only {available} exist under the per-coordinate degree cap {degree_cap}")]
    Capacity {
        requested: usize,
        available: usize,
        degree_cap: u32,
    },

    #[error("incompatible models: {0}")]
    Incompatible(String),

    #[error("solver did not converge for {context} after {iterations} iterations")]
    NotConverged { context: String, iterations: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{source_name}: parse error at row {row}, column {col}: {msg}")]
    Parse {
        source_name: String,
        row: usize,
        col: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidValue(format!(
            "{what} has non-finite entry {} at position {i}",
            values[i]
        ))),
        None => Ok(()),
    }
}
