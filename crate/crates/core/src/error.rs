use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-facing parameter (grid size, exponent, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition (mismatched grids, non-unit ω).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Exponent outside the range where a norm or inequality is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A requested allocation exceeds a configured cap.
    #[error("resource cap exceeded: {0}")]
    Resource(String),

    #[error("time step {dt} exceeds the stability limit {limit}")]
    Stability { dt: f64, limit: f64 },

    /// A fit or report could not be formed from the data.
    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    #[error("non-finite values at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed snapshot: {0}")]
    Format(String),
}
