use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two inputs that must agree in length or shape do not.
    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    Shape {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// A grid failed validation.
    #[error("invalid grid: {0}")]
    Grid(String),

    /// A network evaluation produced a non-finite intermediate.
    #[error("non-finite value in layer {layer}: {detail}")]
    NonFiniteLayer { layer: usize, detail: String },

    /// A gradient entry was non-finite.
    #[error("non-finite gradient entry at parameter {index}")]
    NonFiniteGradient { index: usize },

    /// A network description is inconsistent.
    #[error("invalid architecture: {0}")]
    Architecture(String),

    /// An expression or problem file could not be parsed.
    #[error("parse error{}: {message}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    Parse {
        line: Option<usize>,
        message: String,
    },

    /// A problem definition is inconsistent.
    #[error("invalid problem: {0}")]
    Problem(String),

    /// A delayed argument fell before the domain start and no history is defined.
    #[error("delayed argument {point} lies before the domain start {start} and state `{state}` has no history")]
    MissingHistory {
        state: String,
        point: f64,
        start: f64,
    },

    /// The requested built-in example does not exist.
    #[error("unknown example id {0} (expected 1..=8)")]
    UnknownExample(u32),

    /// The optimizer could not make progress.
    #[error("optimization failed: {0}")]
    Optimization(String),

    /// The loss blew up during training.
    #[error("training diverged at iteration {iteration}: loss {loss:e} exceeds {limit:e}")]
    Divergence {
        iteration: usize,
        loss: f64,
        limit: f64,
    },

    /// A configuration value is out of range.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
