/// Crate-wide error type.  Variants carry enough context to be rendered as a
/// machine-readable JSON object by the CLI (`export::error_json`).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid instance:\n  {}", .0.join("\n  "))]
    InvalidInstance(Vec<String>),

    #[error("item {item} is not assignable to player {player}")]
    NotAssignable { player: String, item: String },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("simplex hit its iteration cap after {iterations} pivots (objective so far {objective})")]
    SimplexCap { iterations: usize, objective: f64 },

    #[error("column generation hit its iteration cap (objective so far {objective}, best reduced value {reduced})")]
    ColumnGenCap { objective: f64, reduced: f64 },

    #[error("LP reported infeasible or unbounded: {0}")]
    LpFailure(String),

    #[error(
        "projection to assignment marginals would lose {lost:.6e} of value \
         (configuration objective {config_value}, trimmed assignment objective {assignment_value})"
    )]
    ProjectionLoss {
        config_value: f64,
        assignment_value: f64,
        lost: f64,
    },

    #[error("matching decomposition failed: {0}")]
    Decomposition(String),

    #[error("arrangement worsening exceeded the swap guard of {0} swaps")]
    WorsenCap(usize),

    #[error("{what} must be non-negative (got {value})")]
    NegativeInput { what: &'static str, value: f64 },

    #[error("{what} out of range: {value} not in {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error(
        "fake small item for player {player} would need price {price:.6} > half budget {half_budget:.6}"
    )]
    FakePriceTooLarge {
        player: String,
        price: f64,
        half_budget: f64,
    },

    #[error("terminal rounding conditions violated:\n  {}", .0.join("\n  "))]
    TerminalConditions(Vec<String>),

    #[error("exhaustive search too large: {0}")]
    TooLarge(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable tag for the CLI error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInstance(_) => "invalid_instance",
            Error::NotAssignable { .. } => "not_assignable",
            Error::Precondition(_) => "precondition",
            Error::SimplexCap { .. } => "simplex_cap",
            Error::ColumnGenCap { .. } => "column_gen_cap",
            Error::LpFailure(_) => "lp_failure",
            Error::ProjectionLoss { .. } => "projection_loss",
            Error::Decomposition(_) => "decomposition",
            Error::WorsenCap(_) => "worsen_cap",
            Error::NegativeInput { .. } => "negative_input",
            Error::OutOfRange { .. } => "out_of_range",
            Error::FakePriceTooLarge { .. } => "fake_price_too_large",
            Error::TerminalConditions(_) => "terminal_conditions",
            Error::TooLarge(_) => "too_large",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
