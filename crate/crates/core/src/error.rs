use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("player index {index} out of range for {n_players} players")]
    PlayerOutOfRange { index: usize, n_players: usize },

    #[error("{n_players} players exceeds the limit of {limit} for {what}")]
    TooManyPlayers {
        n_players: usize,
        limit: usize,
        what: &'static str,
    },

    #[error("coalition over {found} players used where {expected} were expected")]
    PlayerCountMismatch { expected: usize, found: usize },

    #[error("value table: {0}")]
    Table(String),

    #[error("no value for coalition {0}")]
    MissingCoalition(String),

    #[error("evaluation failed for coalition {coalition}: {reason}")]
    Evaluation { coalition: String, reason: String },

    #[error("Monte-Carlo sampling aborted after {} iterations: {source}", diagnostics.iterations_run)]
    MonteCarloAborted {
        diagnostics: Box<crate::shapley::McDiagnostics>,
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsatisfiable knowledge: {0}")]
    Unsatisfiable(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
    },

    #[error("digit file {path}: {reason}")]
    DigitFormat { path: PathBuf, reason: String },

    #[error("unknown fixture table `{0}`")]
    UnknownFixture(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
