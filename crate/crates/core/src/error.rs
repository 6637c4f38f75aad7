use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("relay-to-eavesdropper channel is rank deficient: rank {rank}, expected {expected} (null-space dimension {found})")]
    RankDeficient {
        rank: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("conic solver failed: {0}")]
    Solver(String),

    #[error("initial point is not feasible for the first subproblem (residual {residual:.3e}); run the feasible-initial-point search first")]
    InfeasibleInit { residual: f64 },

    #[error("subproblem solve failed at iteration {iteration}: {status}")]
    Iteration { iteration: usize, status: String },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("no feasible realization after {attempts} attempts")]
    Exhausted { attempts: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
