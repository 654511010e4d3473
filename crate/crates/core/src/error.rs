use thiserror::Error;

/// Errors produced by the estimation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("model {model} produced a non-finite output at point #{index} {point:?}")]
    Evaluation {
        model: usize,
        index: usize,
        point: Vec<f64>,
    },

    #[error("sample profile violates `{relation}`: {detail}")]
    Constraint { relation: String, detail: String },

    #[error("degenerate statistics: model {model} has zero variance")]
    DegenerateStatistics { model: usize },

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("numerical inconsistency: {0}")]
    Numerical(String),

    #[error("infeasible budget: {0}")]
    Infeasible(String),

    #[error("budget exhausted during {stage}: spent {spent} of {budget}")]
    BudgetExhausted {
        stage: String,
        spent: f64,
        budget: f64,
    },

    #[error("missing data: {0}")]
    Missing(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
