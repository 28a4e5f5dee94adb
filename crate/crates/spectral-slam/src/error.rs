//! Crate-wide error type.
//!
//! Variants are grouped by the subsystem that raises them. `is_input_error`
//! drives the CLI exit-code convention (2 for bad input, 3 for numerical
//! failures).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // -- configuration and file input ------------------------------------
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: parse error: {msg}")]
    ParseError {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}: schema error: {msg}")]
    SchemaError { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    // -- measurement matrix construction ---------------------------------
    #[error("velocity {v} below floor {floor}; rank-7 column undefined")]
    VelocityTooSmall { v: f64, floor: f64 },

    #[error("landmark {landmark_id} has only {readings} readings; at least 4 required")]
    InsufficientData { landmark_id: u32, readings: usize },

    #[error("all rank-7 columns dropped by the velocity floor")]
    AllColumnsDropped,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("too few points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    // -- spectral factorization and alignment ----------------------------
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("landmark block has no clear 3-dimensional nullspace (gap {gap:.3e})")]
    SingularLandmarks { gap: f64 },

    #[error("need at least {needed} anchors, got {got}")]
    TooFewAnchors { needed: usize, got: usize },

    #[error("anchor rows ill-conditioned (condition number {cond:.3e})")]
    IllConditionedAnchors { cond: f64 },

    // -- metric upgrade ---------------------------------------------------
    #[error("top block of U has no 3-dimensional nullspace")]
    NoNullspace,

    #[error("no direction maps the factor rows to a constant (residual {residual:.3e})")]
    NoConstantDirection { residual: f64 },

    #[error("degenerate quadric axis: {0}")]
    DegenerateAxis(String),

    #[error("state scale row has nonpositive mean ({mean:.3e}) after sign flip")]
    NegativeScale { mean: f64 },

    #[error("singular configuration: {0}")]
    SingularConfiguration(String),

    // -- system identification and filtering -----------------------------
    #[error("feature matrix rank deficient: effective rank {effective_rank}, need {needed}")]
    RankDeficientFeatures {
        effective_rank: usize,
        needed: usize,
    },

    #[error("innovation covariance is singular")]
    SingularInnovationCovariance,

    #[error("cost became non-finite during optimization")]
    NonFiniteCost,

    // -- pipeline ---------------------------------------------------------
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attach the pipeline stage in which the error occurred.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the error comes from bad input rather than a numerical
    /// failure; maps to CLI exit code 2 (vs 3).
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidConfig(_)
            | Error::ParseError { .. }
            | Error::SchemaError { .. }
            | Error::Io(_)
            | Error::LengthMismatch { .. }
            | Error::DimensionMismatch { .. }
            | Error::TooFewPoints { .. }
            | Error::TooFewAnchors { .. }
            | Error::InsufficientData { .. } => true,
            Error::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }

    /// Stage name for diagnostics, if the error was wrapped by the pipeline.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
