use thiserror::Error;

/// Errors raised anywhere in the solver stack.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum SktError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("detailed balance violated: pi_{i} a_{i}{j} = {lhs} but pi_{j} a_{j}{i} = {rhs}", i = .i + 1, j = .j + 1)]
    DetailedBalanceViolated { i: usize, j: usize, lhs: f64, rhs: f64 },

    #[error("no reversible measure: cycle through species {i} -> {j} has product mismatch {mismatch:e}", i = .i + 1, j = .j + 1)]
    CycleInconsistent { i: usize, j: usize, mismatch: f64 },

    #[error("asymmetric support: a_{i}{j} > 0 but a_{j}{i} = 0", i = .i + 1, j = .j + 1)]
    AsymmetricSupport { i: usize, j: usize },

    #[error("non-positive density {value} (species {species}, cell {cell})")]
    NonPositiveDensity { species: usize, cell: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:e}); reduce dt")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolveFailed(String),

    #[error("positivity lost: density {value:e} in species {species}, cell {cell}")]
    PositivityLost { species: usize, cell: usize, value: f64 },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SktError>,
    },

    #[error("ensemble failed after {completed} completed paths: {source}")]
    Ensemble {
        completed: usize,
        #[source]
        source: Box<SktError>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl SktError {
    /// Strips `Step`/`Ensemble` wrappers.
    pub fn root(&self) -> &SktError {
        match self {
            SktError::Step { source, .. } | SktError::Ensemble { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures of the numerical solvers, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self.root(),
            SktError::NewtonDiverged { .. }
                | SktError::LinearSolveFailed(_)
                | SktError::PositivityLost { .. }
                | SktError::NonFinite(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self.root() {
            SktError::InvalidParameters(_) => "InvalidParameters",
            SktError::DetailedBalanceViolated { .. } => "DetailedBalanceViolated",
            SktError::CycleInconsistent { .. } => "CycleInconsistent",
            SktError::AsymmetricSupport { .. } => "AsymmetricSupport",
            SktError::NonPositiveDensity { .. } => "NonPositiveDensity",
            SktError::NonFinite(_) => "NonFinite",
            SktError::ShapeMismatch { .. } => "ShapeMismatch",
            SktError::NewtonDiverged { .. } => "NewtonDiverged",
            SktError::LinearSolveFailed(_) => "LinearSolveFailed",
            SktError::PositivityLost { .. } => "PositivityLost",
            SktError::InsufficientData(_) => "InsufficientData",
            SktError::Config { .. } => "Config",
            SktError::Io(_) => "Io",
            SktError::Step { .. } | SktError::Ensemble { .. } => unreachable!(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> SktError {
        SktError::Step { step, source: Box::new(self) }
    }
}

impl From<std::io::Error> for SktError {
    fn from(e: std::io::Error) -> Self {
        SktError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SktError>;
