use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite or diverging value at node {node} (t = {time})")]
    NonFinite { node: usize, time: f64 },

    #[error("matrix is not symmetric: asymmetry {asymmetry:e} exceeds tolerance {tolerance:e}")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("population size must be at least 1, got {0}")]
    InvalidN(usize),

    #[error("regularity lost at node {node} (t = {time}): smallest eigenvalue {lambda_min:e}")]
    RegularityLost { node: usize, time: f64, lambda_min: f64 },

    #[error("trajectories live on different grids")]
    GridMismatch,

    #[error("near-singular inverse at node {node}: smallest singular value {sigma:e}")]
    NearSingular { node: usize, sigma: f64 },

    #[error("explicit decoupling formula needs C = 0 and Ftilde = 0")]
    NotReducedCase,

    #[error("decoupled criterion needs F = 0 and Ftilde = 0")]
    CouplingPresent,

    #[error("oracle stationarity failed: directional derivative {derivative:e} exceeds bound {bound:e}")]
    StationarityFailed { derivative: f64, bound: f64 },

    #[error("simulation result does not hold full trajectories")]
    MissingTrajectories,

    #[error("augmented system of dimension {dim} exceeds the materialization limit {limit}")]
    TooLarge { dim: usize, limit: usize },

    #[error("storage request of {0} scalars exceeds the limit")]
    StorageLimit(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("missing or malformed field `{0}`")]
    Schema(String),

    #[error("invalid model: {0}")]
    Invalid(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Attaches the name of the pipeline stage where the error surfaced.
    pub fn at(self, stage: &'static str) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, with stage annotations stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by bad input rather than numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::Parse(_)
                | Error::Schema(_)
                | Error::Invalid(_)
                | Error::Dimension(_)
                | Error::NotSymmetric { .. }
                | Error::InvalidN(_)
                | Error::InvalidGrid(_)
                | Error::GridMismatch
                | Error::TooLarge { .. }
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.into().at(stage))
    }
}
