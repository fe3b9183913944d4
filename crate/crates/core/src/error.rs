use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("inclusion {index} does not lie inside the grid")]
    InclusionOutsideGrid { index: usize },

    #[error("k-space coordinate {coord:?} lies outside the Nyquist disc of radius {k_max}")]
    OutsideNyquist { coord: [f64; 2], k_max: f64 },

    #[error("level {level} has an empty k-space segment; use fewer levels")]
    EmptySegment { level: usize },

    #[error("requested rank {requested} exceeds the available rank {available}")]
    RankUnavailable { requested: usize, available: usize },

    #[error("repetition {rep} is missing its opposite-polarity partner")]
    MissingPartner { rep: usize },

    #[error("no valid voxels remain after inversion")]
    NoValidVoxels,

    #[error("empty mask")]
    EmptyMask,

    #[error("non-finite loss at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } | Error::NoValidVoxels => 4,
            _ => 3,
        }
    }
}
