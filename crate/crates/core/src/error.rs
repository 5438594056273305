use std::io;

use thiserror::Error;

use crate::constitutive::MaterialClass;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("inverted element ({context}): det(F) = {det:e}")]
    InvertedElement { det: f64, context: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{} at {position:?} is outside the grid interior", describe_particle(*particle))]
    OutOfDomain {
        particle: Option<usize>,
        position: [f64; 3],
    },

    #[error("Poisson's ratio {nu} outside (-1, 0.5)")]
    IncompressibilityLimit { nu: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} = {value:e} outside the supported range")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("material class {0:?} has no plastic model")]
    NotPlastic(MaterialClass),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("incomparable trajectories: {0}")]
    IncomparableTrajectories(String),

    #[error("need at least 2 candidates, got {0}")]
    InsufficientCandidates(usize),

    #[error("preference pair list is empty")]
    EmptyPairs,

    #[error("supervision set is empty")]
    EmptySupervision,

    #[error(
        "simulation aborted at frame {frame}: {clamped} of {total} particles needed F clamping"
    )]
    SimulationAborted {
        frame: usize,
        clamped: usize,
        total: usize,
    },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed {kind}: {message}")]
    Format { kind: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn describe_particle(p: Option<usize>) -> String {
    match p {
        Some(i) => format!("particle {i}"),
        None => "position".to_string(),
    }
}

impl Error {
    pub(crate) fn format(kind: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            kind,
            message: message.into(),
        }
    }
}
