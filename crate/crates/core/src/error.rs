use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("empty graph: no edges remain after removing {self_loops} self-loop(s)")]
    EmptyGraph { self_loops: usize },

    #[error("node {node} out of range (node count {node_count})")]
    NodeOutOfRange { node: usize, node_count: usize },

    #[error("seed set is empty")]
    EmptySeedSet,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("dimension {0} is not even")]
    OddDimension(usize),

    #[error("curvature mismatch: {left} vs {right}")]
    CurvatureMismatch { left: f64, right: f64 },

    #[error("k = {k} outside 1..={node_count}")]
    KOutOfRange { k: usize, node_count: usize },

    #[error("too many directed edges for exhaustive enumeration: {edges} > {limit}")]
    TooManyEdges { edges: usize, limit: usize },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::EmptyGraph { .. } => "empty-graph",
            Error::NodeOutOfRange { .. } => "node-out-of-range",
            Error::EmptySeedSet => "empty-seed-set",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::OddDimension(_) => "odd-dimension",
            Error::CurvatureMismatch { .. } => "curvature-mismatch",
            Error::KOutOfRange { .. } => "k-out-of-range",
            Error::TooManyEdges { .. } => "too-many-edges",
            Error::Diverged { .. } => "diverged",
            Error::InvalidArgument(_) => "invalid-argument",
        }
    }
}
