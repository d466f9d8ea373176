//! Error type shared across the crate.

use std::fmt;

/// Errors from graph construction, sampling, estimation, and the test
/// pipeline. Vertex ids, block ids, and coordinate indices are 1-based,
/// matching the public API.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vertex id outside {1..n}.
    InvalidVertex { vertex: usize, n: usize },
    /// A linear edge index outside {1..C(n,2)}.
    InvalidIndex { index: usize, max: usize },
    /// An edge (i, i) in input data.
    SelfLoop { vertex: usize },
    /// Malformed input file.
    Parse { line: usize, message: String },
    /// Vertex count above the supported dense-storage bound.
    CapacityExceeded { n: usize, max: usize },
    /// A probability outside [0, 1] or otherwise unusable.
    InvalidProbability { value: f64 },
    /// A block label outside {1..m}.
    InvalidLabel { vertex: usize, label: usize, blocks: usize },
    /// Operation requires per-vertex block labels but the graph has none.
    MissingLabels,
    /// Scenario-2 samplers require n divisible by 10.
    IndivisibleN { n: usize },
    /// An estimate on the boundary of the parameter space.
    DegenerateEstimate { detail: String },
    /// A vertex with degree zero where the observation exponent 1/n_i is
    /// undefined.
    IsolatedVertex { vertex: usize },
    /// A block with no vertices (or no responsibility mass).
    EmptyBlock { block: usize },
    /// A diagonal entry of A_n too small to invert (1-based slot).
    SingularAn { slot: usize },
    /// Invalid argument to a numerical kernel.
    InvalidArgument { message: String },
    /// A function evaluated to NaN or infinity inside a derivative stencil.
    NonFiniteEvaluation { coordinate: usize },
    /// Monte Carlo summaries with incompatible configurations.
    MismatchedSpecs { message: String },
    /// File I/O failure.
    Io { path: String, message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidVertex { vertex, n } => {
                write!(f, "vertex {vertex} outside 1..={n}")
            }
            Self::InvalidIndex { index, max } => {
                write!(f, "edge index {index} outside 1..={max}")
            }
            Self::SelfLoop { vertex } => write!(f, "self-loop at vertex {vertex}"),
            Self::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Self::CapacityExceeded { n, max } => {
                write!(f, "vertex count {n} exceeds supported maximum {max}")
            }
            Self::InvalidProbability { value } => write!(f, "invalid probability {value}"),
            Self::InvalidLabel { vertex, label, blocks } => {
                write!(f, "vertex {vertex} has label {label} outside 1..={blocks}")
            }
            Self::MissingLabels => write!(f, "graph has no block labels"),
            Self::IndivisibleN { n } => {
                write!(f, "scenario-2 sampler requires n divisible by 10, got {n}")
            }
            Self::DegenerateEstimate { detail } => write!(f, "degenerate estimate: {detail}"),
            Self::IsolatedVertex { vertex } => {
                write!(f, "vertex {vertex} is isolated (degree 0)")
            }
            Self::EmptyBlock { block } => write!(f, "block {block} is empty"),
            Self::SingularAn { slot } => {
                write!(f, "A_n diagonal slot {slot} is numerically zero")
            }
            Self::InvalidArgument { message } => write!(f, "invalid argument: {message}"),
            Self::NonFiniteEvaluation { coordinate } => {
                write!(f, "non-finite evaluation perturbing coordinate {coordinate}")
            }
            Self::MismatchedSpecs { message } => write!(f, "mismatched specs: {message}"),
            Self::Io { path, message } => write!(f, "{path}: {message}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
