//! Information-matrix misspecification tests for two random-graph
//! models: the one-parameter exponential random graph and the stochastic
//! block model. Includes the graph samplers, maximum-likelihood
//! estimators, the full test-statistic pipeline, and a Monte Carlo
//! harness with reproducible seeding.

use serde::{Deserialize, Serialize};

pub mod erg;
pub mod error;
pub mod graph;
pub mod cli;
pub mod montecarlo;
pub mod numerics;
pub mod report;
pub mod samplers;
pub mod sbm;

pub use error::{Error, Result};

/// Outcome of a misspecification test.
///
/// `Degenerate` means the χ² comparison was inapplicable (the statistic
/// is structurally 0/0 or the variance estimate is numerically singular);
/// it is a first-class result, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    WellSpecified,
    Misspecified,
    Degenerate,
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::WellSpecified => write!(f, "well_specified"),
            Self::Misspecified => write!(f, "misspecified"),
            Self::Degenerate => write!(f, "degenerate"),
        }
    }
}
