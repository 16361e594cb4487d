//! Semi-supervised Gaussian mixture clustering on precomputed feature vectors.
//!
//! The crate estimates the number of classes in a partially labelled dataset
//! by alternating three stages: a label-constrained k-means refit of a
//! Gaussian mixture, a stochastic split/merge pass driven by marginal
//! likelihoods under a Normal-Inverse-Wishart prior, and (optionally) a
//! contrastive refinement of the feature embedding guided by the current
//! cluster prototypes.

pub mod config;
pub mod contrastive;
pub mod dataset;
pub mod eval;
pub mod kmeans;
pub mod linalg;
pub mod mixture;
pub mod niw;
pub mod pca;
pub mod pipeline;

use std::fmt;

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A matrix expected to be symmetric positive definite is not.
    #[error("not symmetric positive definite: {0}")]
    NotSpd(String),
    /// A function argument lies outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// Mismatched or invalid dimensions between operands.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    /// The requested cluster count cannot be satisfied.
    #[error("infeasible cluster count: {0}")]
    InfeasibleK(String),
    /// An operation needs more points than were supplied.
    #[error("too few points: {0}")]
    TooFewPoints(String),
    /// An operation needs more labelled classes than the data provides.
    #[error("too few labelled classes: {0}")]
    TooFewClasses(String),
    /// A partial-overlap split asked for more classes than are labelled.
    #[error("overlap exceeds labelled class count: {0}")]
    OverlapTooLarge(String),
    /// A prototype owner index points past the last component.
    #[error("owner index out of range: {0}")]
    OwnerOutOfRange(String),
    /// Malformed input data (file contents, headers, records).
    #[error("parse error: {0}")]
    Parse(String),
    /// Invalid run configuration (unknown key, unparsable value).
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code class for this error: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NotSpd(_) | Error::Domain(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Initial component count rule: the labelled class count plus half again,
/// rounded half-up. `k_labelled` must be at least 1.
pub fn default_k_init(k_labelled: usize) -> usize {
    k_labelled + (k_labelled as f64 / 2.0).round() as usize
}

impl fmt::Display for config::GammaConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            config::GammaConvention::Factorial => write!(f, "factorial"),
            config::GammaConvention::Gamma => write!(f, "gamma"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_init_rule_rounds_half_up() {
        assert_eq!(default_k_init(100), 150);
        assert_eq!(default_k_init(5), 8);
        assert_eq!(default_k_init(1), 2);
        assert_eq!(default_k_init(2), 3);
    }
}
