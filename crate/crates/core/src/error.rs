use crate::prelude::*;
use alloc::boxed::Box;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// One problem found while validating a dataset.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ValidationIssue {
    pub individual: String,
    pub problem: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "individual {}: {}", self.individual, self.problem)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no individuals")]
    NoIndividuals,

    #[error("invalid dataset: {}", summarize(.0))]
    Validation(Vec<ValidationIssue>),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("factorization failed for individual {individual} under model {gamma}: {detail}")]
    Factorization {
        individual: String,
        gamma: String,
        detail: String,
    },

    #[error("normal matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("degenerate window for individual {0}: every model has zero weight")]
    DegenerateWindow(String),

    #[error("root solver failed: {0}")]
    Solver(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            e @ Error::AtIteration { .. } => e,
            e => Error::AtIteration {
                iteration,
                source: Box::new(e),
            },
        }
    }
}

fn summarize(issues: &[ValidationIssue]) -> String {
    let mut out = String::new();
    for (n, issue) in issues.iter().enumerate() {
        if n > 0 {
            out.push_str("; ");
        }
        out.push_str(&format!("{issue}"));
    }
    out
}
