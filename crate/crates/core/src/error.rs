use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by fitting, targeting and I/O.
///
/// Variants fall into two families: data problems (bad input, empty
/// subgroups, missing columns) and numerical failures (non-convergence,
/// separation, singular systems). [`Error::is_numerical`] tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: negative time {time}")]
    NegativeTime { row: usize, time: f64 },

    #[error("row {row}: event code {code} not in {{0,1,2}}")]
    InvalidEvent { row: usize, code: String },

    #[error("row {row}: treatment {value} is not binary")]
    NonBinaryTreatment { row: usize, value: String },

    #[error("predictive column `{name}` has {levels} levels (max {max})")]
    TooManyLevels { name: String, levels: usize, max: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("empty subgroup {0}")]
    EmptySubgroup(String),

    #[error("treatment is constant; both arms are required")]
    ConstantTreatment,

    #[error("no censoring events available for a Cox censoring model")]
    NoCensoringEvents,

    #[error("no main events available for the subdistribution model")]
    NoMainEvents,

    #[error("complete separation in logistic regression")]
    Separation,

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last: Vec<f64>,
    },

    #[error("epsilon unbounded at targeting iteration {iteration}: no sign change in [-64, 64]")]
    EpsilonUnbounded { iteration: usize },

    #[error("no heterogeneity: variance of individual effects is zero")]
    NoHeterogeneity,

    #[error("target censoring share {0} unreachable in the lambda0 bracket")]
    Unreachable(f64),

    #[error("bootstrap failed: {0}")]
    Bootstrap(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of a numerical routine as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Separation
                | Error::RankDeficient
                | Error::NonConvergence { .. }
                | Error::EpsilonUnbounded { .. }
                | Error::NoHeterogeneity
                | Error::Unreachable(_)
                | Error::Bootstrap(_)
        )
    }
}
