use thiserror::Error;

/// Error type shared by every fallible operation in this crate.
#[derive(Error, Debug)]
pub enum Error {
    /// A parameter set or collection configuration is internally inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data (reports, dictionaries, files) does not satisfy a precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// A numerical routine failed to produce a usable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The residual category carries too little mass to be modeled; the caller
    /// should re-run the fit without it.
    #[error("residual category mass {mass:.3e} is below floor {floor:.3e}; omit the residual category")]
    NegligibleResidualMass { mass: f64, floor: f64 },

    /// Candidate assembly exceeded its cap; raise the edge threshold.
    #[error("candidate assembly produced more than {cap} strings; raise the co-occurrence threshold")]
    CandidateOverflow { cap: usize },

    /// The requested n-gram dictionary would exceed its cap; use a shorter gram.
    #[error("n-gram dictionary would hold {size} entries, over the cap of {cap}; use a shorter gram length")]
    DictionaryTooLarge { size: usize, cap: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
