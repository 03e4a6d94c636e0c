#![forbid(unsafe_code)]

//! Locally differentially private frequency estimation.
//!
//! Clients hash a value into a Bloom filter and randomize it twice (a
//! memoized permanent response, then a fresh instantaneous response) before
//! reporting. The decoding side recovers aggregate structure from those
//! noisy reports:
//!
//! * marginal frequencies over a known candidate dictionary,
//! * joint distributions of two variables by expectation-maximization,
//!   including a residual category for mass outside the candidate lists,
//! * a chi-square style independence test driven by the observed
//!   information matrix of the fit, and
//! * candidate dictionaries learned from n-gram reports when no dictionary
//!   is known, by significance-filtered co-occurrence and clique assembly.
//!
//! The `sim` and `experiment` modules generate synthetic populations and
//! run end-to-end studies of the pipeline; the companion CLI exposes them.

pub mod bits;
pub mod dict;
pub mod encode;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod information;
pub mod io;
pub mod joint;
pub mod learn;
pub mod marginal;
pub mod nnls;
pub mod params;
pub mod sim;
pub mod stats;

pub use bits::BitVector;
pub use dict::CandidateDictionary;
pub use encode::{Alphabet, ClientReport, CollectionConfig, GramReport};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentResult, PlotTable};
pub use graph::{CandidateStrings, NGramGraph};
pub use information::IndependenceResult;
pub use joint::{JointConfig, JointEstimate, JointSide, OtherProfile};
pub use learn::{DictionaryLearnResult, LearnOptions};
pub use marginal::{restrict_marginal, select_cells, MarginalEstimate};
pub use params::{BudgetSplit, ChannelShape, RapporParams};
pub use sim::{DistributionSpec, SupportSpec};
