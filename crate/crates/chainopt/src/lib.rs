//! Multi-objective supply-chain assignment toolkit.
//!
//! The pipeline: load or generate a [`instance::ProblemInstance`], reduce it
//! ([`preprocess`]), compile the reduced instance into a QUBO/Ising model
//! ([`qubo`]), and solve with the informed heuristics ([`informed`]), the
//! Ising solver portfolio ([`solvers`]) or one of the two meta-solvers
//! ([`meta`]). [`pareto`] provides non-domination filtering and exact
//! hypervolume for cross-weight comparisons.

pub mod error;
pub mod informed;
pub mod instance;
pub mod meta;
pub mod pareto;
pub mod preprocess;
pub mod qubo;
pub mod solvers;
pub mod tuning;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
