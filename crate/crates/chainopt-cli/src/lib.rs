//! Experiment orchestration and plotting on top of the chainopt library.

pub mod experiment;
pub mod plots;
