//! Harness library behind the `isurv` command line: experiment plumbing,
//! nested cross-validation with random hyperparameter search, and the study
//! sweeps (feature count, censoring proportion, window size).

pub mod cv;
pub mod experiment;
pub mod runconfig;
pub mod sweep;
