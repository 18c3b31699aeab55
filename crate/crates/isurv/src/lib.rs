//! Survival analysis via imprecise classification with trainable kernels.
//!
//! Censored observations induce interval-valued probability distributions over
//! the time intervals between observed event moments; attention-weighted
//! Nadaraya-Watson mixing turns the per-instance distributions into
//! conditional interval distributions and survival curves. Four model variants
//! are provided (mean, quantile and joint training strategies, plus a
//! Gaussian-kernel flavor of the joint one) alongside Kaplan-Meier and Beran
//! baselines, evaluation metrics and synthetic data generators.

pub mod attention;
pub mod baselines;
pub mod curve;
pub mod data;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod models;
pub mod tape;

pub use curve::SurvivalCurve;
pub use data::SurvivalDataset;
pub use error::{Error, Result};
pub use grid::{ImpreciseLabel, TimeGrid};
pub use models::{ModelConfig, TrainedModel, Variant};
