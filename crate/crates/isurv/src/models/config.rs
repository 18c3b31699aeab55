//! Training configuration shared by the model variants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which training strategy a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Mean of likelihood losses over sampled credal distributions.
    ISurvM,
    /// Sum of the largest per-generation losses (worst-case portion `r`).
    ISurvQ,
    /// Joint learning of attention weights and interval distributions.
    ISurvJ,
    /// Joint learning with a Gaussian kernel and trainable temperature.
    ISurvJG,
}

impl Variant {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace(['(', ')', '-'], "").as_str() {
            "m" | "isurvm" => Ok(Variant::ISurvM),
            "q" | "isurvq" => Ok(Variant::ISurvQ),
            "j" | "isurvj" => Ok(Variant::ISurvJ),
            "jg" | "isurvjg" | "g" => Ok(Variant::ISurvJG),
            other => Err(Error::Validation(format!("unknown model variant '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::ISurvM => "isurvm",
            Variant::ISurvQ => "isurvq",
            Variant::ISurvJ => "isurvj",
            Variant::ISurvJG => "isurvjg",
        }
    }

    /// Whether training samples credal distributions per epoch.
    pub fn uses_generations(&self) -> bool {
        matches!(self, Variant::ISurvM | Variant::ISurvQ)
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, Variant::ISurvJG)
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Entropy regularization coefficient.
    pub gamma: f64,
    /// Number of credal samples per instance (generation-based variants).
    pub generations: usize,
    /// Fraction of the largest per-generation losses kept by the quantile
    /// strategy.
    pub quantile_fraction: f64,
    /// Half-width of the extended interval window around an uncensored event.
    pub window: usize,
    pub p_mask: f64,
    pub embed_dim: usize,
    pub dropout: f64,
    /// Fraction of query rows entering each gradient step.
    pub batch_rate: f64,
    pub weight_decay: f64,
    /// Steps of the distribution fine-tuning stage; defaults to `epochs`.
    pub fine_tune_epochs: Option<usize>,
    /// Initial kernel temperature of the Gaussian variant.
    pub tau_init: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        ModelConfig {
            variant,
            epochs: 300,
            learning_rate: 1e-2,
            gamma: 0.1,
            generations: 20,
            quantile_fraction: 0.5,
            window: 5,
            p_mask: 0.5,
            embed_dim: 64,
            dropout: 0.5,
            batch_rate: 0.2,
            weight_decay: 2e-3,
            fine_tune_epochs: None,
            tau_init: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.quantile_fraction > 0.0 && self.quantile_fraction <= 1.0) {
            return Err(Error::Domain(format!(
                "quantile fraction {} outside (0, 1]",
                self.quantile_fraction
            )));
        }
        if self.generations < 1 {
            return Err(Error::Domain("need at least one generation".into()));
        }
        if !(self.batch_rate > 0.0 && self.batch_rate <= 1.0) {
            return Err(Error::Domain(format!("batch rate {} outside (0, 1]", self.batch_rate)));
        }
        if !(0.0..=1.0).contains(&self.p_mask) {
            return Err(Error::Domain(format!("mask rate {} outside [0, 1]", self.p_mask)));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::Domain(format!("dropout {} outside [0, 1]", self.dropout)));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Domain(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.embed_dim == 0 {
            return Err(Error::Domain("embedding dimension must be positive".into()));
        }
        if self.tau_init <= 0.0 {
            return Err(Error::Domain(format!("tau_init {} must be positive", self.tau_init)));
        }
        if self.gamma < 0.0 {
            return Err(Error::Domain(format!("gamma {} must be non-negative", self.gamma)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Domain(format!("weight decay {} must be non-negative", self.weight_decay)));
        }
        Ok(())
    }

    pub fn fine_tune_steps(&self) -> usize {
        self.fine_tune_epochs.unwrap_or(self.epochs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::ISurvM, Variant::ISurvQ, Variant::ISurvJ, Variant::ISurvJG] {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert_eq!(Variant::parse("J(G)").unwrap(), Variant::ISurvJG);
        assert!(Variant::parse("cox").is_err());
    }

    #[test]
    fn config_bounds_are_enforced() {
        let mut c = ModelConfig::new(Variant::ISurvJ);
        assert!(c.validate().is_ok());
        c.quantile_fraction = 0.0;
        assert!(c.validate().is_err());
        c.quantile_fraction = 0.5;
        c.batch_rate = 1.5;
        assert!(c.validate().is_err());
        c.batch_rate = 0.2;
        c.generations = 0;
        assert!(c.validate().is_err());
    }
}
