//! Dataset representation, CSV ingestion and synthetic data generation.

pub mod ingest;
pub mod synthetic;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature matrix with per-instance event/censoring time and event indicator
/// (1 = event observed, 0 = censored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalDataset {
    pub features: Array2<f64>,
    pub times: Vec<f64>,
    pub events: Vec<u8>,
    pub feature_names: Vec<String>,
}

impl SurvivalDataset {
    pub fn new(
        features: Array2<f64>,
        times: Vec<f64>,
        events: Vec<u8>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n < 2 {
            return Err(Error::Size(format!("need at least 2 instances, got {n}")));
        }
        if times.len() != n || events.len() != n {
            return Err(Error::Shape(format!(
                "features have {n} rows but {} times and {} events",
                times.len(),
                events.len()
            )));
        }
        if let Some(&t) = times.iter().find(|&&t| !(t >= 0.0) || !t.is_finite()) {
            return Err(Error::Validation(format!("times must be finite and non-negative, got {t}")));
        }
        if events.iter().any(|&e| e > 1) {
            return Err(Error::Validation("event indicators must be 0 or 1".into()));
        }
        if !events.iter().any(|&e| e == 1) {
            return Err(Error::Validation("dataset needs at least one observed event".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("features must be finite".into()));
        }
        let feature_names = feature_names
            .unwrap_or_else(|| (1..=features.ncols()).map(|j| format!("feature_{j}")).collect());
        if feature_names.len() != features.ncols() {
            return Err(Error::Shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.ncols()
            )));
        }
        Ok(SurvivalDataset { features, times, events, feature_names })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn censoring_fraction(&self) -> f64 {
        let censored = self.events.iter().filter(|&&e| e == 0).count();
        censored as f64 / self.len() as f64
    }

    /// Serialize to the `feature_*`, `time`, `event` CSV schema. Floats are
    /// printed with the shortest round-tripping representation, so a reloaded
    /// file reproduces the exact bits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for name in &self.feature_names {
            out.push_str(name);
            out.push(',');
        }
        out.push_str("time,event\n");
        for i in 0..self.len() {
            for j in 0..self.dim() {
                out.push_str(&format!("{},", self.features[[i, j]]));
            }
            out.push_str(&format!("{},{}\n", self.times[i], self.events[i]));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// Per-column mean and standard deviation of a training feature matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Fit column statistics (sample standard deviation). Constant columns get
    /// a unit divisor so they standardize to zero.
    pub fn fit(features: &Array2<f64>) -> Self {
        let n = features.nrows() as f64;
        let means: Vec<f64> = features.mean_axis(Axis(0)).unwrap().to_vec();
        let stds: Vec<f64> = features
            .columns()
            .into_iter()
            .zip(&means)
            .map(|(col, &m)| {
                let var = col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
                let sd = var.sqrt();
                if sd < 1e-15 {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Standardizer { means, stds }
    }

    pub fn apply(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut out = features.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.means[j]) / self.stds[j]);
        }
        out
    }
}

/// Standardize train and test features with statistics fitted on the training
/// split only.
pub fn standardize_pair(
    train: &SurvivalDataset,
    test: &SurvivalDataset,
) -> Result<(SurvivalDataset, SurvivalDataset)> {
    if train.dim() != test.dim() {
        return Err(Error::Shape(format!(
            "train has {} features, test has {}",
            train.dim(),
            test.dim()
        )));
    }
    let scaler = Standardizer::fit(&train.features);
    let mut train = train.clone();
    let mut test = test.clone();
    train.features = scaler.apply(&train.features);
    test.features = scaler.apply(&test.features);
    Ok((train, test))
}
