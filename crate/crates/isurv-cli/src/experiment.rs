//! Train/evaluate glue shared by the CLI commands and studies.

use anyhow::{anyhow, Result};
use ndarray::Array2;

use isurv::baselines::beran;
use isurv::curve::SurvivalCurve;
use isurv::data::{standardize_pair, SurvivalDataset};
use isurv::grid::{make_labels, TimeGrid};
use isurv::metrics::{c_index, integrated_brier, brier_score, censoring_km, BrierPoint, EvaluationReport};
use isurv::models::{
    expected_time_from_distribution, predict_distributions, survival_from_distribution, train,
    ModelConfig, TrainedModel,
};

/// A dataset pair standardized with training statistics, plus the grid and
/// labels of the retained training rows.
pub struct Prepared {
    pub train: SurvivalDataset,
    pub test: SurvivalDataset,
    pub grid: TimeGrid,
    pub labels: Vec<isurv::ImpreciseLabel>,
    pub train_features: Array2<f64>,
}

pub fn prepare(train_raw: &SurvivalDataset, test_raw: &SurvivalDataset) -> Result<Prepared> {
    let (train, test) = standardize_pair(train_raw, test_raw)?;
    let grid = TimeGrid::from_times(&train.times)?;
    let (labels, dropped) = make_labels(&grid, &train.times, &train.events)?;
    let train_features = if dropped.is_empty() {
        train.features.clone()
    } else {
        let kept: Vec<usize> = (0..train.len()).filter(|i| !dropped.contains(i)).collect();
        let mut sub = Array2::zeros((kept.len(), train.dim()));
        for (row, &i) in kept.iter().enumerate() {
            sub.row_mut(row).assign(&train.features.row(i));
        }
        sub
    };
    Ok(Prepared { train, test, grid, labels, train_features })
}

pub fn train_prepared(prepared: &Prepared, config: &ModelConfig) -> Result<TrainedModel> {
    Ok(train(&prepared.train_features, &prepared.grid, &prepared.labels, config)?)
}

/// Number of Brier-score points kept in reports (evenly thinned from the
/// integration grid).
const REPORT_BRIER_POINTS: usize = 10;

fn thin_points(points: &[f64]) -> Vec<f64> {
    if points.len() <= REPORT_BRIER_POINTS {
        return points.to_vec();
    }
    (0..REPORT_BRIER_POINTS)
        .map(|i| points[i * (points.len() - 1) / (REPORT_BRIER_POINTS - 1)])
        .collect()
}

/// Evaluate per-instance survival curves against a test set.
pub fn evaluate_curves(
    curves: &[SurvivalCurve],
    pred_times: &[f64],
    grid: &TimeGrid,
    test: &SurvivalDataset,
    model_tag: &str,
    dataset_tag: &str,
    seed: u64,
    config_hash: &str,
) -> Result<EvaluationReport> {
    let c = c_index(pred_times, &test.times, &test.events)?;
    let ibs = integrated_brier(grid.boundaries(), curves, &test.times, &test.events)?;
    let censor = censoring_km(&test.times, &test.events)?;
    let t_max = test.times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let eval_points: Vec<f64> = grid
        .boundaries()
        .iter()
        .cloned()
        .filter(|&t| t > 0.0 && t <= t_max)
        .collect();
    let brier = thin_points(&eval_points)
        .into_iter()
        .map(|t| {
            let predicted: Vec<f64> = curves.iter().map(|c| c.eval(t)).collect();
            brier_score(t, &predicted, &test.times, &test.events, &censor)
                .map(|value| BrierPoint { time: t, value })
        })
        .collect::<isurv::Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        model: model_tag.to_string(),
        dataset: dataset_tag.to_string(),
        seed,
        n_test: test.len(),
        c_index: c,
        ibs,
        brier,
        tie_handling: "prediction ties count 0.5 per pair".to_string(),
        config_hash: config_hash.to_string(),
    })
}

/// Evaluate a trained model on a standardized test set.
pub fn evaluate_model(
    model: &TrainedModel,
    test: &SurvivalDataset,
    dataset_tag: &str,
    config_hash: &str,
) -> Result<EvaluationReport> {
    if test.dim() != model.input_dim() {
        return Err(anyhow!(
            "test data has {} features, model expects {}",
            test.dim(),
            model.input_dim()
        ));
    }
    let dists = predict_distributions(model, &test.features)?;
    let pred_times: Vec<f64> = dists
        .rows()
        .into_iter()
        .map(|r| expected_time_from_distribution(&model.grid, &r.to_vec()))
        .collect();
    let curves: Vec<SurvivalCurve> = dists
        .rows()
        .into_iter()
        .map(|r| survival_from_distribution(&model.grid, &r.to_vec()))
        .collect::<isurv::Result<_>>()?;
    evaluate_curves(
        &curves,
        &pred_times,
        &model.grid,
        test,
        model.config.variant.name(),
        dataset_tag,
        model.config.seed,
        config_hash,
    )
}

/// Per-instance Beran curves for a test set.
pub fn beran_curves(
    train: &SurvivalDataset,
    test: &SurvivalDataset,
    tau: f64,
) -> Result<Vec<SurvivalCurve>> {
    (0..test.len())
        .map(|i| Ok(beran(train, test.features.row(i), tau)?))
        .collect()
}

/// Evaluate the Beran baseline on a standardized pair.
pub fn evaluate_beran(
    prepared: &Prepared,
    tau: f64,
    dataset_tag: &str,
    seed: u64,
    config_hash: &str,
) -> Result<EvaluationReport> {
    let curves = beran_curves(&prepared.train, &prepared.test, tau)?;
    let pred_times: Vec<f64> = curves.iter().map(|c| c.expected_time()).collect();
    evaluate_curves(
        &curves,
        &pred_times,
        &prepared.grid,
        &prepared.test,
        "beran",
        dataset_tag,
        seed,
        config_hash,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use isurv::data::synthetic::{make_dataset, SyntheticKind, SyntheticSpec};
    use isurv::models::Variant;

    #[test]
    fn full_pipeline_produces_a_report() {
        let spec = SyntheticSpec {
            n_train: 40,
            n_test: 25,
            seed: 3,
            ..SyntheticSpec::new(SyntheticKind::Linear)
        };
        let (train_raw, test_raw) = make_dataset(&spec).unwrap();
        let prepared = prepare(&train_raw, &test_raw).unwrap();
        let config = ModelConfig {
            epochs: 10,
            embed_dim: 8,
            fine_tune_epochs: Some(5),
            seed: 3,
            ..ModelConfig::new(Variant::ISurvJ)
        };
        let model = train_prepared(&prepared, &config).unwrap();
        let report = evaluate_model(&model, &prepared.test, "linear", "abc").unwrap();
        assert!(report.c_index > 0.0 && report.c_index <= 1.0);
        assert!(report.ibs >= 0.0 && report.ibs <= 1.0);
        assert!(!report.brier.is_empty());

        let beran_report = evaluate_beran(&prepared, 0.1, "linear", 3, "abc").unwrap();
        assert!(beran_report.c_index > 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported_as_error() {
        let spec = SyntheticSpec {
            n_train: 30,
            n_test: 10,
            seed: 1,
            ..SyntheticSpec::new(SyntheticKind::Linear)
        };
        let (train_raw, test_raw) = make_dataset(&spec).unwrap();
        let prepared = prepare(&train_raw, &test_raw).unwrap();
        let config = ModelConfig {
            epochs: 2,
            embed_dim: 4,
            fine_tune_epochs: Some(1),
            ..ModelConfig::new(Variant::ISurvJG)
        };
        let model = train_prepared(&prepared, &config).unwrap();
        let narrow = SurvivalDataset::new(
            Array2::zeros((5, 2)),
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
            vec![1, 1, 1, 1, 1],
            None,
        )
        .unwrap();
        assert!(evaluate_model(&model, &narrow, "bad", "h").is_err());
    }
}
