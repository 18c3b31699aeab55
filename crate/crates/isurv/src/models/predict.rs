//! Inference: precise distributions, survival curves and interval envelopes.

use ndarray::{Array2, ArrayView1};
use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::attention::{embed, gaussian_attention, raw_attention, row_softmax};
use crate::curve::{cumulative_tail, SurvivalCurve};
use crate::error::{Error, Result};
use crate::grid::{ImpreciseLabel, TimeGrid};
use crate::models::train::{ModelParams, TrainedModel};

/// Attention weights of query rows over the training keys: no mask, no
/// dropout. Each row is a probability vector.
pub fn inference_weights(model: &TrainedModel, queries: &Array2<f64>) -> Result<Array2<f64>> {
    if queries.ncols() != model.input_dim() {
        return Err(Error::Shape(format!(
            "queries have {} features, model expects {}",
            queries.ncols(),
            model.input_dim()
        )));
    }
    match &model.params {
        ModelParams::Neural { embedding, attention } => {
            let mut no_rng = StdRng::seed_from_u64(0);
            let e_q = embed(queries, embedding, false, &mut no_rng)?;
            let e_k = embed(&model.train_features, embedding, false, &mut no_rng)?;
            let logits = raw_attention(&e_q, &e_k, attention)?;
            Ok(row_softmax(&logits, None))
        }
        ModelParams::Gaussian { log_tau } => {
            gaussian_attention(queries, &model.train_features, log_tau.exp(), None)
        }
    }
}

/// Interval distribution of one query point: the attention-weighted mixture
/// of the trained per-instance distributions.
pub fn predict_distribution(model: &TrainedModel, x0: ArrayView1<f64>) -> Result<Vec<f64>> {
    let queries = x0.insert_axis(ndarray::Axis(0)).to_owned();
    let p = predict_distributions(model, &queries)?;
    Ok(p.row(0).to_vec())
}

/// Interval distributions for a batch of query rows.
pub fn predict_distributions(model: &TrainedModel, queries: &Array2<f64>) -> Result<Array2<f64>> {
    let weights = inference_weights(model, queries)?;
    Ok(weights.dot(&model.pi_hat))
}

/// Step survival curve of an interval distribution over the grid boundaries.
pub fn survival_from_distribution(grid: &TimeGrid, probs: &[f64]) -> Result<SurvivalCurve> {
    let t = grid.num_intervals();
    if probs.len() != t {
        return Err(Error::Shape(format!(
            "{} probabilities for {} intervals",
            probs.len(),
            t
        )));
    }
    let tails = cumulative_tail(probs);
    let mut times = Vec::with_capacity(t);
    times.push(0.0);
    times.extend_from_slice(grid.boundaries());
    let values: Vec<f64> = tails[..t].iter().map(|&v| v.clamp(0.0, 1.0)).collect();
    SurvivalCurve::new(times, values)
}

pub fn predict_survival(model: &TrainedModel, x0: ArrayView1<f64>) -> Result<SurvivalCurve> {
    let p = predict_distribution(model, x0)?;
    survival_from_distribution(&model.grid, &p)
}

/// Expected event time of an interval distribution: probability-weighted
/// interval midpoints, with the unbounded last interval represented by its
/// left endpoint. A ranking statistic for the c-index.
pub fn expected_time_from_distribution(grid: &TimeGrid, probs: &[f64]) -> f64 {
    probs
        .iter()
        .enumerate()
        .map(|(j, &p)| p * grid.representative(j + 1))
        .sum()
}

pub fn expected_time(model: &TrainedModel, x0: ArrayView1<f64>) -> Result<f64> {
    let p = predict_distribution(model, x0)?;
    Ok(expected_time_from_distribution(&model.grid, &p))
}

/// Lower/upper survival envelopes induced by the credal labels under fixed
/// attention weights: uncensored neighbors pin mass exactly, censored
/// neighbors may place their whole weight in any admissible interval.
pub fn interval_envelope(
    weights: &[f64],
    labels: &[ImpreciseLabel],
    grid: &TimeGrid,
) -> Result<(SurvivalCurve, SurvivalCurve)> {
    if weights.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} labels",
            weights.len(),
            labels.len()
        )));
    }
    let t = grid.num_intervals();
    let mut lower = vec![0.0; t];
    let mut upper = vec![0.0; t];
    for (w, label) in weights.iter().zip(labels.iter()) {
        let support = label.support(t)?;
        if label.censored {
            for j in support {
                upper[j] += w;
            }
        } else {
            lower[support.start] += w;
            upper[support.start] += w;
        }
    }
    let lower_tails = cumulative_tail(&lower);
    let upper_tails = cumulative_tail(&upper);
    let mut times = Vec::with_capacity(t);
    times.push(0.0);
    times.extend_from_slice(grid.boundaries());
    let lower_values: Vec<f64> = lower_tails[..t].iter().map(|&v| v.clamp(0.0, 1.0)).collect();
    let upper_values: Vec<f64> = upper_tails[..t].iter().map(|&v| v.clamp(0.0, 1.0)).collect();
    let lower_curve = SurvivalCurve::new(times.clone(), lower_values)?;
    let upper_curve = SurvivalCurve::new(times, upper_values)?;
    Ok((lower_curve, upper_curve))
}

/// Envelopes of a query point under the model's inference weights.
pub fn predict_interval_survival(
    model: &TrainedModel,
    x0: ArrayView1<f64>,
) -> Result<(SurvivalCurve, SurvivalCurve)> {
    let queries = x0.insert_axis(ndarray::Axis(0)).to_owned();
    let weights = inference_weights(model, &queries)?;
    interval_envelope(&weights.row(0).to_vec(), &model.labels, &model.grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn survival_curve_is_the_cumulative_complement() {
        let grid = TimeGrid::from_times(&[1.0, 2.0]).unwrap();
        let curve = survival_from_distribution(&grid, &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(curve.times, vec![0.0, 1.0, 2.0]);
        let expect = [1.0, 0.8, 0.5];
        for (v, e) in curve.values.iter().zip(expect.iter()) {
            assert!((v - e).abs() < 1e-12);
        }
        // beyond the last boundary the curve keeps the open-interval mass
        assert!((curve.eval(100.0) - 0.5).abs() < 1e-12);

        // degenerate mass in the first interval drops to zero at t_1
        let curve = survival_from_distribution(&grid, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(curve.eval(1.0), 0.0);
        assert_eq!(curve.cumulative_hazard()[0], 0.0);
    }

    #[test]
    fn expected_time_uses_interval_representatives() {
        let grid = TimeGrid::from_times(&[1.0]).unwrap();
        // intervals [0,1] and [1, inf): all mass in the first gives 0.5
        assert!((expected_time_from_distribution(&grid, &[1.0, 0.0]) - 0.5).abs() < 1e-12);

        let grid = TimeGrid::from_times(&[1.0, 2.0]).unwrap();
        let t = expected_time_from_distribution(&grid, &[0.5, 0.5, 0.0]);
        assert!((t - 1.0).abs() < 1e-12);

        // shifting mass later strictly increases the expectation
        let earlier = expected_time_from_distribution(&grid, &[0.6, 0.4, 0.0]);
        let later = expected_time_from_distribution(&grid, &[0.4, 0.6, 0.0]);
        assert!(later > earlier);
    }

    #[test]
    fn envelope_hand_example() {
        let grid = TimeGrid::from_times(&[1.0, 2.0]).unwrap();
        let labels = vec![ImpreciseLabel::uncensored(2), ImpreciseLabel::censored(1)];
        let weights = vec![0.6, 0.4];
        let (lower, upper) = interval_envelope(&weights, &labels, &grid).unwrap();
        // lower distribution (0, 0.6, 0); upper (0, 1.0, 0.4)
        let lower_expect = [0.6, 0.6, 0.0];
        let upper_expect = [1.0, 1.0, 0.4];
        for ((l, le), (u, ue)) in lower
            .values
            .iter()
            .zip(lower_expect.iter())
            .zip(upper.values.iter().zip(upper_expect.iter()))
        {
            assert!((l - le).abs() < 1e-12, "lower {l} vs {le}");
            assert!((u - ue).abs() < 1e-12, "upper {u} vs {ue}");
        }
        for (l, u) in lower.values.iter().zip(upper.values.iter()) {
            assert!(l <= u);
        }
    }

    #[test]
    fn no_censored_neighbors_collapses_the_envelope() {
        let grid = TimeGrid::from_times(&[1.0, 2.0]).unwrap();
        let labels = vec![ImpreciseLabel::uncensored(1), ImpreciseLabel::uncensored(2)];
        let (lower, upper) = interval_envelope(&[0.5, 0.5], &labels, &grid).unwrap();
        assert_eq!(lower, upper);
    }

    #[test]
    fn envelope_requires_matching_lengths() {
        let grid = TimeGrid::from_times(&[1.0]).unwrap();
        let labels = vec![ImpreciseLabel::uncensored(1)];
        assert!(interval_envelope(&[0.5, 0.5], &labels, &grid).is_err());
    }

    #[test]
    fn tiny_temperature_concentrates_on_the_matching_key() {
        use crate::grid::ImpreciseLabel;
        use crate::models::{ModelConfig, ModelParams, TrainedModel, Variant};

        let grid = TimeGrid::from_times(&[1.0, 2.0, 3.0]).unwrap();
        let features = array![[0.0, 0.0], [3.0, 1.0], [-2.0, 4.0]];
        let labels = vec![
            ImpreciseLabel::uncensored(1),
            ImpreciseLabel::uncensored(2),
            ImpreciseLabel::uncensored(4),
        ];
        let pi_hat = array![
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0]
        ];
        let model = TrainedModel {
            config: ModelConfig::new(Variant::ISurvJG),
            grid,
            labels,
            train_features: features.clone(),
            params: ModelParams::Gaussian { log_tau: (1e-6_f64).ln() },
            pi_hat: pi_hat.clone(),
            pi_init: pi_hat,
            loss_trajectory: vec![],
        };
        // a query sitting on the second training point inherits its distribution
        let p = predict_distribution(&model, features.row(1)).unwrap();
        assert!(p[1] > 0.999, "got {p:?}");
    }

    #[test]
    fn single_key_prediction_is_that_distribution() {
        // one training instance, uncensored in interval 2 of 3
        let grid = TimeGrid::from_times(&[1.0, 2.0]).unwrap();
        let labels = vec![ImpreciseLabel::uncensored(2), ImpreciseLabel::uncensored(2)];
        let features = array![[0.0], [0.0]];
        let config = crate::models::ModelConfig {
            epochs: 0,
            fine_tune_epochs: Some(0),
            embed_dim: 2,
            ..crate::models::ModelConfig::new(crate::models::Variant::ISurvJG)
        };
        let model = crate::models::train(&features, &grid, &labels, &config).unwrap();
        let p = predict_distribution(&model, array![0.0].view()).unwrap();
        assert!((p[1] - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&v| v >= 0.0));
    }
}
