//! Kaplan-Meier and Beran (conditional Kaplan-Meier) baseline estimators.

use ndarray::ArrayView1;

use crate::curve::SurvivalCurve;
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};

/// Product-limit survival estimator. Censored observations reduce the risk
/// set only; the curve steps at distinct event times.
pub fn kaplan_meier(times: &[f64], events: &[u8]) -> Result<SurvivalCurve> {
    if times.is_empty() || times.len() != events.len() {
        return Err(Error::Size(format!(
            "kaplan_meier needs matching non-empty inputs, got {} times and {} events",
            times.len(),
            events.len()
        )));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap().then(a.cmp(&b)));

    let mut curve_times = vec![0.0];
    let mut curve_values = vec![1.0];
    let mut survival = 1.0;
    let mut at_risk = times.len();
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut d = 0usize;
        let mut removed = 0usize;
        while i < order.len() && times[order[i]] == t {
            if events[order[i]] == 1 {
                d += 1;
            }
            removed += 1;
            i += 1;
        }
        if d > 0 && t > 0.0 {
            survival *= 1.0 - d as f64 / at_risk as f64;
            curve_times.push(t);
            curve_values.push(survival);
        }
        at_risk -= removed;
    }
    SurvivalCurve::new(curve_times, curve_values)
}

/// Normalized Gaussian kernel weights exp(-||x0 - xi||^2 / tau) / sum.
fn gaussian_weights(features: &ndarray::Array2<f64>, x0: ArrayView1<f64>, tau: f64) -> Vec<f64> {
    let mut sq = Vec::with_capacity(features.nrows());
    for row in features.rows() {
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x0.iter()) {
            s += (a - b) * (a - b);
        }
        sq.push(s);
    }
    // subtracting the minimum distance keeps the exponentials representable
    let min = sq.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut weights: Vec<f64> = sq.iter().map(|&s| (-(s - min) / tau).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

/// Beran conditional survival estimator at a query point with normalized
/// Gaussian weights of temperature `tau`.
///
/// Tied times are processed sequentially (events before censorings at the same
/// time, ascending index among equals), which makes the uniform-weight case
/// coincide with the Kaplan-Meier estimator. A non-positive denominator clamps
/// the curve to zero from that time on.
pub fn beran(train: &SurvivalDataset, x0: ArrayView1<f64>, tau: f64) -> Result<SurvivalCurve> {
    if tau <= 0.0 {
        return Err(Error::Domain(format!("bandwidth {tau} must be positive")));
    }
    if x0.len() != train.dim() {
        return Err(Error::Shape(format!(
            "query has {} features, training data has {}",
            x0.len(),
            train.dim()
        )));
    }
    let weights = gaussian_weights(&train.features, x0, tau);
    beran_with_weights(&train.times, &train.events, &weights)
}

/// Beran product form for explicit instance weights (must sum to one).
pub fn beran_with_weights(times: &[f64], events: &[u8], weights: &[f64]) -> Result<SurvivalCurve> {
    if times.is_empty() || times.len() != events.len() || times.len() != weights.len() {
        return Err(Error::Size("beran needs matching non-empty inputs".into()));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| {
        times[a]
            .partial_cmp(&times[b])
            .unwrap()
            .then(events[b].cmp(&events[a]))
            .then(a.cmp(&b))
    });

    let mut curve_times = vec![0.0];
    let mut curve_values = vec![1.0];
    let mut survival = 1.0;
    let mut cum_weight = 0.0;
    let mut clamped = false;
    let mut idx = 0;
    while idx < order.len() {
        let t = times[order[idx]];
        let mut changed = false;
        while idx < order.len() && times[order[idx]] == t {
            let i = order[idx];
            if events[i] == 1 && t > 0.0 && !clamped {
                let denom = 1.0 - cum_weight;
                if denom <= 1e-12 {
                    log::warn!("beran: non-positive risk mass at time {t}; clamping survival to zero");
                    survival = 0.0;
                    clamped = true;
                } else {
                    survival *= (1.0 - weights[i] / denom).max(0.0);
                }
                changed = true;
            }
            cum_weight += weights[i];
            idx += 1;
        }
        if changed {
            curve_times.push(t);
            curve_values.push(survival.max(0.0));
        }
    }
    SurvivalCurve::new(curve_times, curve_values)
}
