//! Evaluation metrics for survival predictions.

use serde::{Deserialize, Serialize};

use crate::baselines::kaplan_meier;
use crate::curve::SurvivalCurve;
use crate::error::{Error, Result};

/// C-index: fraction of admissible pairs (event observed for the earlier
/// instance, strictly earlier time) ranked correctly by the predicted times.
/// Ties in predictions count one half.
pub fn c_index(pred_times: &[f64], times: &[f64], events: &[u8]) -> Result<f64> {
    if pred_times.len() != times.len() || times.len() != events.len() {
        return Err(Error::Shape("c_index inputs must share a length".into()));
    }
    let n = times.len();
    let mut concordant = 0.0;
    let mut admissible = 0usize;
    for i in 0..n {
        if events[i] != 1 {
            continue;
        }
        for j in 0..n {
            if times[i] < times[j] {
                admissible += 1;
                if pred_times[i] < pred_times[j] {
                    concordant += 1.0;
                } else if pred_times[i] == pred_times[j] {
                    concordant += 0.5;
                }
            }
        }
    }
    if admissible == 0 {
        return Err(Error::UndefinedMetric("no admissible pairs for the c-index".into()));
    }
    Ok(concordant / admissible as f64)
}

/// Kaplan-Meier estimate of the censoring distribution (flipped indicators),
/// used for inverse-probability-of-censoring weights.
pub fn censoring_km(times: &[f64], events: &[u8]) -> Result<SurvivalCurve> {
    let flipped: Vec<u8> = events.iter().map(|&e| 1 - e).collect();
    if flipped.iter().all(|&e| e == 0) {
        // no censoring at all: the censoring survival is identically one
        return SurvivalCurve::new(vec![0.0], vec![1.0]);
    }
    kaplan_meier(times, &flipped)
}

/// Inverse-probability-of-censoring-weighted Brier score at time `t`.
///
/// Instances with an observed event before `t` contribute through the weight
/// 1/G(T_i-), instances still at risk at `t` through 1/G(t); instances
/// censored before `t` contribute nothing. Instances whose weight denominator
/// is zero are excluded with a warning.
pub fn brier_score(
    t: f64,
    predicted: &[f64],
    times: &[f64],
    events: &[u8],
    censor_km: &SurvivalCurve,
) -> Result<f64> {
    if predicted.len() != times.len() || times.len() != events.len() {
        return Err(Error::Shape("brier_score inputs must share a length".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let mut excluded = 0usize;
    for i in 0..times.len() {
        let s = predicted[i];
        if times[i] <= t && events[i] == 1 {
            let g = censor_km.eval_left(times[i]);
            if g <= 0.0 {
                excluded += 1;
                continue;
            }
            total += s * s / g;
            count += 1;
        } else if times[i] > t {
            let g = censor_km.eval(t);
            if g <= 0.0 {
                excluded += 1;
                continue;
            }
            total += (1.0 - s) * (1.0 - s) / g;
            count += 1;
        } else {
            // censored before t: status unknown, weight zero
            count += 1;
        }
    }
    if excluded > 0 {
        log::warn!("brier_score at t={t}: excluded {excluded} instance(s) with zero censoring weight");
    }
    if count == 0 {
        return Err(Error::UndefinedMetric(format!("no usable instances at t={t}")));
    }
    Ok(total / count as f64)
}

/// Integrated Brier score: trapezoidal average of the Brier score over the
/// evaluation points up to the largest observed test time. A single point
/// degenerates to the plain Brier score there.
pub fn integrated_brier(
    eval_times: &[f64],
    predicted_curves: &[SurvivalCurve],
    times: &[f64],
    events: &[u8],
) -> Result<f64> {
    if predicted_curves.len() != times.len() {
        return Err(Error::Shape("one predicted curve per test instance required".into()));
    }
    let t_max = times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut points: Vec<f64> = eval_times.iter().cloned().filter(|&t| t > 0.0 && t <= t_max).collect();
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();
    if points.is_empty() {
        return Err(Error::UndefinedMetric("no evaluation points inside the observed range".into()));
    }

    let censor = censoring_km(times, events)?;
    let scores: Vec<f64> = points
        .iter()
        .map(|&t| {
            let predicted: Vec<f64> = predicted_curves.iter().map(|c| c.eval(t)).collect();
            brier_score(t, &predicted, times, events, &censor)
        })
        .collect::<Result<_>>()?;

    if points.len() == 1 {
        return Ok(scores[0]);
    }
    let span = points.last().unwrap() - points[0];
    let mut integral = 0.0;
    for i in 1..points.len() {
        integral += 0.5 * (scores[i] + scores[i - 1]) * (points[i] - points[i - 1]);
    }
    Ok(integral / span)
}

/// Sup distance between two step curves evaluated on the union of their
/// breakpoints.
pub fn ks_distance(a: &SurvivalCurve, b: &SurvivalCurve) -> f64 {
    let mut points: Vec<f64> = a.times.iter().chain(b.times.iter()).cloned().collect();
    points.sort_by(|x, y| x.partial_cmp(y).unwrap());
    points.dedup();
    points
        .iter()
        .map(|&t| (a.eval(t) - b.eval(t)).abs())
        .fold(0.0, f64::max)
}

/// Pointwise arithmetic mean of curves sharing a time grid.
pub fn unconditional_sf(curves: &[SurvivalCurve]) -> Result<SurvivalCurve> {
    if curves.is_empty() {
        return Err(Error::Size("cannot average an empty set of curves".into()));
    }
    let times = curves[0].times.clone();
    for c in curves {
        if c.times != times {
            return Err(Error::Shape("curves must share a time grid".into()));
        }
    }
    let n = curves.len() as f64;
    let values: Vec<f64> = (0..times.len())
        .map(|i| curves.iter().map(|c| c.values[i]).sum::<f64>() / n)
        .collect();
    SurvivalCurve::new(times, values)
}

/// Evaluation summary serialized into CLI reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub dataset: String,
    pub seed: u64,
    pub n_test: usize,
    pub c_index: f64,
    pub ibs: f64,
    pub brier: Vec<BrierPoint>,
    /// C-index prediction ties score one half per pair.
    pub tie_handling: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BrierPoint {
    pub time: f64,
    pub value: f64,
}
