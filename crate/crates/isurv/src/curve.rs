//! Right-continuous step survival curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LOG_FLOOR: f64 = 1e-12;

/// A survival function S(t) represented as a right-continuous step curve.
///
/// `times[0]` is always 0; between consecutive points the curve is constant,
/// and beyond the last point it keeps its last value. Predicted curves start
/// at 1; envelope bounds may start lower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl SurvivalCurve {
    /// Build a curve from step points. A leading (0, 1) anchor is inserted
    /// when the first time is positive.
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Shape(format!(
                "curve has {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.is_empty() {
            return Err(Error::Size("curve needs at least one point".into()));
        }
        let (mut times, mut values) = (times, values);
        if times[0] > 0.0 {
            times.insert(0, 0.0);
            values.insert(0, 1.0);
        }
        let curve = SurvivalCurve { times, values };
        curve.check()?;
        Ok(curve)
    }

    fn check(&self) -> Result<()> {
        if self.times[0] != 0.0 {
            return Err(Error::Validation("curve must start at t = 0".into()));
        }
        for w in self.times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Validation("curve times must be strictly increasing".into()));
            }
        }
        for w in self.values.windows(2) {
            if w[1] > w[0] + 1e-9 {
                return Err(Error::Validation("survival values must be non-increasing".into()));
            }
        }
        for &v in &self.values {
            if !(-1e-9..=1.0 + 1e-9).contains(&v) {
                return Err(Error::Validation(format!("survival value {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// S(t): value of the step curve at `t` (right-continuous).
    pub fn eval(&self, t: f64) -> f64 {
        if t < self.times[0] {
            return 1.0;
        }
        // last index with times[i] <= t
        let idx = self.times.partition_point(|&x| x <= t);
        self.values[idx - 1]
    }

    /// S(t-): left limit just before `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x < t);
        if idx == 0 {
            1.0
        } else {
            self.values[idx - 1]
        }
    }

    /// Cumulative hazard H(t) = -ln S(t) with S floored at 1e-12.
    pub fn cumulative_hazard(&self) -> Vec<f64> {
        self.values.iter().map(|&s| -(s.max(LOG_FLOOR)).ln()).collect()
    }

    /// Expected event time implied by the curve's step masses. The mass of
    /// each step is assigned to the midpoint of its interval and the residual
    /// tail mass to the last time point.
    pub fn expected_time(&self) -> f64 {
        let mut total = 0.0;
        for i in 1..self.times.len() {
            let mass = self.values[i - 1] - self.values[i];
            let mid = 0.5 * (self.times[i - 1] + self.times[i]);
            total += mass * mid;
        }
        let tail = *self.values.last().unwrap();
        total += tail * self.times.last().unwrap();
        total
    }
}

/// Tail masses sum_{k > j} p_k for j = 0..=T; entry 0 is the total mass and
/// entry T is 0.
pub fn cumulative_tail(probs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; probs.len() + 1];
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate().rev() {
        acc += p;
        out[k] = acc;
    }
    out
}
