//! Time-axis partition and interval-valued instance labels.
//!
//! The observed times split the axis into `T` intervals
//! `[0, t_1], [t_1, t_2], ..., [t_{T-1}, inf)`. An uncensored instance pins a
//! degenerate distribution on the interval containing its event time; a
//! censored instance only constrains the event to some interval after its
//! censoring interval, inducing a credal set of distributions.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered interval boundaries `t_1 < ... < t_{T-1}` (with implicit `t_0 = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    boundaries: Vec<f64>,
}

impl TimeGrid {
    /// Build the partition from observed times (censored and uncensored
    /// alike): boundaries are the sorted unique positive times.
    pub fn from_times(times: &[f64]) -> Result<Self> {
        let mut boundaries: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0).collect();
        if boundaries.is_empty() {
            return Err(Error::Size("need at least one positive observed time".into()));
        }
        boundaries.sort_by(|a, b| a.partial_cmp(b).unwrap());
        boundaries.dedup();
        Ok(TimeGrid { boundaries })
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Number of intervals `T` (one more than the boundary count).
    pub fn num_intervals(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// 1-based index of the interval containing `time`: the smallest `j` with
    /// `time <= t_j`, or `T` when the time lies beyond the last boundary.
    pub fn interval_index(&self, time: f64) -> Result<usize> {
        if time < 0.0 {
            return Err(Error::Domain(format!("negative time {time}")));
        }
        Ok(self.boundaries.partition_point(|&b| b < time) + 1)
    }

    /// Midpoint representative of interval `k` (1-based); the unbounded last
    /// interval is represented by its left endpoint.
    pub fn representative(&self, k: usize) -> f64 {
        let t = self.num_intervals();
        debug_assert!(k >= 1 && k <= t);
        if k == t {
            *self.boundaries.last().unwrap()
        } else {
            let left = if k == 1 { 0.0 } else { self.boundaries[k - 2] };
            0.5 * (left + self.boundaries[k - 1])
        }
    }
}

/// Interval index plus censoring flag for one training instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpreciseLabel {
    /// 1-based index of the interval containing the observed time.
    pub interval: usize,
    pub censored: bool,
}

impl ImpreciseLabel {
    pub fn uncensored(interval: usize) -> Self {
        ImpreciseLabel { interval, censored: false }
    }

    pub fn censored(interval: usize) -> Self {
        ImpreciseLabel { interval, censored: true }
    }

    /// 0-based half-open range of intervals the instance's distribution may
    /// put mass on: the singleton `{c}` when uncensored, `{c+1, ..., T}` when
    /// censored.
    pub fn support(&self, num_intervals: usize) -> Result<std::ops::Range<usize>> {
        let c = self.interval;
        if c < 1 || c > num_intervals {
            return Err(Error::Domain(format!(
                "interval index {c} outside 1..={num_intervals}"
            )));
        }
        if self.censored {
            if c == num_intervals {
                return Err(Error::UnrepresentableLabel(format!(
                    "censored in the last interval ({c} of {num_intervals}); no admissible interval remains"
                )));
            }
            Ok(c..num_intervals)
        } else {
            Ok(c - 1..c)
        }
    }
}

/// Componentwise lower/upper probability bounds induced by a label.
pub fn label_bounds(label: &ImpreciseLabel, num_intervals: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let support = label.support(num_intervals)?;
    let mut lower = vec![0.0; num_intervals];
    let mut upper = vec![0.0; num_intervals];
    if label.censored {
        for j in support {
            upper[j] = 1.0;
        }
    } else {
        lower[support.start] = 1.0;
        upper[support.start] = 1.0;
    }
    Ok((lower, upper))
}

/// Draw `m` distributions from the label's credal set as an `m x T` matrix.
///
/// Uncensored labels yield `m` copies of the degenerate vector; censored
/// labels get flat Dirichlet draws over their trailing admissible intervals.
pub fn sample_credal<R: Rng>(
    label: &ImpreciseLabel,
    num_intervals: usize,
    m: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if m < 1 {
        return Err(Error::Domain("need at least one generation".into()));
    }
    let support = label.support(num_intervals)?;
    let mut out = Array2::zeros((m, num_intervals));
    if !label.censored {
        for row in 0..m {
            out[[row, support.start]] = 1.0;
        }
        return Ok(out);
    }
    let dim = support.len();
    for row in 0..m {
        if dim == 1 {
            out[[row, support.start]] = 1.0;
            continue;
        }
        // flat Dirichlet via normalized unit-rate exponentials
        let mut total = 0.0;
        for j in support.clone() {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let g = -u.ln();
            out[[row, j]] = g;
            total += g;
        }
        for j in support.clone() {
            out[[row, j]] /= total;
        }
    }
    Ok(out)
}

/// Label every instance against the grid. Censored instances falling in the
/// last interval have an empty credal set; they are dropped with a warning and
/// reported in the second return value.
pub fn make_labels(
    grid: &TimeGrid,
    times: &[f64],
    events: &[u8],
) -> Result<(Vec<ImpreciseLabel>, Vec<usize>)> {
    let t = grid.num_intervals();
    let mut labels = Vec::with_capacity(times.len());
    let mut dropped = Vec::new();
    for (i, (&time, &event)) in times.iter().zip(events.iter()).enumerate() {
        let c = grid.interval_index(time)?;
        let label = if event == 1 {
            ImpreciseLabel::uncensored(c)
        } else {
            ImpreciseLabel::censored(c)
        };
        if label.support(t).is_err() {
            log::warn!("dropping instance {i}: censored in the last interval, no admissible interval remains");
            dropped.push(i);
        } else {
            labels.push(label);
        }
    }
    if labels.is_empty() {
        return Err(Error::Size("no representable instances remain".into()));
    }
    Ok((labels, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn grid_collapses_duplicates_and_sorts() {
        let g = TimeGrid::from_times(&[1.0, 2.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.boundaries(), &[1.0, 2.0, 3.0]);
        assert_eq!(g.num_intervals(), 4);

        let g = TimeGrid::from_times(&[5.0]).unwrap();
        assert_eq!(g.boundaries(), &[5.0]);
        assert_eq!(g.num_intervals(), 2);

        let g = TimeGrid::from_times(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(g.boundaries(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn grid_rejects_empty_and_all_zero() {
        assert!(TimeGrid::from_times(&[]).is_err());
        assert!(TimeGrid::from_times(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn interval_index_uses_right_endpoint_inclusion() {
        let g = TimeGrid::from_times(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g.interval_index(2.0).unwrap(), 2);
        assert_eq!(g.interval_index(0.5).unwrap(), 1);
        assert_eq!(g.interval_index(9.0).unwrap(), 4);
        assert_eq!(g.interval_index(0.0).unwrap(), 1);
        assert!(g.interval_index(-1.0).is_err());
        // every boundary maps to its own interval
        for (j, &b) in g.boundaries().iter().enumerate() {
            assert_eq!(g.interval_index(b).unwrap(), j + 1);
        }
    }

    #[test]
    fn bounds_for_uncensored_and_censored() {
        let (lo, up) = label_bounds(&ImpreciseLabel::uncensored(2), 3).unwrap();
        assert_eq!(lo, vec![0.0, 1.0, 0.0]);
        assert_eq!(up, vec![0.0, 1.0, 0.0]);

        let (lo, up) = label_bounds(&ImpreciseLabel::censored(1), 3).unwrap();
        assert_eq!(lo, vec![0.0, 0.0, 0.0]);
        assert_eq!(up, vec![0.0, 1.0, 1.0]);

        assert!(matches!(
            label_bounds(&ImpreciseLabel::censored(3), 3),
            Err(Error::UnrepresentableLabel(_))
        ));
    }

    #[test]
    fn credal_rows_stay_in_bounds_and_sum_to_one() {
        let mut rng = StdRng::seed_from_u64(7);
        let label = ImpreciseLabel::censored(2);
        let s = sample_credal(&label, 5, 40, &mut rng).unwrap();
        let (lo, up) = label_bounds(&label, 5).unwrap();
        for row in s.rows() {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-12);
            for (j, &v) in row.iter().enumerate() {
                assert!(v >= lo[j] - 1e-15 && v <= up[j] + 1e-15);
            }
            assert_eq!(row[0], 0.0);
            assert_eq!(row[1], 0.0);
        }
    }

    #[test]
    fn uncensored_samples_are_degenerate_copies() {
        let mut rng = StdRng::seed_from_u64(1);
        let s = sample_credal(&ImpreciseLabel::uncensored(2), 4, 3, &mut rng).unwrap();
        for row in s.rows() {
            assert_eq!(row.to_vec(), vec![0.0, 1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn one_dimensional_simplex_is_a_point() {
        let mut rng = StdRng::seed_from_u64(1);
        let s = sample_credal(&ImpreciseLabel::censored(3), 4, 5, &mut rng).unwrap();
        for row in s.rows() {
            assert_eq!(row.to_vec(), vec![0.0, 0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn flat_dirichlet_is_symmetric_on_average() {
        let mut rng = StdRng::seed_from_u64(99);
        let label = ImpreciseLabel::censored(2);
        let n = 10_000;
        let s = sample_credal(&label, 5, n, &mut rng).unwrap();
        for j in 2..5 {
            let mean = s.column(j).sum() / n as f64;
            assert!(
                (mean - 1.0 / 3.0).abs() < 0.02,
                "coordinate {j} mean {mean} vs 1/3"
            );
        }
    }

    #[test]
    fn labels_drop_unrepresentable_with_report() {
        let g = TimeGrid::from_times(&[1.0, 2.0]).unwrap();
        // censored at a time beyond every boundary lands in the open last interval
        let (labels, dropped) = make_labels(&g, &[1.0, 2.0, 3.0], &[1, 1, 0]).unwrap();
        assert_eq!(labels.len(), 2);
        assert_eq!(dropped, vec![2]);
    }

    #[test]
    fn sample_credal_rejects_zero_generations() {
        let mut rng = StdRng::seed_from_u64(1);
        assert!(sample_credal(&ImpreciseLabel::uncensored(1), 3, 0, &mut rng).is_err());
    }
}
