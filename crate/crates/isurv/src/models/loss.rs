//! Likelihood losses over interval distributions.

use std::ops::Range;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::ImpreciseLabel;
use crate::tape::LOG_FLOOR;

/// 0-based half-open interval window whose mass enters the likelihood term of
/// an instance: the 2k+1 intervals centered at an uncensored event (clipped to
/// the grid) or everything after a censoring interval.
pub fn window_range(label: &ImpreciseLabel, k: usize, num_intervals: usize) -> Range<usize> {
    let c = label.interval;
    if label.censored {
        c.min(num_intervals)..num_intervals
    } else {
        let lo = (c - 1).saturating_sub(k);
        let hi = (c + k).min(num_intervals);
        lo..hi
    }
}

/// Negative log of the window mass, floored at 1e-12.
pub fn instance_loss(p: &[f64], label: &ImpreciseLabel, k: usize) -> f64 {
    let w = window_range(label, k, p.len());
    let mass: f64 = p[w].iter().sum();
    -(mass.max(LOG_FLOOR)).ln()
}

/// Attention-weighted mixture of per-instance distributions: each output row
/// is a convex combination of the rows of `dists`.
pub fn mix_probabilities(weights: &Array2<f64>, dists: &Array2<f64>) -> Result<Array2<f64>> {
    if weights.ncols() != dists.nrows() {
        return Err(Error::Shape(format!(
            "weights have {} columns but {} distributions supplied",
            weights.ncols(),
            dists.nrows()
        )));
    }
    Ok(weights.dot(dists))
}

/// Mean-strategy loss: instance losses summed over every generation.
pub fn loss_isurvm(gen_probs: &[Array2<f64>], labels: &[ImpreciseLabel], k: usize) -> f64 {
    gen_probs
        .iter()
        .map(|probs| {
            labels
                .iter()
                .enumerate()
                .map(|(i, label)| instance_loss(&probs.row(i).to_vec(), label, k))
                .sum::<f64>()
        })
        .sum()
}

/// Quantile-strategy reduction: sum of the ceil(r * M) largest per-generation
/// totals.
pub fn loss_isurvq(per_generation: &[f64], r: f64) -> f64 {
    let m = per_generation.len();
    let keep = ((r * m as f64).ceil() as usize).clamp(1, m);
    let mut sorted = per_generation.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted[..keep].iter().sum()
}

/// Joint-strategy loss: instance losses on the mixed distributions plus the
/// entropy term -gamma * sum pi ln pi of the learned distributions.
pub fn loss_isurvj(
    probs: &Array2<f64>,
    labels: &[ImpreciseLabel],
    pi_tilde: &Array2<f64>,
    gamma: f64,
    k: usize,
) -> f64 {
    let mut total = 0.0;
    for (i, label) in labels.iter().enumerate() {
        total += instance_loss(&probs.row(i).to_vec(), label, k);
        let xlnx: f64 = pi_tilde.row(i).iter().map(|&x| x * x.max(LOG_FLOOR).ln()).sum();
        total -= gamma * xlnx;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn window_is_clipped_and_centered() {
        let t = 5;
        let label = ImpreciseLabel::uncensored(3);
        assert_eq!(window_range(&label, 0, t), 2..3);
        assert_eq!(window_range(&label, 1, t), 1..4);
        assert_eq!(window_range(&label, 10, t), 0..5);
        assert_eq!(window_range(&ImpreciseLabel::uncensored(1), 2, t), 0..3);
        assert_eq!(window_range(&ImpreciseLabel::censored(2), 7, t), 2..5);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn instance_loss_hand_values() {
        let p = [0.25, 0.5, 0.25];
        let loss = instance_loss(&p, &ImpreciseLabel::uncensored(2), 0);
        assert!((loss - 0.5_f64.ln().abs()).abs() < 1e-12);
        assert!((loss - 0.6931).abs() < 1e-4);

        let loss = instance_loss(&p, &ImpreciseLabel::censored(1), 0);
        assert!((loss + 0.75_f64.ln()).abs() < 1e-12);
        assert!((loss - 0.2877).abs() < 1e-4);

        // a window wide enough to cover everything has zero loss
        let loss = instance_loss(&p, &ImpreciseLabel::uncensored(2), 1);
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn zero_mass_is_floored() {
        let p = [1.0, 0.0, 0.0];
        let loss = instance_loss(&p, &ImpreciseLabel::uncensored(3), 0);
        assert!((loss - (-(1e-12_f64).ln())).abs() < 1e-9);
        assert!(loss.is_finite());
    }

    #[test]
    fn widening_the_window_never_increases_the_loss() {
        let p = [0.1, 0.2, 0.3, 0.25, 0.15];
        let label = ImpreciseLabel::uncensored(3);
        let mut last = f64::INFINITY;
        for k in 0..6 {
            let l = instance_loss(&p, &label, k);
            assert!(l <= last + 1e-15);
            last = l;
        }
    }

    #[test]
    fn mixture_hand_example() {
        let w = array![[0.6, 0.4]];
        let dists = array![[0.0, 1.0, 0.0], [0.0, 0.5, 0.5]];
        let p = mix_probabilities(&w, &dists).unwrap();
        let expect = [0.0, 0.8, 0.2];
        for (a, b) in p.row(0).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        // permutation weights permute the rows
        let perm = array![[0.0, 1.0], [1.0, 0.0]];
        let p = mix_probabilities(&perm, &dists).unwrap();
        assert_eq!(p.row(0).to_vec(), dists.row(1).to_vec());
        assert_eq!(p.row(1).to_vec(), dists.row(0).to_vec());

        // identical rows are a fixed point of any convex mixture
        let same = array![[0.3, 0.7, 0.0], [0.3, 0.7, 0.0]];
        let w = array![[0.25, 0.75]];
        let p = mix_probabilities(&w, &same).unwrap();
        for (a, b) in p.row(0).iter().zip(same.row(0).iter()) {
            assert!((a - b).abs() < 1e-12);
        }

        assert!(mix_probabilities(&array![[1.0, 0.0, 0.0]], &dists).is_err());
    }

    #[test]
    fn mean_strategy_sums_generations() {
        let labels = vec![ImpreciseLabel::uncensored(1)];
        let g1 = array![[0.5, 0.5]];
        let g2 = array![[0.25, 0.75]];
        let total = loss_isurvm(&[g1.clone(), g2], &labels, 0);
        let expect = -(0.5_f64.ln()) - (0.25_f64.ln());
        assert!((total - expect).abs() < 1e-12);

        // single generation reduces to the plain summed instance loss
        let single = loss_isurvm(&[g1.clone()], &labels, 0);
        assert!((single - instance_loss(&g1.row(0).to_vec(), &labels[0], 0)).abs() < 1e-15);

        // degenerate mass on the true interval gives zero loss
        let exact = array![[1.0, 0.0]];
        assert!(loss_isurvm(&[exact], &labels, 0).abs() < 1e-12);
    }

    #[test]
    fn quantile_strategy_keeps_largest() {
        assert_eq!(loss_isurvq(&[1.0, 2.0, 3.0, 4.0], 0.5), 7.0);
        assert_eq!(loss_isurvq(&[1.0, 2.0, 3.0, 4.0], 1.0), 10.0);
        assert_eq!(loss_isurvq(&[5.0], 0.1), 5.0);
    }

    #[test]
    fn joint_loss_entropy_term() {
        let labels = vec![ImpreciseLabel::uncensored(1)];
        let probs = array![[1.0, 0.0, 0.0, 0.0]];

        // gamma = 0 reduces to the plain likelihood term
        let uniform = array![[0.25, 0.25, 0.25, 0.25]];
        assert!(loss_isurvj(&probs, &labels, &uniform, 0.0, 0).abs() < 1e-12);

        // uniform distribution over four intervals contributes gamma * ln 4
        let with_entropy = loss_isurvj(&probs, &labels, &uniform, 0.1, 0);
        assert!((with_entropy - 0.1 * 4.0_f64.ln()).abs() < 1e-12);
        assert!((with_entropy - 0.13863).abs() < 1e-5);

        // degenerate distributions have zero entropy
        let degenerate = array![[1.0, 0.0, 0.0, 0.0]];
        assert!(loss_isurvj(&probs, &labels, &degenerate, 0.1, 0).abs() < 1e-12);
    }
}
