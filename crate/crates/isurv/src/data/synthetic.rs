//! Synthetic survival benchmark generators.
//!
//! Each generator produces a response y from sampled features; event times
//! follow a Weibull transform T = y / Gamma(1 + 1/k) * (-ln u)^(1/k) and the
//! censoring indicator is Bernoulli with Pr{censored} = `censor_prob`. The
//! parabola family is an illustrative one-dimensional layout with exact times
//! T = (x - x0)^2 and partially hand-set indicators.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Friedman1,
    Friedman2,
    Friedman3,
    Interactions,
    Sparse,
    Nonlinear,
    Noisy,
    Linear,
    Quadratic,
    Parabola,
}

impl SyntheticKind {
    pub const ALL: [SyntheticKind; 10] = [
        SyntheticKind::Friedman1,
        SyntheticKind::Friedman2,
        SyntheticKind::Friedman3,
        SyntheticKind::Interactions,
        SyntheticKind::Sparse,
        SyntheticKind::Nonlinear,
        SyntheticKind::Noisy,
        SyntheticKind::Linear,
        SyntheticKind::Quadratic,
        SyntheticKind::Parabola,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "friedman1" => Ok(SyntheticKind::Friedman1),
            "friedman2" => Ok(SyntheticKind::Friedman2),
            "friedman3" => Ok(SyntheticKind::Friedman3),
            "interactions" | "strong_interactions" => Ok(SyntheticKind::Interactions),
            "sparse" => Ok(SyntheticKind::Sparse),
            "nonlinear" => Ok(SyntheticKind::Nonlinear),
            "noisy" => Ok(SyntheticKind::Noisy),
            "linear" => Ok(SyntheticKind::Linear),
            "quadratic" => Ok(SyntheticKind::Quadratic),
            "parabola" => Ok(SyntheticKind::Parabola),
            other => Err(Error::Validation(format!("unknown synthetic kind '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::Friedman1 => "friedman1",
            SyntheticKind::Friedman2 => "friedman2",
            SyntheticKind::Friedman3 => "friedman3",
            SyntheticKind::Interactions => "interactions",
            SyntheticKind::Sparse => "sparse",
            SyntheticKind::Nonlinear => "nonlinear",
            SyntheticKind::Noisy => "noisy",
            SyntheticKind::Linear => "linear",
            SyntheticKind::Quadratic => "quadratic",
            SyntheticKind::Parabola => "parabola",
        }
    }

    /// Smallest feature count the response formula supports.
    pub fn min_features(&self) -> usize {
        match self {
            SyntheticKind::Friedman1 | SyntheticKind::Nonlinear => 5,
            SyntheticKind::Friedman2 | SyntheticKind::Friedman3 => 4,
            SyntheticKind::Interactions => 2,
            SyntheticKind::Parabola => 1,
            _ => 1,
        }
    }

    /// Default Weibull shape: 5 everywhere except the noisy family, whose
    /// heavy-tailed times come from a shape of 1.
    pub fn default_shape(&self) -> f64 {
        match self {
            SyntheticKind::Noisy => 1.0,
            _ => 5.0,
        }
    }
}

/// Parameters of a synthetic dataset draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_train: usize,
    pub n_test: usize,
    pub d: usize,
    pub weibull_shape: f64,
    pub censor_prob: f64,
    /// Fraction of non-zero entries (sparse family only).
    pub sparsity: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind) -> Self {
        SyntheticSpec {
            kind,
            n_train: 500,
            n_test: 300,
            d: if kind == SyntheticKind::Parabola { 1 } else { kind.min_features().max(5) },
            weibull_shape: kind.default_shape(),
            censor_prob: if kind == SyntheticKind::Parabola { 0.1 } else { 0.2 },
            sparsity: 0.2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == SyntheticKind::Parabola && self.d != 1 {
            return Err(Error::Validation("parabola data is one-dimensional".into()));
        }
        if self.d < self.kind.min_features() {
            return Err(Error::Validation(format!(
                "kind '{}' needs at least {} features, got {}",
                self.kind.name(),
                self.kind.min_features(),
                self.d
            )));
        }
        if self.n_train < 2 || self.n_test < 2 {
            return Err(Error::Size("need n_train >= 2 and n_test >= 2".into()));
        }
        if self.weibull_shape <= 0.0 {
            return Err(Error::Domain(format!("weibull shape {} must be positive", self.weibull_shape)));
        }
        if !(0.0..1.0).contains(&self.censor_prob) {
            return Err(Error::Domain(format!("censor_prob {} outside [0, 1)", self.censor_prob)));
        }
        if !(0.0..1.0).contains(&self.sparsity) || self.sparsity == 0.0 {
            return Err(Error::Domain(format!("sparsity {} outside (0, 1)", self.sparsity)));
        }
        Ok(())
    }
}

/// Coefficient structure of a response family, sampled once per dataset so
/// train and test share the same underlying function.
#[derive(Debug, Clone)]
pub enum ResponseModel {
    Friedman1,
    Friedman2,
    Friedman3,
    Interactions { weights: Array2<f64> },
    LinearForm { weights: Array1<f64> },
    Nonlinear,
    Quadratic { q: Array2<f64> },
    Parabola { x0: f64 },
}

impl ResponseModel {
    pub fn sample(kind: SyntheticKind, d: usize, rng: &mut StdRng) -> Self {
        match kind {
            SyntheticKind::Friedman1 => ResponseModel::Friedman1,
            SyntheticKind::Friedman2 => ResponseModel::Friedman2,
            SyntheticKind::Friedman3 => ResponseModel::Friedman3,
            SyntheticKind::Interactions => {
                let mut weights = Array2::zeros((d, d));
                for i in 0..d {
                    for j in (i + 1)..d {
                        let w: f64 = rng.gen_range(0.0..1.0);
                        weights[[i, j]] = w;
                        weights[[j, i]] = w;
                    }
                }
                ResponseModel::Interactions { weights }
            }
            SyntheticKind::Sparse | SyntheticKind::Noisy | SyntheticKind::Linear => {
                let weights = Array1::from_shape_fn(d, |_| rng.gen_range(0.0..1.0));
                ResponseModel::LinearForm { weights }
            }
            SyntheticKind::Nonlinear => ResponseModel::Nonlinear,
            SyntheticKind::Quadratic => {
                let a = Array2::from_shape_fn((d, d), |_| {
                    let z: f64 = rng.sample(StandardNormal);
                    z
                });
                ResponseModel::Quadratic { q: a.t().dot(&a) }
            }
            SyntheticKind::Parabola => ResponseModel::Parabola { x0: 0.0 },
        }
    }

    pub fn response(&self, x: ArrayView1<f64>) -> f64 {
        match self {
            ResponseModel::Friedman1 => {
                10.0 * (PI * x[0] * x[1]).sin()
                    + 20.0 * (x[2] - 0.5).powi(2)
                    + 10.0 * x[3]
                    + 5.0 * x[4]
            }
            ResponseModel::Friedman2 => {
                let inner = x[1] * x[2] - 1.0 / (x[1] * x[3]);
                (x[0] * x[0] + inner * inner).sqrt()
            }
            ResponseModel::Friedman3 => {
                let inner = x[1] * x[2] - 1.0 / (x[1] * x[3]);
                (inner / x[0]).atan()
            }
            ResponseModel::Interactions { weights } => {
                let d = x.len();
                let mut y = 0.0;
                for i in 0..d {
                    for j in (i + 1)..d {
                        y += weights[[i, j]] * x[i] * x[j];
                    }
                }
                y
            }
            ResponseModel::LinearForm { weights } => x.dot(weights),
            ResponseModel::Nonlinear => {
                let mut y = 4.0 * x[0].sin()
                    + (x[1].abs() + 1.0).ln()
                    + x[2] * x[2]
                    + (0.5 * x[3]).exp()
                    + x[4].tanh();
                // transforms for the remaining features cycle through a fixed list
                for j in 5..x.len() {
                    y += match (j - 5) % 3 {
                        0 => x[j].sin() * (x[j - 1].abs() + 1.0).sqrt(),
                        1 => (x[j].abs() + 1.0).ln() * x[j - 2].tanh(),
                        _ => x[j] * x[j] * x[j - 3].cos(),
                    };
                }
                y
            }
            ResponseModel::Quadratic { q } => x.dot(&q.dot(&x)),
            ResponseModel::Parabola { x0 } => (x[0] - x0) * (x[0] - x0),
        }
    }
}

/// Sample a feature matrix for a response family.
pub fn sample_features(
    kind: SyntheticKind,
    n: usize,
    d: usize,
    sparsity: f64,
    rng: &mut StdRng,
) -> Array2<f64> {
    match kind {
        SyntheticKind::Friedman2 | SyntheticKind::Friedman3 => {
            let mut x = Array2::from_shape_fn((n, d), |_| rng.gen_range(0.0..1.0));
            for mut row in x.rows_mut() {
                row[0] *= 100.0;
                row[1] = row[1] * 520.0 * PI + 40.0 * PI;
                row[3] = row[3] * 10.0 + 1.0;
            }
            x
        }
        SyntheticKind::Sparse => Array2::from_shape_fn((n, d), |_| {
            if rng.gen_range(0.0..1.0) < sparsity {
                rng.gen_range(0.0..1.0)
            } else {
                0.0
            }
        }),
        _ => Array2::from_shape_fn((n, d), |_| rng.gen_range(0.0..1.0)),
    }
}

/// Response vector for a feature matrix: samples the family's coefficient
/// structure from `rng` and evaluates it row by row.
pub fn gen_response(
    kind: SyntheticKind,
    x: &Array2<f64>,
    spec: &SyntheticSpec,
    rng: &mut StdRng,
) -> Result<Vec<f64>> {
    if x.ncols() < kind.min_features() {
        return Err(Error::Validation(format!(
            "kind '{}' needs at least {} features, got {}",
            kind.name(),
            kind.min_features(),
            x.ncols()
        )));
    }
    if kind == SyntheticKind::Parabola && x.ncols() != 1 {
        return Err(Error::Validation("parabola data is one-dimensional".into()));
    }
    if x.ncols() != spec.d {
        return Err(Error::Validation(format!(
            "feature matrix has {} columns but the spec says {}",
            x.ncols(),
            spec.d
        )));
    }
    let model = ResponseModel::sample(kind, x.ncols(), rng);
    Ok(x.rows().into_iter().map(|row| model.response(row)).collect())
}

/// Weibull event time T = y / Gamma(1 + 1/k) * (-ln u)^(1/k).
pub fn weibull_event_time(y: f64, shape: f64, u: f64) -> Result<f64> {
    if shape <= 0.0 {
        return Err(Error::Domain(format!("weibull shape {shape} must be positive")));
    }
    if u <= 0.0 || u >= 1.0 || u.is_nan() {
        return Err(Error::Domain(format!("uniform draw {u} must lie strictly inside (0, 1)")));
    }
    if y < 0.0 || y.is_nan() {
        return Err(Error::Domain(format!("response {y} must be non-negative")));
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    Ok(y / libm::tgamma(1.0 + 1.0 / shape) * (-u.ln()).powf(1.0 / shape))
}

fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    rng.gen_range(f64::MIN_POSITIVE..1.0)
}

fn weibull_split(
    x: Array2<f64>,
    model: &ResponseModel,
    spec: &SyntheticSpec,
    rng: &mut StdRng,
) -> Result<SurvivalDataset> {
    let mut times = Vec::with_capacity(x.nrows());
    let mut events = Vec::with_capacity(x.nrows());
    for row in x.rows() {
        // responses below zero (possible for friedman3) clamp to a zero time
        let y = model.response(row).max(0.0);
        let u = open_unit(rng);
        times.push(weibull_event_time(y, spec.weibull_shape, u)?);
        let c: f64 = rng.gen_range(0.0..1.0);
        events.push(if c < spec.censor_prob { 0 } else { 1 });
    }
    SurvivalDataset::new(x, times, events, None)
}

fn parabola_split(spec: &SyntheticSpec, rng: &mut StdRng) -> Result<SurvivalDataset> {
    let model = ResponseModel::Parabola { x0: 0.0 };
    let mut xs = Vec::with_capacity(410);
    for _ in 0..200 {
        xs.push(rng.gen_range(-5.0..-2.0));
    }
    // ten evenly spaced points thin out the region around the minimum
    for k in 0..10 {
        xs.push(-2.0 + 4.0 * k as f64 / 9.0);
    }
    for _ in 0..200 {
        xs.push(rng.gen_range(2.0..5.0));
    }
    let features = Array2::from_shape_vec((410, 1), xs)?;
    let mut times = Vec::with_capacity(410);
    let mut events = Vec::with_capacity(410);
    for (i, row) in features.rows().into_iter().enumerate() {
        times.push(model.response(row));
        let center = (200..210).contains(&i);
        if center {
            // hand-set alternating indicators keep the sparse middle diverse
            events.push(((i - 200) % 2) as u8);
        } else {
            let c: f64 = rng.gen_range(0.0..1.0);
            events.push(if c < spec.censor_prob { 0 } else { 1 });
        }
    }
    SurvivalDataset::new(features, times, events, None)
}

/// Draw a train/test pair. Fully reproducible: the same spec (including seed)
/// yields bit-identical datasets.
pub fn make_dataset(spec: &SyntheticSpec) -> Result<(SurvivalDataset, SurvivalDataset)> {
    spec.validate()?;
    let mut master = StdRng::seed_from_u64(spec.seed);
    let seeds: Vec<u64> = (0..3).map(|_| master.gen()).collect();

    if spec.kind == SyntheticKind::Parabola {
        let train = parabola_split(spec, &mut StdRng::seed_from_u64(seeds[0]))?;
        let test = parabola_split(spec, &mut StdRng::seed_from_u64(seeds[1]))?;
        return Ok((train, test));
    }

    let model = ResponseModel::sample(spec.kind, spec.d, &mut StdRng::seed_from_u64(seeds[0]));
    let mut train_rng = StdRng::seed_from_u64(seeds[1]);
    let x_train = sample_features(spec.kind, spec.n_train, spec.d, spec.sparsity, &mut train_rng);
    let train = weibull_split(x_train, &model, spec, &mut train_rng)?;
    let mut test_rng = StdRng::seed_from_u64(seeds[2]);
    let x_test = sample_features(spec.kind, spec.n_test, spec.d, spec.sparsity, &mut test_rng);
    let test = weibull_split(x_test, &model, spec, &mut test_rng)?;
    Ok((train, test))
}
