//! Nested cross-validation with seeded random hyperparameter search.

use anyhow::{bail, Result};
use ndarray::Array2;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use isurv::data::SurvivalDataset;
use isurv::metrics::EvaluationReport;
use isurv::models::{ModelConfig, Variant};

use crate::experiment::{evaluate_model, prepare, train_prepared};

/// Layout and budget of a nested cross-validation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvSpec {
    pub outer_repeats: usize,
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub trials: usize,
    pub seed: u64,
}

impl CvSpec {
    /// Desk-scale defaults: two repeats of 3-fold outer CV, 2 inner folds,
    /// ten search trials.
    pub fn desk_scale(seed: u64) -> Self {
        CvSpec { outer_repeats: 2, outer_folds: 3, inner_folds: 2, trials: 10, seed }
    }

    /// The full evaluation protocol: four repeats of stratified 5-fold outer
    /// CV with 3-fold inner search.
    pub fn full_protocol(trials: usize, seed: u64) -> Self {
        CvSpec { outer_repeats: 4, outer_folds: 5, inner_folds: 3, trials, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer_folds < 2 || self.inner_folds < 2 {
            bail!("outer and inner folds must be at least 2");
        }
        if self.trials < 1 {
            bail!("need at least one search trial");
        }
        if self.outer_repeats < 1 {
            bail!("need at least one outer repeat");
        }
        Ok(())
    }
}

/// Hyperparameter search ranges used by the random search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate: (f64, f64),
    pub weight_decay: (f64, f64),
    pub gamma: (f64, f64),
    pub dropout: (f64, f64),
    pub p_mask: (f64, f64),
    pub batch_rate: (f64, f64),
    pub epochs: (usize, usize),
    pub window: (usize, usize),
    pub embed_dim: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: (1e-4, 1.0),
            weight_decay: (1e-6, 5e-2),
            gamma: (1e-6, 3.0),
            dropout: (0.3, 0.8),
            p_mask: (0.1, 0.5),
            batch_rate: (0.1, 1.0),
            epochs: (20, 2000),
            window: (3, 10),
            embed_dim: (64, 128),
        }
    }
}

fn log_uniform(range: (f64, f64), rng: &mut StdRng) -> f64 {
    let (lo, hi) = range;
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}

/// Draw one trial configuration from the search space.
pub fn sample_search_config(
    base: &ModelConfig,
    space: &SearchSpace,
    rng: &mut StdRng,
) -> ModelConfig {
    let mut config = base.clone();
    config.learning_rate = log_uniform(space.learning_rate, rng);
    config.weight_decay = log_uniform(space.weight_decay, rng);
    config.gamma = log_uniform(space.gamma, rng);
    config.batch_rate = rng.gen_range(space.batch_rate.0..=space.batch_rate.1);
    config.epochs = rng.gen_range(space.epochs.0..=space.epochs.1);
    config.window = rng.gen_range(space.window.0..=space.window.1);
    config.p_mask = rng.gen_range(space.p_mask.0..=space.p_mask.1);
    match base.variant {
        Variant::ISurvJG => {}
        _ => {
            config.dropout = rng.gen_range(space.dropout.0..=space.dropout.1);
            config.embed_dim = rng.gen_range(space.embed_dim.0..=space.embed_dim.1);
        }
    }
    config
}

/// Event-stratified fold assignment: shuffles each stratum and deals its
/// members round-robin, so event fractions stay close to the global one.
pub fn stratified_folds(events: &[u8], folds: usize, rng: &mut StdRng) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        bail!("need at least two folds");
    }
    if events.len() < folds {
        bail!("cannot split {} instances into {folds} folds", events.len());
    }
    let mut assignment = vec![Vec::new(); folds];
    for target in [1u8, 0u8] {
        let mut stratum: Vec<usize> =
            (0..events.len()).filter(|&i| events[i] == target).collect();
        for i in (1..stratum.len()).rev() {
            let j = rng.gen_range(0..=i);
            stratum.swap(i, j);
        }
        for (pos, idx) in stratum.into_iter().enumerate() {
            assignment[pos % folds].push(idx);
        }
    }
    for (f, fold) in assignment.iter_mut().enumerate() {
        fold.sort_unstable();
        if fold.is_empty() {
            bail!("fold {f} is empty; reduce the fold count");
        }
    }
    let n_events = events.iter().filter(|&&e| e == 1).count();
    if n_events < folds {
        bail!("only {n_events} events for {folds} folds; every training side needs an event");
    }
    Ok(assignment)
}

fn subset(data: &SurvivalDataset, indices: &[usize]) -> Result<SurvivalDataset> {
    let mut features = Array2::zeros((indices.len(), data.dim()));
    let mut times = Vec::with_capacity(indices.len());
    let mut events = Vec::with_capacity(indices.len());
    for (row, &i) in indices.iter().enumerate() {
        features.row_mut(row).assign(&data.features.row(i));
        times.push(data.times[i]);
        events.push(data.events[i]);
    }
    Ok(SurvivalDataset::new(
        features,
        times,
        events,
        Some(data.feature_names.clone()),
    )?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub repeat: usize,
    pub fold: usize,
    pub best_config: ModelConfig,
    pub best_inner_c_index: f64,
    pub report: EvaluationReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub spec: CvSpec,
    pub search_space: SearchSpace,
    pub variant: String,
    pub folds: Vec<FoldReport>,
    pub mean_c_index: f64,
    pub std_c_index: f64,
    pub mean_ibs: f64,
    pub std_ibs: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean inner-fold c-index of one candidate configuration.
fn inner_score(
    train: &SurvivalDataset,
    config: &ModelConfig,
    inner_folds: usize,
    rng: &mut StdRng,
) -> Result<f64> {
    let folds = stratified_folds(&train.events, inner_folds, rng)?;
    let mut total = 0.0;
    for held in 0..inner_folds {
        let test_idx = &folds[held];
        let train_idx: Vec<usize> = (0..inner_folds)
            .filter(|&f| f != held)
            .flat_map(|f| folds[f].iter().copied())
            .collect();
        let inner_train = subset(train, &train_idx)?;
        let inner_test = subset(train, test_idx)?;
        let prepared = prepare(&inner_train, &inner_test)?;
        let model = train_prepared(&prepared, config)?;
        let report = evaluate_model(&model, &prepared.test, "inner", "")?;
        total += report.c_index;
    }
    Ok(total / inner_folds as f64)
}

/// Nested cross-validation: an outer stratified CV measures generalization,
/// an inner CV per outer fold selects hyperparameters by seeded random search.
pub fn nested_cv(
    data: &SurvivalDataset,
    base: &ModelConfig,
    spec: &CvSpec,
    space: &SearchSpace,
) -> Result<CvReport> {
    spec.validate()?;
    let mut master = StdRng::seed_from_u64(spec.seed);
    let mut folds_out = Vec::new();

    for repeat in 0..spec.outer_repeats {
        let fold_seed: u64 = master.gen();
        let mut fold_rng = StdRng::seed_from_u64(fold_seed);
        let assignment = stratified_folds(&data.events, spec.outer_folds, &mut fold_rng)?;
        for fold in 0..spec.outer_folds {
            let test_idx = &assignment[fold];
            let train_idx: Vec<usize> = (0..spec.outer_folds)
                .filter(|&f| f != fold)
                .flat_map(|f| assignment[f].iter().copied())
                .collect();
            let outer_train = subset(data, &train_idx)?;
            let outer_test = subset(data, test_idx)?;

            let mut best: Option<(f64, ModelConfig)> = None;
            let search_seed: u64 = master.gen();
            let mut search_rng = StdRng::seed_from_u64(search_seed);
            for trial in 0..spec.trials {
                let mut candidate = sample_search_config(base, space, &mut search_rng);
                candidate.seed = search_rng.gen();
                let mut inner_rng = StdRng::seed_from_u64(search_rng.gen());
                let score = match inner_score(&outer_train, &candidate, spec.inner_folds, &mut inner_rng)
                {
                    Ok(s) => s,
                    Err(err) => {
                        log::warn!("repeat {repeat} fold {fold} trial {trial}: {err}; scoring 0");
                        0.0
                    }
                };
                if best.as_ref().map_or(true, |(b, _)| score > *b) {
                    best = Some((score, candidate));
                }
            }
            let (best_score, best_config) = best.expect("at least one trial");

            let prepared = prepare(&outer_train, &outer_test)?;
            let model = train_prepared(&prepared, &best_config)?;
            let report = evaluate_model(&model, &prepared.test, "outer", "")?;
            folds_out.push(FoldReport {
                repeat,
                fold,
                best_config,
                best_inner_c_index: best_score,
                report,
            });
        }
    }

    let cs: Vec<f64> = folds_out.iter().map(|f| f.report.c_index).collect();
    let ibss: Vec<f64> = folds_out.iter().map(|f| f.report.ibs).collect();
    let (mean_c, std_c) = mean_std(&cs);
    let (mean_ibs, std_ibs) = mean_std(&ibss);
    Ok(CvReport {
        spec: spec.clone(),
        search_space: space.clone(),
        variant: base.variant.name().to_string(),
        folds: folds_out,
        mean_c_index: mean_c,
        std_c_index: std_c,
        mean_ibs,
        std_ibs,
    })
}
