//! Training loops for the four model variants.
//!
//! Generation-based variants (mean and quantile strategies) resample credal
//! distributions every epoch, take one first-order step on the attention
//! parameters, and finish with a fine-tuning stage that optimizes the
//! per-instance distributions under frozen attention. The joint variants learn
//! attention and distribution logits together. Every run is deterministic
//! given the config seed.

use std::ops::Range;
use std::rc::Rc;

use ndarray::{Array2, Axis};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::attention::{
    dropout_mask, embed_graph, attention_weights_graph, embed, make_mask, raw_attention,
    row_softmax, squared_distances, AttentionParams, EmbeddingParams, MaskMatrix,
};
use crate::error::{Error, Result};
use crate::grid::{sample_credal, ImpreciseLabel, TimeGrid};
use crate::models::config::{ModelConfig, Variant};
use crate::models::loss::window_range;
use crate::tape::{NodeId, Tape, LOG_FLOOR};

/// Trainable state of a fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ModelParams {
    Neural {
        embedding: EmbeddingParams,
        attention: AttentionParams,
    },
    Gaussian {
        log_tau: f64,
    },
}

/// A fitted model: attention state, training keys, the time grid and the
/// final per-instance interval distributions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub grid: TimeGrid,
    pub labels: Vec<ImpreciseLabel>,
    pub train_features: Array2<f64>,
    pub params: ModelParams,
    /// Final precise distributions over intervals, one row per instance.
    pub pi_hat: Array2<f64>,
    /// Mean of the last epoch's credal samples (generation variants) or the
    /// initial uniform-support distributions (joint variants); the starting
    /// point of any fine-tuning pass.
    pub pi_init: Array2<f64>,
    pub loss_trajectory: Vec<f64>,
}

impl TrainedModel {
    pub fn input_dim(&self) -> usize {
        self.train_features.ncols()
    }

    /// Kernel temperature of the Gaussian variant.
    pub fn tau(&self) -> Option<f64> {
        match &self.params {
            ModelParams::Gaussian { log_tau } => Some(log_tau.exp()),
            _ => None,
        }
    }

    /// The fixed training mask, reproducible from the seed (it is the first
    /// draw of the training generator).
    pub fn training_mask(&self) -> Result<MaskMatrix> {
        let mut rng = StdRng::seed_from_u64(self.config.seed);
        make_mask(self.train_features.nrows(), self.config.p_mask, &mut rng)
    }

    /// Masked row-stochastic weight matrix over the training instances in
    /// evaluation mode (no dropout).
    pub fn training_weights(&self) -> Result<Array2<f64>> {
        let mask = self.training_mask()?;
        let mut no_rng = StdRng::seed_from_u64(0);
        match &self.params {
            ModelParams::Neural { embedding, attention } => {
                let e = embed(&self.train_features, embedding, false, &mut no_rng)?;
                let logits = raw_attention(&e, &e, attention)?;
                Ok(row_softmax(&logits, Some(&mask)))
            }
            ModelParams::Gaussian { log_tau } => {
                let d = squared_distances(&self.train_features, &self.train_features);
                let logits = d.mapv(|v| -v / log_tau.exp());
                Ok(row_softmax(&logits, Some(&mask)))
            }
        }
    }
}

/// Adam with optional L2 regularization folded into the gradient.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: usize,
}

impl Adam {
    pub fn new(params: &[Array2<f64>], lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            t: 0,
        }
    }

    /// One update; `decay[i]` marks parameters receiving weight decay.
    pub fn step(
        &mut self,
        params: &mut [Array2<f64>],
        grads: &[Array2<f64>],
        decay: &[bool],
        weight_decay: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let wd = if decay[i] { weight_decay } else { 0.0 };
            ndarray::Zip::from(&mut params[i])
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(&grads[i])
                .for_each(|p, m, v, &g| {
                    let g = g + wd * *p;
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                });
        }
    }
}

/// Uniformly sample ceil(rate * n) distinct row indices.
fn sample_batch(n: usize, rate: f64, rng: &mut StdRng) -> Vec<usize> {
    let size = ((rate * n as f64).ceil() as usize).clamp(1, n);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..size {
        let j = rng.gen_range(i..n);
        indices.swap(i, j);
    }
    let mut batch = indices[..size].to_vec();
    batch.sort_unstable();
    batch
}

fn support_ranges(labels: &[ImpreciseLabel], t: usize) -> Result<Vec<Range<usize>>> {
    labels.iter().map(|l| l.support(t)).collect()
}

fn window_ranges(labels: &[ImpreciseLabel], k: usize, t: usize) -> Vec<Range<usize>> {
    labels.iter().map(|l| window_range(l, k, t)).collect()
}

/// Stack one sampled distribution matrix per generation: entry `m` holds the
/// m-th draw of every instance as an N x T matrix.
fn sample_generation_matrices(
    labels: &[ImpreciseLabel],
    t: usize,
    m: usize,
    rng: &mut StdRng,
) -> Result<Vec<Array2<f64>>> {
    let n = labels.len();
    let mut gens = vec![Array2::zeros((n, t)); m];
    for (i, label) in labels.iter().enumerate() {
        let draws = sample_credal(label, t, m, rng)?;
        for g in 0..m {
            gens[g].row_mut(i).assign(&draws.row(g));
        }
    }
    Ok(gens)
}

/// Initial distribution logits: the log of a starting distribution on each
/// instance's support.
fn logits_from_distributions(
    pi: &Array2<f64>,
    supports: &[Range<usize>],
) -> Array2<f64> {
    let mut logits = Array2::zeros(pi.dim());
    for (i, r) in supports.iter().enumerate() {
        for j in r.clone() {
            logits[[i, j]] = pi[[i, j]].max(LOG_FLOOR).ln();
        }
    }
    logits
}

fn support_softmax_plain(logits: &Array2<f64>, supports: &[Range<usize>]) -> Array2<f64> {
    let mut out = Array2::zeros(logits.dim());
    for (i, r) in supports.iter().enumerate() {
        let max = r.clone().map(|j| logits[[i, j]]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for j in r.clone() {
            let e = (logits[[i, j]] - max).exp();
            out[[i, j]] = e;
            total += e;
        }
        for j in r.clone() {
            out[[i, j]] /= total;
        }
    }
    out
}

/// Tape leaves of the neural attention parameters.
pub struct NeuralLeaves {
    pub weight: NodeId,
    pub bias: NodeId,
    pub w_q: NodeId,
    pub w_k: NodeId,
}

/// Build the embed -> project -> mask -> softmax subgraph for the current
/// parameter values; `drop_mask` is the epoch's sampled dropout scaling.
/// Returns the parameter leaves and the row-stochastic weight matrix node.
pub fn neural_weights_graph(
    tape: &mut Tape,
    x: &Array2<f64>,
    embedding: &EmbeddingParams,
    attention: &AttentionParams,
    mask: &MaskMatrix,
    drop_mask: Option<Array2<f64>>,
) -> (NeuralLeaves, NodeId) {
    let xn = tape.leaf(x.clone());
    let weight = tape.leaf(embedding.weight.clone());
    let bias = tape.leaf(embedding.bias.clone().insert_axis(Axis(0)));
    let w_q = tape.leaf(attention.w_q.clone());
    let w_k = tape.leaf(attention.w_k.clone());
    let embedded = embed_graph(tape, xn, weight, bias, embedding.activation, drop_mask);
    let w = attention_weights_graph(tape, embedded, w_q, w_k, mask);
    (NeuralLeaves { weight, bias, w_q, w_k }, w)
}

/// Per-generation negative log likelihood totals of batch rows mixed through
/// a weight matrix node: one scalar node per sampled generation.
pub fn generation_loss_nodes(
    tape: &mut Tape,
    weights: NodeId,
    gens: &[Array2<f64>],
    batch: Rc<Vec<usize>>,
    batch_windows: Rc<Vec<Range<usize>>>,
) -> Vec<NodeId> {
    let w_batch = tape.select_rows(weights, batch);
    gens.iter()
        .map(|gen| {
            let s = tape.leaf(gen.clone());
            let mixed = tape.matmul(w_batch, s);
            let mass = tape.window_sum(mixed, Rc::clone(&batch_windows));
            let nll = tape.neg_log_floor(mass);
            tape.sum_all(nll)
        })
        .collect()
}

/// Reduce per-generation losses: the mean strategy sums everything, the
/// quantile strategy keeps the ceil(r * M) largest totals.
pub fn reduce_generation_losses(
    tape: &mut Tape,
    per_gen: Vec<NodeId>,
    quantile_fraction: Option<f64>,
) -> NodeId {
    match quantile_fraction {
        None => tape.add_n(per_gen),
        Some(r) => {
            let m = per_gen.len();
            let keep = ((r * m as f64).ceil() as usize).clamp(1, m);
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| {
                tape.scalar(per_gen[b]).partial_cmp(&tape.scalar(per_gen[a])).unwrap()
            });
            tape.add_n(order[..keep].iter().map(|&i| per_gen[i]).collect())
        }
    }
}

/// Joint-strategy loss over a weight matrix node and distribution logits:
/// window likelihood of the mixed batch rows plus the entropy term of the
/// batch's learned distributions. Returns the logits leaf and the loss node.
pub fn joint_loss_nodes(
    tape: &mut Tape,
    weights: NodeId,
    logits: &Array2<f64>,
    supports: Rc<Vec<Range<usize>>>,
    batch: Rc<Vec<usize>>,
    batch_windows: Rc<Vec<Range<usize>>>,
    gamma: f64,
) -> (NodeId, NodeId) {
    let logits_leaf = tape.leaf(logits.clone());
    let pi = tape.support_softmax(logits_leaf, supports);
    let w_batch = tape.select_rows(weights, Rc::clone(&batch));
    let mixed = tape.matmul(w_batch, pi);
    let mass = tape.window_sum(mixed, batch_windows);
    let nll_vec = tape.neg_log_floor(mass);
    let nll = tape.sum_all(nll_vec);
    let pi_batch = tape.select_rows(pi, batch);
    let xlnx = tape.sum_x_ln_x(pi_batch);
    let entropy_term = tape.scale(xlnx, -gamma);
    (logits_leaf, tape.add_n(vec![nll, entropy_term]))
}

/// Masked Gaussian-kernel weight matrix from a trainable log-temperature.
/// Returns the sigma leaf and the weight matrix node.
pub fn gaussian_weights_graph(
    tape: &mut Tape,
    distances: Rc<Array2<f64>>,
    log_tau: f64,
    mask: &MaskMatrix,
) -> (NodeId, NodeId) {
    let sigma = tape.leaf(Array2::from_elem((1, 1), log_tau));
    let scores = tape.neg_exp_scale(sigma, distances);
    let w = tape.masked_softmax(scores, mask.keep());
    (sigma, w)
}

/// Train a model on feature rows aligned with representable labels.
pub fn train(
    features: &Array2<f64>,
    grid: &TimeGrid,
    labels: &[ImpreciseLabel],
    config: &ModelConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    let n = features.nrows();
    if n != labels.len() {
        return Err(Error::Shape(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    if n < 2 {
        return Err(Error::Size("training needs at least two instances".into()));
    }
    let t = grid.num_intervals();
    let supports = support_ranges(labels, t)?;
    let windows = window_ranges(labels, config.window, t);

    let mut rng = StdRng::seed_from_u64(config.seed);
    let mask = make_mask(n, config.p_mask, &mut rng)?;

    match config.variant {
        Variant::ISurvM | Variant::ISurvQ => {
            train_generations(features, grid, labels, config, &supports, &windows, mask, rng)
        }
        Variant::ISurvJ => train_joint(features, grid, labels, config, &supports, &windows, mask, rng),
        Variant::ISurvJG => {
            train_joint_gaussian(features, grid, labels, config, &supports, &windows, mask, rng)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn train_generations(
    features: &Array2<f64>,
    grid: &TimeGrid,
    labels: &[ImpreciseLabel],
    config: &ModelConfig,
    supports: &[Range<usize>],
    windows: &[Range<usize>],
    mask: MaskMatrix,
    mut rng: StdRng,
) -> Result<TrainedModel> {
    let n = features.nrows();
    let t = grid.num_intervals();
    let d0 = features.ncols();
    let mut embedding = EmbeddingParams::init(d0, config.embed_dim, config.dropout, &mut rng);
    let mut attention = AttentionParams::init(config.embed_dim, &mut rng);

    let mut adam = Adam::new(
        &[
            embedding.weight.clone(),
            embedding.bias.clone().insert_axis(Axis(0)),
            attention.w_q.clone(),
            attention.w_k.clone(),
        ],
        config.learning_rate,
    );

    let mut trajectory = Vec::with_capacity(config.epochs);
    let mut last_gens: Option<Vec<Array2<f64>>> = None;

    for epoch in 0..config.epochs {
        let gens = sample_generation_matrices(labels, t, config.generations, &mut rng)?;
        let batch = Rc::new(sample_batch(n, config.batch_rate, &mut rng));
        let batch_windows: Rc<Vec<Range<usize>>> =
            Rc::new(batch.iter().map(|&i| windows[i].clone()).collect());
        let drop = (config.dropout > 0.0)
            .then(|| dropout_mask((n, config.embed_dim), config.dropout, &mut rng));

        let mut tape = Tape::new();
        let (leaves, w) = neural_weights_graph(&mut tape, features, &embedding, &attention, &mask, drop);
        let per_gen = generation_loss_nodes(&mut tape, w, &gens, batch, Rc::clone(&batch_windows));
        let quantile = match config.variant {
            Variant::ISurvM => None,
            Variant::ISurvQ => Some(config.quantile_fraction),
            _ => unreachable!(),
        };
        let loss = reduce_generation_losses(&mut tape, per_gen, quantile);
        let loss_value = tape.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch}: loss {loss_value}")));
        }
        trajectory.push(loss_value);

        let grads = tape.backward(loss);
        let mut params = [
            embedding.weight.clone(),
            embedding.bias.clone().insert_axis(Axis(0)),
            attention.w_q.clone(),
            attention.w_k.clone(),
        ];
        adam.step(
            &mut params,
            &[
                grads[leaves.weight].clone(),
                grads[leaves.bias].clone(),
                grads[leaves.w_q].clone(),
                grads[leaves.w_k].clone(),
            ],
            &[true, true, true, true],
            config.weight_decay,
        );
        embedding.weight = params[0].clone();
        embedding.bias = params[1].clone().remove_axis(Axis(0));
        attention.w_q = params[2].clone();
        attention.w_k = params[3].clone();

        last_gens = Some(gens);
    }

    // with zero epochs the initial distributions still come from one draw
    let gens = match last_gens {
        Some(g) => g,
        None => sample_generation_matrices(labels, t, config.generations, &mut rng)?,
    };
    let mut pi_init = Array2::zeros((n, t));
    for gen in &gens {
        pi_init += gen;
    }
    pi_init /= gens.len() as f64;

    let params = ModelParams::Neural { embedding, attention };
    let mut model = TrainedModel {
        config: config.clone(),
        grid: grid.clone(),
        labels: labels.to_vec(),
        train_features: features.clone(),
        params,
        pi_hat: pi_init.clone(),
        pi_init,
        loss_trajectory: trajectory,
    };

    let w_eval = model.training_weights()?;
    let (pi_hat, ft_losses) = fine_tune_distributions(
        &w_eval,
        &model.pi_init,
        supports,
        windows,
        config.gamma,
        config.fine_tune_steps(),
        config.learning_rate,
    )?;
    model.pi_hat = pi_hat;
    model.loss_trajectory.extend(ft_losses);
    Ok(model)
}

#[allow(clippy::too_many_arguments)]
fn train_joint(
    features: &Array2<f64>,
    grid: &TimeGrid,
    labels: &[ImpreciseLabel],
    config: &ModelConfig,
    supports: &[Range<usize>],
    windows: &[Range<usize>],
    mask: MaskMatrix,
    mut rng: StdRng,
) -> Result<TrainedModel> {
    let n = features.nrows();
    let t = grid.num_intervals();
    let d0 = features.ncols();
    let mut embedding = EmbeddingParams::init(d0, config.embed_dim, config.dropout, &mut rng);
    let mut attention = AttentionParams::init(config.embed_dim, &mut rng);
    let mut logits = Array2::zeros((n, t));
    let supports_rc = Rc::new(supports.to_vec());

    let mut adam = Adam::new(
        &[
            embedding.weight.clone(),
            embedding.bias.clone().insert_axis(Axis(0)),
            attention.w_q.clone(),
            attention.w_k.clone(),
            logits.clone(),
        ],
        config.learning_rate,
    );

    let mut trajectory = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let batch = Rc::new(sample_batch(n, config.batch_rate, &mut rng));
        let batch_windows: Rc<Vec<Range<usize>>> =
            Rc::new(batch.iter().map(|&i| windows[i].clone()).collect());
        let drop = (config.dropout > 0.0)
            .then(|| dropout_mask((n, config.embed_dim), config.dropout, &mut rng));

        let mut tape = Tape::new();
        let (leaves, w) = neural_weights_graph(&mut tape, features, &embedding, &attention, &mask, drop);
        let (logits_leaf, loss) = joint_loss_nodes(
            &mut tape,
            w,
            &logits,
            Rc::clone(&supports_rc),
            batch,
            batch_windows,
            config.gamma,
        );

        let loss_value = tape.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch}: loss {loss_value}")));
        }
        trajectory.push(loss_value);

        let grads = tape.backward(loss);
        let mut params = [
            embedding.weight.clone(),
            embedding.bias.clone().insert_axis(Axis(0)),
            attention.w_q.clone(),
            attention.w_k.clone(),
            logits.clone(),
        ];
        adam.step(
            &mut params,
            &[
                grads[leaves.weight].clone(),
                grads[leaves.bias].clone(),
                grads[leaves.w_q].clone(),
                grads[leaves.w_k].clone(),
                grads[logits_leaf].clone(),
            ],
            &[true, true, true, true, false],
            config.weight_decay,
        );
        embedding.weight = params[0].clone();
        embedding.bias = params[1].clone().remove_axis(Axis(0));
        attention.w_q = params[2].clone();
        attention.w_k = params[3].clone();
        logits = params[4].clone();
    }

    let pi_hat = support_softmax_plain(&logits, supports);
    let pi_init = support_softmax_plain(&Array2::zeros((n, t)), supports);
    Ok(TrainedModel {
        config: config.clone(),
        grid: grid.clone(),
        labels: labels.to_vec(),
        train_features: features.clone(),
        params: ModelParams::Neural { embedding, attention },
        pi_hat,
        pi_init,
        loss_trajectory: trajectory,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_joint_gaussian(
    features: &Array2<f64>,
    grid: &TimeGrid,
    labels: &[ImpreciseLabel],
    config: &ModelConfig,
    supports: &[Range<usize>],
    windows: &[Range<usize>],
    mask: MaskMatrix,
    mut rng: StdRng,
) -> Result<TrainedModel> {
    let n = features.nrows();
    let t = grid.num_intervals();
    let distances = Rc::new(squared_distances(features, features));
    let mut log_tau = Array2::from_elem((1, 1), config.tau_init.ln());
    let mut logits = Array2::zeros((n, t));
    let supports_rc = Rc::new(supports.to_vec());

    let mut adam = Adam::new(&[log_tau.clone(), logits.clone()], config.learning_rate);
    let mut trajectory = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let batch = Rc::new(sample_batch(n, config.batch_rate, &mut rng));
        let batch_windows: Rc<Vec<Range<usize>>> =
            Rc::new(batch.iter().map(|&i| windows[i].clone()).collect());

        let mut tape = Tape::new();
        let (sigma, w) = gaussian_weights_graph(&mut tape, Rc::clone(&distances), log_tau[[0, 0]], &mask);
        let (logits_leaf, loss) = joint_loss_nodes(
            &mut tape,
            w,
            &logits,
            Rc::clone(&supports_rc),
            batch,
            batch_windows,
            config.gamma,
        );

        let loss_value = tape.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch}: loss {loss_value}")));
        }
        trajectory.push(loss_value);

        let grads = tape.backward(loss);
        let mut params = [log_tau.clone(), logits.clone()];
        adam.step(
            &mut params,
            &[grads[sigma].clone(), grads[logits_leaf].clone()],
            &[false, false],
            config.weight_decay,
        );
        log_tau = params[0].clone();
        logits = params[1].clone();
    }

    let pi_hat = support_softmax_plain(&logits, supports);
    let pi_init = support_softmax_plain(&Array2::zeros((n, t)), supports);
    Ok(TrainedModel {
        config: config.clone(),
        grid: grid.clone(),
        labels: labels.to_vec(),
        train_features: features.clone(),
        params: ModelParams::Gaussian { log_tau: log_tau[[0, 0]] },
        pi_hat,
        pi_init,
        loss_trajectory: trajectory,
    })
}

/// Optimize per-instance distributions under a frozen weight matrix; the
/// best iterate (including the initialization) is returned, so the final loss
/// never exceeds the starting loss.
fn fine_tune_distributions(
    weights: &Array2<f64>,
    pi_start: &Array2<f64>,
    supports: &[Range<usize>],
    windows: &[Range<usize>],
    gamma: f64,
    steps: usize,
    lr: f64,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let supports_rc = Rc::new(supports.to_vec());
    let windows_rc = Rc::new(windows.to_vec());
    let mut logits = logits_from_distributions(pi_start, supports);
    let mut adam = Adam::new(&[logits.clone()], lr);

    let mut best_logits = logits.clone();
    let mut best_loss = f64::INFINITY;
    let mut losses = Vec::with_capacity(steps + 1);

    for step in 0..=steps {
        let mut tape = Tape::new();
        let w = tape.leaf(weights.clone());
        let logits_leaf = tape.leaf(logits.clone());
        let pi = tape.support_softmax(logits_leaf, Rc::clone(&supports_rc));
        let mixed = tape.matmul(w, pi);
        let mass = tape.window_sum(mixed, Rc::clone(&windows_rc));
        let nll_vec = tape.neg_log_floor(mass);
        let nll = tape.sum_all(nll_vec);
        let xlnx = tape.sum_x_ln_x(pi);
        let entropy_term = tape.scale(xlnx, -gamma);
        let loss = tape.add_n(vec![nll, entropy_term]);

        let loss_value = tape.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!("fine-tune step {step}: loss {loss_value}")));
        }
        losses.push(loss_value);
        if loss_value < best_loss {
            best_loss = loss_value;
            best_logits = logits.clone();
        }
        if step == steps {
            break;
        }

        let grads = tape.backward(loss);
        let mut params = [logits.clone()];
        adam.step(&mut params, &[grads[logits_leaf].clone()], &[false], 0.0);
        logits = params[0].clone();
    }

    Ok((support_softmax_plain(&best_logits, supports), losses))
}

/// Re-run the distribution fine-tuning stage of a generation-trained model
/// with a new entropy coefficient and window.
pub fn fine_tune(model: &TrainedModel, gamma: f64, k: usize) -> Result<TrainedModel> {
    if !model.config.variant.uses_generations() {
        return Err(Error::Validation(
            "fine_tune applies to generation-trained models (mean/quantile strategies)".into(),
        ));
    }
    let t = model.grid.num_intervals();
    let supports = support_ranges(&model.labels, t)?;
    let windows = window_ranges(&model.labels, k, t);
    let w_eval = model.training_weights()?;
    let (pi_hat, losses) = fine_tune_distributions(
        &w_eval,
        &model.pi_init,
        &supports,
        &windows,
        gamma,
        model.config.fine_tune_steps(),
        model.config.learning_rate,
    )?;
    let mut out = model.clone();
    out.pi_hat = pi_hat;
    out.loss_trajectory.extend(losses);
    Ok(out)
}

/// Build grid and labels from a dataset, drop unrepresentable instances, and
/// train. Returns the model together with the kept row indices.
pub fn fit(
    dataset: &crate::data::SurvivalDataset,
    config: &ModelConfig,
) -> Result<(TrainedModel, Vec<usize>)> {
    let grid = TimeGrid::from_times(&dataset.times)?;
    let (labels, dropped) = crate::grid::make_labels(&grid, &dataset.times, &dataset.events)?;
    let kept: Vec<usize> = (0..dataset.len()).filter(|i| !dropped.contains(i)).collect();
    let features = if dropped.is_empty() {
        dataset.features.clone()
    } else {
        let mut sub = Array2::zeros((kept.len(), dataset.dim()));
        for (row, &i) in kept.iter().enumerate() {
            sub.row_mut(row).assign(&dataset.features.row(i));
        }
        sub
    };
    let model = train(&features, &grid, &labels, config)?;
    Ok((model, kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::predict::predict_distributions;

    fn toy_problem(n: usize, seed: u64) -> (Array2<f64>, TimeGrid, Vec<ImpreciseLabel>) {
        let mut rng = StdRng::seed_from_u64(seed);
        let features = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0));
        let times: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        let events: Vec<u8> = (0..n).map(|i| if i % 4 == 3 && i + 1 < n { 0 } else { 1 }).collect();
        let grid = TimeGrid::from_times(&times).unwrap();
        let (labels, dropped) = crate::grid::make_labels(&grid, &times, &events).unwrap();
        assert!(dropped.is_empty());
        (features, grid, labels)
    }

    fn small_config(variant: Variant) -> ModelConfig {
        ModelConfig {
            epochs: 15,
            generations: 4,
            embed_dim: 8,
            window: 1,
            fine_tune_epochs: Some(15),
            ..ModelConfig::new(variant)
        }
    }

    #[test]
    fn zero_epochs_still_yields_valid_distributions() {
        let (features, grid, labels) = toy_problem(10, 1);
        for variant in [Variant::ISurvM, Variant::ISurvJ, Variant::ISurvJG] {
            let config = ModelConfig {
                epochs: 0,
                fine_tune_epochs: Some(0),
                generations: 3,
                embed_dim: 6,
                ..ModelConfig::new(variant)
            };
            let model = train(&features, &grid, &labels, &config).unwrap();
            for (i, row) in model.pi_hat.rows().into_iter().enumerate() {
                assert!((row.sum() - 1.0).abs() < 1e-9, "row {i} sums to {}", row.sum());
                assert!(row.iter().all(|&v| v >= 0.0));
            }
            let preds = predict_distributions(&model, &features).unwrap();
            for row in preds.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_reproduces_the_run() {
        let (features, grid, labels) = toy_problem(12, 2);
        for variant in [Variant::ISurvM, Variant::ISurvQ, Variant::ISurvJ, Variant::ISurvJG] {
            let config = small_config(variant);
            let a = train(&features, &grid, &labels, &config).unwrap();
            let b = train(&features, &grid, &labels, &config).unwrap();
            assert_eq!(a.loss_trajectory, b.loss_trajectory, "{variant:?}");
            assert_eq!(a.pi_hat, b.pi_hat);
            match (&a.params, &b.params) {
                (
                    ModelParams::Neural { embedding: ea, attention: aa },
                    ModelParams::Neural { embedding: eb, attention: ab },
                ) => {
                    assert_eq!(ea.weight, eb.weight);
                    assert_eq!(aa.w_q, ab.w_q);
                }
                (ModelParams::Gaussian { log_tau: ta }, ModelParams::Gaussian { log_tau: tb }) => {
                    assert_eq!(ta, tb);
                }
                _ => panic!("parameter kinds differ"),
            }
        }
    }

    #[test]
    fn joint_training_reduces_the_loss() {
        let (features, grid, labels) = toy_problem(30, 3);
        let config = ModelConfig {
            epochs: 60,
            embed_dim: 8,
            batch_rate: 1.0,
            dropout: 0.0,
            window: 1,
            ..ModelConfig::new(Variant::ISurvJ)
        };
        let model = train(&features, &grid, &labels, &config).unwrap();
        let first = model.loss_trajectory[0];
        let last = *model.loss_trajectory.last().unwrap();
        assert!(
            last < first,
            "loss did not descend: first {first}, last {last}"
        );
    }

    #[test]
    fn joint_training_descends_on_a_linear_synthetic_with_defaults() {
        use crate::data::synthetic::{make_dataset, SyntheticKind, SyntheticSpec};
        use crate::models::loss::loss_isurvj;

        let spec = SyntheticSpec {
            n_train: 30,
            n_test: 2,
            seed: 0,
            ..SyntheticSpec::new(SyntheticKind::Linear)
        };
        let (raw, _) = make_dataset(&spec).unwrap();
        let grid = TimeGrid::from_times(&raw.times).unwrap();
        let (labels, _) = crate::grid::make_labels(&grid, &raw.times, &raw.events).unwrap();

        // full training objective in evaluation mode (all rows, no dropout)
        let full_loss = |model: &TrainedModel| {
            let w = model.training_weights().unwrap();
            let mixed = w.dot(&model.pi_hat);
            loss_isurvj(&mixed, &model.labels, &model.pi_hat, model.config.gamma, model.config.window)
        };

        let config = ModelConfig::new(Variant::ISurvJ);
        let initial = train(&raw.features, &grid, &labels, &ModelConfig { epochs: 0, ..config.clone() }).unwrap();
        let trained = train(&raw.features, &grid, &labels, &config).unwrap();
        let before = full_loss(&initial);
        let after = full_loss(&trained);
        assert!(after < before, "defaults did not descend: {before} -> {after}");
    }

    #[test]
    fn fine_tuning_never_worsens_the_loss() {
        let (features, grid, labels) = toy_problem(14, 4);
        let config = small_config(Variant::ISurvM);
        let model = train(&features, &grid, &labels, &config).unwrap();
        // the fine-tune trajectory is appended after the epoch losses
        let ft = &model.loss_trajectory[config.epochs..];
        assert!(!ft.is_empty());
        let init = ft[0];
        let t = model.grid.num_intervals();
        let supports = support_ranges(&model.labels, t).unwrap();
        let windows = window_ranges(&model.labels, config.window, t);
        let w = model.training_weights().unwrap();
        let final_loss = {
            let mixed = w.dot(&model.pi_hat);
            let mut total = 0.0;
            for (i, win) in windows.iter().enumerate() {
                let mass: f64 = mixed.row(i).slice(ndarray::s![win.clone()]).sum();
                total -= mass.max(LOG_FLOOR).ln();
                let xlnx: f64 = model
                    .pi_hat
                    .row(i)
                    .iter()
                    .map(|&x| x * x.max(LOG_FLOOR).ln())
                    .sum();
                total -= config.gamma * xlnx;
            }
            total
        };
        let _ = supports;
        assert!(final_loss <= init + 1e-9, "fine-tune worsened: {init} -> {final_loss}");
    }

    #[test]
    fn uncensored_distributions_stay_degenerate() {
        let (features, grid, labels) = toy_problem(10, 5);
        let config = small_config(Variant::ISurvM);
        let model = train(&features, &grid, &labels, &config).unwrap();
        for (i, label) in model.labels.iter().enumerate() {
            if !label.censored {
                assert!((model.pi_hat[[i, label.interval - 1]] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pi_hat_respects_label_support() {
        let (features, grid, labels) = toy_problem(12, 6);
        for variant in [Variant::ISurvQ, Variant::ISurvJ, Variant::ISurvJG] {
            let config = small_config(variant);
            let model = train(&features, &grid, &labels, &config).unwrap();
            let t = model.grid.num_intervals();
            for (i, label) in model.labels.iter().enumerate() {
                let support = label.support(t).unwrap();
                for j in 0..t {
                    if !support.contains(&j) {
                        assert_eq!(model.pi_hat[[i, j]], 0.0, "mass outside support at ({i}, {j})");
                    }
                }
            }
        }
    }

    #[test]
    fn quantile_with_full_fraction_matches_mean_strategy() {
        let (features, grid, labels) = toy_problem(10, 7);
        let base = ModelConfig {
            epochs: 10,
            generations: 3,
            embed_dim: 6,
            fine_tune_epochs: Some(5),
            ..ModelConfig::new(Variant::ISurvM)
        };
        let q = ModelConfig {
            variant: Variant::ISurvQ,
            quantile_fraction: 1.0,
            ..base.clone()
        };
        let a = train(&features, &grid, &labels, &base).unwrap();
        let b = train(&features, &grid, &labels, &q).unwrap();
        for (x, y) in a.loss_trajectory.iter().zip(b.loss_trajectory.iter()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn fine_tune_reruns_the_distribution_stage() {
        let (features, grid, labels) = toy_problem(12, 9);
        let config = small_config(Variant::ISurvM);
        let model = train(&features, &grid, &labels, &config).unwrap();
        // initialization is the mean of the last epoch's samples; degenerate
        // rows stay degenerate
        for (i, label) in model.labels.iter().enumerate() {
            if !label.censored {
                assert_eq!(model.pi_init[[i, label.interval - 1]], 1.0);
            }
        }
        let retuned = fine_tune(&model, 0.5, 2).unwrap();
        let t = retuned.grid.num_intervals();
        for (i, label) in retuned.labels.iter().enumerate() {
            let row = retuned.pi_hat.row(i);
            assert!((row.sum() - 1.0).abs() < 1e-9);
            let support = label.support(t).unwrap();
            for j in 0..t {
                if !support.contains(&j) {
                    assert_eq!(row[j], 0.0);
                }
            }
        }
        // joint variants have no generation stage to re-run
        let joint = train(&features, &grid, &labels, &small_config(Variant::ISurvJ)).unwrap();
        assert!(fine_tune(&joint, 0.1, 2).is_err());
    }

    #[test]
    fn mismatched_labels_are_rejected() {
        let (features, grid, labels) = toy_problem(8, 8);
        let config = small_config(Variant::ISurvJ);
        assert!(train(&features, &grid, &labels[..6], &config).is_err());
    }
}
