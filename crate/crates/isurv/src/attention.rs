//! Embedding, masked dot-product attention and Gaussian-kernel attention.
//!
//! The training-time weight matrix W is a row softmax of masked similarity
//! logits; at inference the queries are embedded test points, the keys are
//! embedded training points, and no mask is applied.

use std::rc::Rc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};

/// Elementwise activation of the embedding layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// Parameters of the embedding map: a single linear layer with an elementwise
/// activation and dropout on the output (training only).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub dropout: f64,
    pub activation: Activation,
}

impl EmbeddingParams {
    /// Gaussian init with standard deviation 1/sqrt(d_in), zero bias.
    pub fn init<R: Rng>(d_in: usize, d_out: usize, dropout: f64, rng: &mut R) -> Self {
        let scale = 1.0 / (d_in as f64).sqrt();
        let weight = Array2::from_shape_fn((d_in, d_out), |_| {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        });
        EmbeddingParams {
            weight,
            bias: Array1::zeros(d_out),
            dropout,
            activation: Activation::Tanh,
        }
    }

    pub fn identity(d: usize) -> Self {
        EmbeddingParams {
            weight: Array2::eye(d),
            bias: Array1::zeros(d),
            dropout: 0.0,
            activation: Activation::Identity,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// Query/key projection matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
}

impl AttentionParams {
    /// Gaussian init with standard deviation 1/sqrt(d).
    pub fn init<R: Rng>(d: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (d as f64).sqrt();
        let mut draw = |_: ()| -> f64 {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        };
        AttentionParams {
            w_q: Array2::from_shape_fn((d, d), |_| draw(())),
            w_k: Array2::from_shape_fn((d, d), |_| draw(())),
        }
    }
}

/// Fixed binary attention mask; `keep[i][j]` is true when the pair is allowed
/// to interact. The diagonal is always masked so instances cannot attend to
/// themselves during training.
#[derive(Debug, Clone)]
pub struct MaskMatrix {
    keep: Rc<Array2<bool>>,
}

impl MaskMatrix {
    pub fn keep(&self) -> Rc<Array2<bool>> {
        Rc::clone(&self.keep)
    }

    pub fn size(&self) -> usize {
        self.keep.nrows()
    }

    pub fn is_kept(&self, i: usize, j: usize) -> bool {
        self.keep[[i, j]]
    }
}

/// Draw the training mask: an off-diagonal entry survives when its uniform
/// draw exceeds `p_mask`. Computed once before the epoch loop.
pub fn make_mask<R: Rng>(n: usize, p_mask: f64, rng: &mut R) -> Result<MaskMatrix> {
    if n < 2 {
        return Err(Error::Size("mask needs at least two instances".into()));
    }
    if !(0.0..=1.0).contains(&p_mask) {
        return Err(Error::Domain(format!("p_mask {p_mask} outside [0, 1]")));
    }
    let mut keep = Array2::from_elem((n, n), false);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let u: f64 = rng.gen_range(0.0..1.0);
            keep[[i, j]] = u > p_mask;
        }
    }
    Ok(MaskMatrix { keep: Rc::new(keep) })
}

/// Apply the embedding map. In training mode each output activation is zeroed
/// independently with the configured dropout probability and the survivors are
/// rescaled by 1/(1-p).
pub fn embed<R: Rng>(
    x: &Array2<f64>,
    params: &EmbeddingParams,
    training: bool,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if x.ncols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} features, embedding expects {}",
            x.ncols(),
            params.input_dim()
        )));
    }
    let mut out = x.dot(&params.weight);
    out += &params.bias.view().insert_axis(ndarray::Axis(0));
    out.mapv_inplace(|v| params.activation.apply(v));
    if training && params.dropout > 0.0 {
        out *= &dropout_mask(out.dim(), params.dropout, rng);
    }
    Ok(out)
}

/// Dropout scaling matrix with entries 0 (dropped) or 1/(1-p); at p = 1 the
/// whole matrix is zero.
pub fn dropout_mask<R: Rng>(dim: (usize, usize), p: f64, rng: &mut R) -> Array2<f64> {
    if p >= 1.0 {
        return Array2::zeros(dim);
    }
    if p <= 0.0 {
        return Array2::ones(dim);
    }
    let scale = 1.0 / (1.0 - p);
    Array2::from_shape_fn(dim, |_| {
        let u: f64 = rng.gen_range(0.0..1.0);
        if u < p {
            0.0
        } else {
            scale
        }
    })
}

/// Scaled dot-product similarity logits A = (Q W_Q)(K W_K)^T / sqrt(d).
pub fn raw_attention(
    queries: &Array2<f64>,
    keys: &Array2<f64>,
    params: &AttentionParams,
) -> Result<Array2<f64>> {
    let d = queries.ncols();
    if d == 0 {
        return Err(Error::Domain("zero embedding dimension".into()));
    }
    if keys.ncols() != d {
        return Err(Error::Shape(format!(
            "queries have dim {d}, keys have dim {}",
            keys.ncols()
        )));
    }
    let q = queries.dot(&params.w_q);
    let k = keys.dot(&params.w_k);
    Ok(q.dot(&k.t()) / (d as f64).sqrt())
}

/// Row softmax with optional masking; masked entries get exactly zero weight.
/// A fully masked row falls back to uniform off-diagonal weights (logged).
pub fn row_softmax(logits: &Array2<f64>, mask: Option<&MaskMatrix>) -> Array2<f64> {
    let (n, m) = logits.dim();
    let mut out = Array2::zeros((n, m));
    let mut fallbacks = 0usize;
    for i in 0..n {
        let kept: Vec<usize> = (0..m)
            .filter(|&j| mask.map_or(true, |mk| mk.is_kept(i, j)))
            .collect();
        if kept.is_empty() {
            fallbacks += 1;
            let w = 1.0 / (m as f64 - 1.0);
            for j in 0..m {
                if j != i {
                    out[[i, j]] = w;
                }
            }
            continue;
        }
        let max = kept.iter().map(|&j| logits[[i, j]]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for &j in &kept {
            let e = (logits[[i, j]] - max).exp();
            out[[i, j]] = e;
            total += e;
        }
        for &j in &kept {
            out[[i, j]] /= total;
        }
    }
    if fallbacks > 0 {
        log::warn!("row softmax: {fallbacks} fully masked row(s); using uniform off-diagonal weights");
    }
    out
}

/// Pairwise squared Euclidean distances between query and key rows.
pub fn squared_distances(queries: &Array2<f64>, keys: &Array2<f64>) -> Array2<f64> {
    let (n, m) = (queries.nrows(), keys.nrows());
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for c in 0..queries.ncols() {
                let d = queries[[i, c]] - keys[[j, c]];
                s += d * d;
            }
            out[[i, j]] = s;
        }
    }
    out
}

/// Gaussian-kernel attention weights from logits -||q - k||^2 / tau.
pub fn gaussian_attention(
    queries: &Array2<f64>,
    keys: &Array2<f64>,
    tau: f64,
    mask: Option<&MaskMatrix>,
) -> Result<Array2<f64>> {
    if tau <= 0.0 {
        return Err(Error::Domain(format!("temperature {tau} must be positive")));
    }
    if queries.ncols() != keys.ncols() {
        return Err(Error::Shape(format!(
            "queries have dim {}, keys have dim {}",
            queries.ncols(),
            keys.ncols()
        )));
    }
    let logits = squared_distances(queries, keys).mapv(|d| -d / tau);
    Ok(row_softmax(&logits, mask))
}

/// Tape subgraph for the embedding map; `drop_mask` carries the sampled
/// dropout scaling when training.
pub fn embed_graph(
    tape: &mut Tape,
    x: NodeId,
    weight: NodeId,
    bias: NodeId,
    activation: Activation,
    drop_mask: Option<Array2<f64>>,
) -> NodeId {
    let lin = tape.matmul(x, weight);
    let shifted = tape.add_row(lin, bias);
    let activated = match activation {
        Activation::Tanh => tape.tanh(shifted),
        Activation::Identity => shifted,
    };
    match drop_mask {
        Some(m) => tape.mul_const(activated, m),
        None => activated,
    }
}

/// Tape subgraph producing the masked row-stochastic weight matrix from an
/// embedded batch: A = (E W_Q)(E W_K)^T / sqrt(d), then masked row softmax.
pub fn attention_weights_graph(
    tape: &mut Tape,
    embedded: NodeId,
    w_q: NodeId,
    w_k: NodeId,
    mask: &MaskMatrix,
) -> NodeId {
    let d = tape.value(w_q).ncols();
    let q = tape.matmul(embedded, w_q);
    let k = tape.matmul(embedded, w_k);
    let scores = tape.matmul_tb(q, k);
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt());
    tape.masked_softmax(scaled, mask.keep())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::finite_diff_max_rel_err;
    use ndarray::array;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn identity_embedding_passes_input_through() {
        let mut rng = StdRng::seed_from_u64(0);
        let params = EmbeddingParams::identity(3);
        let x = array![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]];
        let e = embed(&x, &params, false, &mut rng).unwrap();
        assert_eq!(e, x);
    }

    #[test]
    fn dropout_zero_matches_inference_and_one_zeroes_everything() {
        let mut rng = StdRng::seed_from_u64(0);
        let mut params = EmbeddingParams::init(3, 4, 0.0, &mut rng);
        let x = array![[0.2, -0.4, 0.9], [1.0, 0.0, -1.0]];
        let train = embed(&x, &params, true, &mut rng).unwrap();
        let infer = embed(&x, &params, false, &mut rng).unwrap();
        assert_eq!(train, infer);

        params.dropout = 1.0;
        let zeroed = embed(&x, &params, true, &mut rng).unwrap();
        assert!(zeroed.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn raw_attention_matches_hand_product() {
        let params = AttentionParams { w_q: array![[1.0]], w_k: array![[1.0]] };
        let q = array![[1.0], [2.0]];
        let a = raw_attention(&q, &q, &params).unwrap();
        assert_eq!(a, array![[1.0, 2.0], [2.0, 4.0]]);

        let zeroed = AttentionParams { w_q: array![[0.0]], w_k: array![[1.0]] };
        let a0 = raw_attention(&q, &q, &zeroed).unwrap();
        assert!(a0.iter().all(|&v| v == 0.0));

        let doubled = AttentionParams { w_q: array![[2.0]], w_k: array![[1.0]] };
        let a2 = raw_attention(&q, &q, &doubled).unwrap();
        assert_eq!(a2, &a * 2.0);
    }

    #[test]
    fn mask_extremes_and_determinism() {
        let mut rng = StdRng::seed_from_u64(11);
        let none_masked = make_mask(4, 0.0, &mut rng).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(none_masked.is_kept(i, j), i != j);
            }
        }
        let all_masked = make_mask(4, 1.0, &mut rng).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!(!all_masked.is_kept(i, j));
            }
        }
        let a = make_mask(6, 0.5, &mut StdRng::seed_from_u64(42)).unwrap();
        let b = make_mask(6, 0.5, &mut StdRng::seed_from_u64(42)).unwrap();
        assert_eq!(*a.keep(), *b.keep());
    }

    #[test]
    fn row_softmax_examples() {
        let w = row_softmax(&array![[0.0, 0.0]], None);
        assert_eq!(w, array![[0.5, 0.5]]);

        // d = 1 hand example with the diagonal masked: one survivor per row
        let mut rng = StdRng::seed_from_u64(1);
        let mask = make_mask(2, 0.0, &mut rng).unwrap();
        let a = array![[1.0, 2.0], [2.0, 4.0]];
        let w = row_softmax(&a, Some(&mask));
        assert_eq!(w, array![[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = array![[0.3, -1.2, 2.0], [0.0, 0.5, -0.5]];
        let shifted = &a + 7.5;
        let w1 = row_softmax(&a, None);
        let w2 = row_softmax(&shifted, None);
        for (x, y) in w1.iter().zip(w2.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_attention_symmetry_and_concentration() {
        // two equidistant keys share the weight
        let q = array![[0.0, 0.0]];
        let k = array![[1.0, 0.0], [-1.0, 0.0]];
        let w = gaussian_attention(&q, &k, 1.0, None).unwrap();
        assert!((w[[0, 0]] - 0.5).abs() < 1e-12);

        // matching key with a tiny temperature takes nearly all the weight
        let k = array![[0.0, 0.0], [1.0, 0.0]];
        let w = gaussian_attention(&q, &k, 0.01, None).unwrap();
        assert!(w[[0, 0]] > 0.999);

        // very large temperature flattens the weights
        let w = gaussian_attention(&q, &k, 1e9, None).unwrap();
        assert!((w[[0, 0]] - 0.5).abs() < 1e-6);

        assert!(gaussian_attention(&q, &k, 0.0, None).is_err());
    }

    #[test]
    fn weight_matrix_rows_are_stochastic() {
        let mut rng = StdRng::seed_from_u64(5);
        let x = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-1.0..1.0));
        let emb = EmbeddingParams::init(3, 4, 0.0, &mut rng);
        let att = AttentionParams::init(4, &mut rng);
        let mask = make_mask(6, 0.4, &mut rng).unwrap();
        let e = embed(&x, &emb, false, &mut rng).unwrap();
        let a = raw_attention(&e, &e, &att).unwrap();
        let w = row_softmax(&a, Some(&mask));
        for (i, row) in w.rows().into_iter().enumerate() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&v| v >= 0.0));
            for j in 0..6 {
                if !mask.is_kept(i, j) {
                    assert_eq!(w[[i, j]], 0.0);
                }
            }
        }
    }

    #[test]
    fn attention_graph_gradients_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(21);
        let n = 6;
        let (d0, d) = (3, 4);
        let x = Array2::from_shape_fn((n, d0), |_| rng.gen_range(-1.0..1.0));
        let probe = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
        let mask = make_mask(n, 0.3, &mut rng).unwrap();
        let emb = EmbeddingParams::init(d0, d, 0.0, &mut rng);
        let att = AttentionParams::init(d, &mut rng);

        let params = vec![
            emb.weight.clone(),
            emb.bias.clone().insert_axis(ndarray::Axis(0)),
            att.w_q.clone(),
            att.w_k.clone(),
        ];
        let err = finite_diff_max_rel_err(&params, move |t, ids| {
            let xn = t.leaf(x.clone());
            let e = embed_graph(t, xn, ids[0], ids[1], Activation::Tanh, None);
            let w = attention_weights_graph(t, e, ids[2], ids[3], &mask);
            let probed = t.mul_const(w, probe.clone());
            t.sum_all(probed)
        });
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn graph_forward_matches_plain_ops() {
        let mut rng = StdRng::seed_from_u64(33);
        let n = 5;
        let x = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0));
        let emb = EmbeddingParams::init(3, 4, 0.0, &mut rng);
        let att = AttentionParams::init(4, &mut rng);
        let mask = make_mask(n, 0.5, &mut rng).unwrap();

        let e = embed(&x, &emb, false, &mut rng).unwrap();
        let a = raw_attention(&e, &e, &att).unwrap();
        let plain = row_softmax(&a, Some(&mask));

        let mut tape = Tape::new();
        let xn = tape.leaf(x.clone());
        let wn = tape.leaf(emb.weight.clone());
        let bn = tape.leaf(emb.bias.clone().insert_axis(ndarray::Axis(0)));
        let qn = tape.leaf(att.w_q.clone());
        let kn = tape.leaf(att.w_k.clone());
        let en = embed_graph(&mut tape, xn, wn, bn, Activation::Tanh, None);
        let wmat = attention_weights_graph(&mut tape, en, qn, kn, &mask);
        for (p, t) in plain.iter().zip(tape.value(wmat).iter()) {
            assert!((p - t).abs() < 1e-12);
        }
    }
}
