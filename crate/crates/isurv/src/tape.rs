//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! The training graphs here are shallow and fixed (embed -> project -> mask ->
//! softmax -> mix -> loss), so the tape supports exactly the operations those
//! graphs need. Values are eagerly computed on construction; `backward` walks
//! the tape once and returns a gradient per node. Scalars are 1x1 matrices.

use std::ops::Range;
use std::rc::Rc;

use ndarray::{Array2, Axis};

/// Floor applied inside logarithms so zero-probability events stay finite.
pub const LOG_FLOOR: f64 = 1e-12;

pub type NodeId = usize;

enum Op {
    Leaf,
    /// a . b
    MatMul(NodeId, NodeId),
    /// a . b^T
    MatMulTB(NodeId, NodeId),
    /// matrix + broadcast 1 x d row
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    /// elementwise product with a constant matrix (dropout masks)
    MulConst(NodeId, Array2<f64>),
    /// row softmax over kept entries; fully-masked rows fall back to constant
    /// uniform weights over the off-diagonal and receive no gradient
    MaskedSoftmax {
        input: NodeId,
        keep: Rc<Array2<bool>>,
        fallback_rows: Vec<usize>,
    },
    /// per-row softmax restricted to a contiguous index range, zero elsewhere
    SupportSoftmax(NodeId, Rc<Vec<Range<usize>>>),
    SelectRows(NodeId, Rc<Vec<usize>>),
    /// per-row sum over a contiguous column range -> n x 1
    WindowSum(NodeId, Rc<Vec<Range<usize>>>),
    /// elementwise -ln(max(x, LOG_FLOOR))
    NegLogFloor(NodeId),
    SumAll(NodeId),
    AddN(Vec<NodeId>),
    /// -D * exp(-sigma) for a 1x1 parameter sigma and constant matrix D
    NegExpScale(NodeId, Rc<Array2<f64>>),
    /// sum of x * ln(max(x, LOG_FLOOR)) over all entries -> 1x1
    SumXLnX(NodeId),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.dim(), (1, 1));
        self.nodes[id].value[[0, 0]]
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_tb(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.dot(&self.nodes[b].value.t());
        self.push(value, Op::MatMulTB(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.nodes[row].value.nrows(), 1);
        let value = &self.nodes[a].value + &self.nodes[row].value;
        self.push(value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = &self.nodes[a].value * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn mul_const(&mut self, a: NodeId, c: Array2<f64>) -> NodeId {
        let value = &self.nodes[a].value * &c;
        self.push(value, Op::MulConst(a, c))
    }

    pub fn masked_softmax(&mut self, input: NodeId, keep: Rc<Array2<bool>>) -> NodeId {
        let a = &self.nodes[input].value;
        let (n, m) = a.dim();
        debug_assert_eq!(keep.dim(), (n, m));
        let mut out = Array2::zeros((n, m));
        let mut fallback_rows = Vec::new();
        for i in 0..n {
            let kept: Vec<usize> = (0..m).filter(|&j| keep[[i, j]]).collect();
            if kept.is_empty() {
                // degenerate-row policy: uniform over the off-diagonal
                fallback_rows.push(i);
                let w = 1.0 / (m as f64 - 1.0);
                for j in 0..m {
                    if j != i {
                        out[[i, j]] = w;
                    }
                }
                continue;
            }
            let max = kept.iter().map(|&j| a[[i, j]]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for &j in &kept {
                let e = (a[[i, j]] - max).exp();
                out[[i, j]] = e;
                total += e;
            }
            for &j in &kept {
                out[[i, j]] /= total;
            }
        }
        if !fallback_rows.is_empty() {
            log::warn!(
                "masked softmax: {} fully masked row(s); using uniform off-diagonal weights",
                fallback_rows.len()
            );
        }
        self.push(out, Op::MaskedSoftmax { input, keep, fallback_rows })
    }

    pub fn support_softmax(&mut self, input: NodeId, supports: Rc<Vec<Range<usize>>>) -> NodeId {
        let a = &self.nodes[input].value;
        let (n, m) = a.dim();
        debug_assert_eq!(supports.len(), n);
        let mut out = Array2::zeros((n, m));
        for i in 0..n {
            let r = supports[i].clone();
            debug_assert!(!r.is_empty() && r.end <= m);
            let max = a.row(i).slice(ndarray::s![r.clone()]).fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let mut total = 0.0;
            for j in r.clone() {
                let e = (a[[i, j]] - max).exp();
                out[[i, j]] = e;
                total += e;
            }
            for j in r {
                out[[i, j]] /= total;
            }
        }
        self.push(out, Op::SupportSoftmax(input, supports))
    }

    pub fn select_rows(&mut self, a: NodeId, rows: Rc<Vec<usize>>) -> NodeId {
        let src = &self.nodes[a].value;
        let mut out = Array2::zeros((rows.len(), src.ncols()));
        for (k, &i) in rows.iter().enumerate() {
            out.row_mut(k).assign(&src.row(i));
        }
        self.push(out, Op::SelectRows(a, rows))
    }

    pub fn window_sum(&mut self, a: NodeId, windows: Rc<Vec<Range<usize>>>) -> NodeId {
        let src = &self.nodes[a].value;
        debug_assert_eq!(windows.len(), src.nrows());
        let mut out = Array2::zeros((src.nrows(), 1));
        for (i, w) in windows.iter().enumerate() {
            out[[i, 0]] = src.row(i).slice(ndarray::s![w.clone()]).sum();
        }
        self.push(out, Op::WindowSum(a, windows))
    }

    pub fn neg_log_floor(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(|x| -(x.max(LOG_FLOOR)).ln());
        self.push(value, Op::NegLogFloor(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a].value.sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a))
    }

    pub fn add_n(&mut self, ids: Vec<NodeId>) -> NodeId {
        debug_assert!(!ids.is_empty());
        let mut value = self.nodes[ids[0]].value.clone();
        for &id in &ids[1..] {
            value += &self.nodes[id].value;
        }
        self.push(value, Op::AddN(ids))
    }

    pub fn neg_exp_scale(&mut self, sigma: NodeId, d: Rc<Array2<f64>>) -> NodeId {
        let s = self.scalar(sigma);
        let value = d.mapv(|v| -v * (-s).exp());
        self.push(value, Op::NegExpScale(sigma, d))
    }

    pub fn sum_x_ln_x(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a].value.iter().map(|&x| x * x.max(LOG_FLOOR).ln()).sum();
        self.push(Array2::from_elem((1, 1), s), Op::SumXLnX(a))
    }

    /// Gradients of a scalar root with respect to every node.
    pub fn backward(&self, root: NodeId) -> Vec<Array2<f64>> {
        assert_eq!(self.nodes[root].value.dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Array2<f64>> = self
            .nodes
            .iter()
            .map(|n| Array2::zeros(n.value.dim()))
            .collect();
        grads[root][[0, 0]] = 1.0;

        for id in (0..=root).rev() {
            let g = grads[id].clone();
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[*b].value.t());
                    let gb = self.nodes[*a].value.t().dot(&g);
                    grads[*a] += &ga;
                    grads[*b] += &gb;
                }
                Op::MatMulTB(a, b) => {
                    let ga = g.dot(&self.nodes[*b].value);
                    let gb = g.t().dot(&self.nodes[*a].value);
                    grads[*a] += &ga;
                    grads[*b] += &gb;
                }
                Op::AddRow(a, row) => {
                    grads[*a] += &g;
                    let col_sums = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    grads[*row] += &col_sums;
                }
                Op::Scale(a, c) => {
                    grads[*a] += &(&g * *c);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[id].value;
                    grads[*a] += &(&g * &y.mapv(|v| 1.0 - v * v));
                }
                Op::MulConst(a, c) => {
                    grads[*a] += &(&g * c);
                }
                Op::MaskedSoftmax { input, keep, fallback_rows } => {
                    let y = &self.nodes[id].value;
                    let (n, m) = y.dim();
                    let mut ga = Array2::zeros((n, m));
                    for i in 0..n {
                        if fallback_rows.contains(&i) {
                            continue;
                        }
                        let mut dot = 0.0;
                        for j in 0..m {
                            if keep[[i, j]] {
                                dot += g[[i, j]] * y[[i, j]];
                            }
                        }
                        for j in 0..m {
                            if keep[[i, j]] {
                                ga[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                            }
                        }
                    }
                    grads[*input] += &ga;
                }
                Op::SupportSoftmax(input, supports) => {
                    let y = &self.nodes[id].value;
                    let mut ga = Array2::zeros(y.dim());
                    for (i, r) in supports.iter().enumerate() {
                        let mut dot = 0.0;
                        for j in r.clone() {
                            dot += g[[i, j]] * y[[i, j]];
                        }
                        for j in r.clone() {
                            ga[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                        }
                    }
                    grads[*input] += &ga;
                }
                Op::SelectRows(a, rows) => {
                    for (k, &i) in rows.iter().enumerate() {
                        let mut target = grads[*a].row_mut(i);
                        target += &g.row(k);
                    }
                }
                Op::WindowSum(a, windows) => {
                    for (i, w) in windows.iter().enumerate() {
                        for j in w.clone() {
                            grads[*a][[i, j]] += g[[i, 0]];
                        }
                    }
                }
                Op::NegLogFloor(a) => {
                    let x = &self.nodes[*a].value;
                    let ga = ndarray::Zip::from(&g).and(x).map_collect(|&gv, &xv| {
                        if xv > LOG_FLOOR {
                            -gv / xv
                        } else {
                            0.0
                        }
                    });
                    grads[*a] += &ga;
                }
                Op::SumAll(a) => {
                    grads[*a] += g[[0, 0]];
                }
                Op::AddN(ids) => {
                    for &cid in ids {
                        grads[cid] += &g;
                    }
                }
                Op::NegExpScale(sigma, d) => {
                    // y = -D e^{-s}; dy/ds = D e^{-s} = -y
                    let y = &self.nodes[id].value;
                    let gs: f64 = ndarray::Zip::from(&g).and(y).fold(0.0, |acc, &gv, &yv| acc - gv * yv);
                    let _ = d;
                    grads[*sigma][[0, 0]] += gs;
                }
                Op::SumXLnX(a) => {
                    let x = &self.nodes[*a].value;
                    let gscalar = g[[0, 0]];
                    let ga = x.mapv(|xv| {
                        if xv > LOG_FLOOR {
                            gscalar * (xv.ln() + 1.0)
                        } else {
                            gscalar * LOG_FLOOR.ln()
                        }
                    });
                    grads[*a] += &ga;
                }
            }
        }
        grads
    }
}

/// Central-difference gradient check used throughout the test suites: rebuilds
/// the graph at perturbed parameter values and compares the analytic gradient
/// entrywise. Returns the maximum relative error observed.
pub fn finite_diff_max_rel_err<F>(params: &[Array2<f64>], build: F) -> f64
where
    F: Fn(&mut Tape, &[NodeId]) -> NodeId,
{
    let eval = |values: &[Array2<f64>]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|v| tape.leaf(v.clone())).collect();
        let root = build(&mut tape, &ids);
        tape.scalar(root)
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|v| tape.leaf(v.clone())).collect();
    let root = build(&mut tape, &ids);
    let grads = tape.backward(root);

    let h = 1e-5;
    let mut worst = 0.0_f64;
    let mut perturbed: Vec<Array2<f64>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for ((r, c), _) in p.indexed_iter() {
            perturbed[pi][[r, c]] = p[[r, c]] + h;
            let fp = eval(&perturbed);
            perturbed[pi][[r, c]] = p[[r, c]] - h;
            let fm = eval(&perturbed);
            perturbed[pi][[r, c]] = p[[r, c]];
            let fd = (fp - fm) / (2.0 * h);
            let an = grads[ids[pi]][[r, c]];
            let denom = an.abs().max(fd.abs()).max(1e-6);
            let rel = (an - fd).abs() / denom;
            worst = worst.max(rel);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn randn(rng: &mut StdRng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn matmul_chain_gradients() {
        let mut rng = StdRng::seed_from_u64(3);
        let params = vec![randn(&mut rng, 3, 4), randn(&mut rng, 4, 2), randn(&mut rng, 3, 2)];
        let err = finite_diff_max_rel_err(&params, |t, ids| {
            let prod = t.matmul(ids[0], ids[1]);
            let scaled = t.scale(prod, 0.7);
            let both = t.matmul_tb(scaled, ids[2]);
            let act = t.tanh(both);
            t.sum_all(act)
        });
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn masked_softmax_gradients_and_rows() {
        let mut rng = StdRng::seed_from_u64(4);
        let n = 5;
        let mut keep = Array2::from_elem((n, n), true);
        for i in 0..n {
            keep[[i, i]] = false;
        }
        keep[[1, 3]] = false;
        let keep = Rc::new(keep);
        let probe = randn(&mut rng, n, n);
        let params = vec![randn(&mut rng, n, n)];

        let mut tape = Tape::new();
        let a = tape.leaf(params[0].clone());
        let w = tape.masked_softmax(a, Rc::clone(&keep));
        for row in tape.value(w).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        for i in 0..n {
            assert_eq!(tape.value(w)[[i, i]], 0.0);
        }

        let keep2 = Rc::clone(&keep);
        let err = finite_diff_max_rel_err(&params, move |t, ids| {
            let w = t.masked_softmax(ids[0], Rc::clone(&keep2));
            let weighted = t.mul_const(w, probe.clone());
            t.sum_all(weighted)
        });
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn fully_masked_row_gets_uniform_off_diagonal_and_no_gradient() {
        let keep = Rc::new(Array2::from_elem((3, 3), false));
        let mut tape = Tape::new();
        let a = tape.leaf(Array2::from_elem((3, 3), 5.0));
        let w = tape.masked_softmax(a, keep);
        assert_eq!(tape.value(w)[[0, 0]], 0.0);
        assert!((tape.value(w)[[0, 1]] - 0.5).abs() < 1e-15);
        let s = tape.sum_all(w);
        let grads = tape.backward(s);
        assert!(grads[a].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn support_softmax_respects_ranges() {
        let mut rng = StdRng::seed_from_u64(5);
        let supports = Rc::new(vec![1..4, 0..1, 2..4]);
        let probe = randn(&mut rng, 3, 4);
        let params = vec![randn(&mut rng, 3, 4)];

        let mut tape = Tape::new();
        let a = tape.leaf(params[0].clone());
        let p = tape.support_softmax(a, Rc::clone(&supports));
        let v = tape.value(p);
        assert_eq!(v[[0, 0]], 0.0);
        assert_eq!(v[[1, 0]], 1.0); // singleton support is degenerate
        assert!((v.row(0).sum() - 1.0).abs() < 1e-12);

        let supports2 = Rc::clone(&supports);
        let err = finite_diff_max_rel_err(&params, move |t, ids| {
            let p = t.support_softmax(ids[0], Rc::clone(&supports2));
            let weighted = t.mul_const(p, probe.clone());
            t.sum_all(weighted)
        });
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn window_and_log_ops_gradients() {
        let mut rng = StdRng::seed_from_u64(6);
        // strictly positive inputs keep the log away from its floor
        let params = vec![Array2::from_shape_fn((4, 5), |_| rng.gen_range(0.05..1.0))];
        let windows = Rc::new(vec![0..2, 1..4, 2..5, 0..5]);
        let rows = Rc::new(vec![0usize, 2, 3]);
        let err = finite_diff_max_rel_err(&params, move |t, ids| {
            let picked = t.select_rows(ids[0], Rc::clone(&rows));
            let win = Rc::new(vec![0..2, 1..4, 2..5]);
            let sums = t.window_sum(picked, win);
            let nll = t.neg_log_floor(sums);
            let a = t.sum_all(nll);
            let ent = t.sum_x_ln_x(ids[0]);
            let scaled = t.scale(ent, -0.3);
            let _ = &windows;
            t.add_n(vec![a, scaled])
        });
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn neg_exp_scale_gradient_in_sigma() {
        let mut rng = StdRng::seed_from_u64(7);
        let d = Rc::new(Array2::from_shape_fn((4, 4), |_| rng.gen_range(0.0..2.0)));
        let probe = randn(&mut rng, 4, 4);
        let params = vec![Array2::from_elem((1, 1), 0.3)];
        let err = finite_diff_max_rel_err(&params, move |t, ids| {
            let a = t.neg_exp_scale(ids[0], Rc::clone(&d));
            let weighted = t.mul_const(a, probe.clone());
            t.sum_all(weighted)
        });
        assert!(err < 1e-7, "max rel err {err}");
    }

    #[test]
    fn add_row_broadcast_gradient() {
        let mut rng = StdRng::seed_from_u64(8);
        let params = vec![randn(&mut rng, 3, 4), randn(&mut rng, 1, 4)];
        let err = finite_diff_max_rel_err(&params, |t, ids| {
            let s = t.add_row(ids[0], ids[1]);
            let a = t.tanh(s);
            t.sum_all(a)
        });
        assert!(err < 1e-6, "max rel err {err}");
    }
}
