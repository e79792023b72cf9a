//! Tape-based reverse-mode differentiation over a closed set of matrix ops.
//!
//! A [`Graph`] records every op in execution order; [`Graph::backward`]
//! walks the tape in reverse. Parameters enter the tape through
//! [`Graph::param`] and their gradients come back keyed by [`ParamId`].

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use rand::Rng;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Variance floor used by layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-6;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    Ln(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    GatherRows { x: Var, idx: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    Dropout { x: Var, mask: Vec<T> },
    Conv1d { x: Var, w: Var, b: Var, kernel: usize, stride: usize },
    RowCosine { a: Var, b: Var, norms: Vec<(T, T)> },
    Reshape(Var),
    ReplaceRows { x: Var, fill: Var, mask: Vec<bool> },
    StraightThrough(Var),
    MeanRows(Var),
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    param: Option<ParamId>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients from one backward pass.
pub struct Backprop<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(usize, ParamId)>,
}

impl<T: Scalar> Backprop<T> {
    /// Gradient of the loss with respect to `v`, if it influenced the loss.
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradients for every parameter that entered the tape, summed when a
    /// parameter was bound more than once.
    pub fn param_grads(&self, num_params: usize) -> Gradients<T> {
        let mut out = Gradients::new(num_params);
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                out.accumulate(id, g);
            }
        }
        out
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn gelu<T: Scalar>(x: T) -> T {
    let (c, a, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let (c, a, half) = (T::lit(GELU_C), T::lit(GELU_A), T::lit(0.5));
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, param: None, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Leaf that does not receive gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked (an input under test, for example).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Binds a stored parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.input(store.get(id).clone());
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_ex(false, self.value(b), true);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMulBt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(ta.same_shape(tb), "add: {:?} vs {:?}", ta.shape(), tb.shape());
        let mut out = ta.clone();
        out.add_assign(tb);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds a `1 x cols` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (tx, tr) = (self.value(x), self.value(row));
        assert!(tr.rows() == 1 && tr.cols() == tx.cols(), "add_row: {:?} + {:?}", tx.shape(), tr.shape());
        let mut out = tx.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(tr.values()) {
                *o += *b;
            }
        }
        let ng = self.ng(x) || self.ng(row);
        self.push(out, Op::AddRow(x, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(ta.same_shape(tb), "mul: {:?} vs {:?}", ta.shape(), tb.shape());
        let values = ta.values().iter().zip(tb.values()).map(|(x, y)| *x * *y).collect();
        let out = Tensor::from_rows(ta.rows(), ta.cols(), values);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    /// Natural log; inputs must be positive.
    pub fn ln(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.ln());
        let ng = self.ng(x);
        self.push(out, Op::Ln(x), ng)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        self.softmax_masked(x, None)
    }

    /// Row-wise softmax; columns flagged in `mask` get probability zero.
    /// At least one column must stay unmasked.
    pub fn softmax_masked(&mut self, x: Var, mask: Option<&[bool]>) -> Var {
        let tx = self.value(x);
        let cols = tx.cols();
        if let Some(m) = mask {
            assert_eq!(m.len(), cols, "softmax mask length");
            assert!(m.iter().any(|&b| !b), "softmax mask hides every column");
        }
        let hidden = |j: usize| mask.is_some_and(|m| m[j]);
        let mut out = Tensor::zeros(tx.rows(), cols);
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let max = (0..cols).filter(|&j| !hidden(j)).map(|j| row[j]).fold(T::neg_infinity(), T::max);
            let dst = out.row_mut(r);
            let mut sum = T::zero();
            for j in 0..cols {
                if !hidden(j) {
                    dst[j] = (row[j] - max).exp();
                    sum += dst[j];
                }
            }
            dst.iter_mut().for_each(|v| *v /= sum);
        }
        let ng = self.ng(x);
        self.push(out, Op::Softmax(x), ng)
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// `1 x cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let tx = self.value(x);
        let (rows, cols) = (tx.rows(), tx.cols());
        assert!(self.value(gain).len() == cols && self.value(bias).len() == cols, "layer_norm affine size");
        let (xhat, inv_std) = normalize_rows(tx);
        let (g, b) = (self.value(gain).values(), self.value(bias).values());
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                out.values_mut()[r * cols + c] = xhat[r * cols + c] * g[c] + b[c];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let tx = self.value(x);
        assert!(start + len <= tx.cols(), "slice_cols out of range");
        let mut values = Vec::with_capacity(tx.rows() * len);
        for r in 0..tx.rows() {
            values.extend_from_slice(&tx.row(r)[start..start + len]);
        }
        let out = Tensor::from_rows(tx.rows(), len, values);
        let ng = self.ng(x);
        self.push(out, Op::SliceCols { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        assert!(parts.iter().all(|&p| self.value(p).rows() == rows), "concat_cols row mismatch");
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                values.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::from_rows(rows, cols, values), Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Stacks rows `idx` of `x` (embedding lookup and row selection).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let out = self.value(x).gather_rows(idx);
        let ng = self.ng(x);
        self.push(out, Op::GatherRows { x, idx: idx.to_vec() }, ng)
    }

    /// Mean softmax cross-entropy of `logits` rows against class targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let tl = self.value(logits);
        let (rows, cols) = (tl.rows(), tl.cols());
        assert_eq!(rows, targets.len(), "cross_entropy target count");
        assert!(rows > 0, "cross_entropy over zero rows");
        let mut probs = vec![T::zero(); rows * cols];
        let mut total = T::zero();
        for r in 0..rows {
            let row = tl.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum: T = row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
            let lse = max + sum.ln();
            total += lse - row[targets[r]];
            for c in 0..cols {
                probs[r * cols + c] = (row[c] - lse).exp();
            }
        }
        let out = Tensor::scalar(total / T::from_usize_lossy(rows));
        let ng = self.ng(logits);
        self.push(out, Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, ng)
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - p)`. Identity when
    /// `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut StreamRng) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        if p == 0.0 {
            return x;
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let tx = self.value(x);
        let mask: Vec<T> = (0..tx.len()).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect();
        let values = tx.values().iter().zip(&mask).map(|(v, m)| *v * *m).collect();
        let out = Tensor::from_rows(tx.rows(), tx.cols(), values);
        let ng = self.ng(x);
        self.push(out, Op::Dropout { x, mask }, ng)
    }

    /// Strided 1-D convolution over time-major input `x` (`len x c_in`).
    /// `w` is `(kernel * c_in) x c_out`, `b` is `1 x c_out`; output has
    /// `floor((len - kernel) / stride) + 1` rows.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, kernel: usize, stride: usize) -> Var {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (len, c_in) = (tx.rows(), tx.cols());
        let c_out = tw.cols();
        assert!(len >= kernel, "conv1d input shorter than kernel");
        assert_eq!(tw.rows(), kernel * c_in, "conv1d weight rows");
        assert_eq!(tb.len(), c_out, "conv1d bias");
        let frames = (len - kernel) / stride + 1;
        let mut out = Tensor::zeros(frames, c_out);
        for r in 0..frames {
            out.row_mut(r).copy_from_slice(tb.values());
        }
        // the im2col matrix is a strided view of x: row t starts at t*stride*c_in
        T::gemm(
            frames,
            kernel * c_in,
            c_out,
            T::one(),
            tx.values(),
            ((stride * c_in) as isize, 1),
            tw.values(),
            (c_out as isize, 1),
            T::one(),
            out.values_mut(),
            (c_out as isize, 1),
        );
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(out, Op::Conv1d { x, w, b, kernel, stride }, ng)
    }

    /// Cosine similarity of matching rows, `n x 1`. Rows must be nonzero.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert!(ta.same_shape(tb), "row_cosine shapes");
        let mut norms = Vec::with_capacity(ta.rows());
        let mut values = Vec::with_capacity(ta.rows());
        for r in 0..ta.rows() {
            let (ra, rb) = (ta.row(r), tb.row(r));
            let dot = ra.iter().zip(rb).fold(T::zero(), |s, (x, y)| s + *x * *y);
            let na = ra.iter().fold(T::zero(), |s, x| s + *x * *x).sqrt();
            let nb = rb.iter().fold(T::zero(), |s, x| s + *x * *x).sqrt();
            assert!(na > T::zero() && nb > T::zero(), "row_cosine on a zero row");
            norms.push((na, nb));
            values.push(dot / (na * nb));
        }
        let out = Tensor::from_rows(ta.rows(), 1, values);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::RowCosine { a, b, norms }, ng)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(x).clone().reshaped(rows, cols);
        let ng = self.ng(x);
        self.push(out, Op::Reshape(x), ng)
    }

    /// Replaces rows flagged in `mask` with the `1 x cols` row `fill`.
    pub fn replace_rows(&mut self, x: Var, fill: Var, mask: &[bool]) -> Var {
        let (tx, tf) = (self.value(x), self.value(fill));
        assert_eq!(mask.len(), tx.rows(), "replace_rows mask length");
        assert!(tf.rows() == 1 && tf.cols() == tx.cols(), "replace_rows fill shape");
        let mut out = tx.clone();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(r).copy_from_slice(tf.values());
            }
        }
        let ng = self.ng(x) || self.ng(fill);
        self.push(out, Op::ReplaceRows { x, fill, mask: mask.to_vec() }, ng)
    }

    /// Forward: one-hot of each row's argmax (lowest index on ties).
    /// Backward: the incoming gradient passes to `soft` unchanged.
    pub fn straight_through(&mut self, soft: Var) -> Var {
        let ts = self.value(soft);
        let mut out = Tensor::zeros(ts.rows(), ts.cols());
        for r in 0..ts.rows() {
            let j = argmax(ts.row(r));
            out.row_mut(r)[j] = T::one();
        }
        let ng = self.ng(soft);
        self.push(out, Op::StraightThrough(soft), ng)
    }

    /// Column means, `1 x cols`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let inv = T::one() / T::from_usize_lossy(tx.rows());
        let mut out = Tensor::zeros(1, tx.cols());
        for r in 0..tx.rows() {
            for (o, v) in out.values_mut().iter_mut().zip(tx.row(r)) {
                *o += *v * inv;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::MeanRows(x), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().fold(T::zero(), |a, &v| a + v);
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Reverse pass from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Backprop<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backward_node(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        let params = self.nodes.iter().enumerate().filter_map(|(i, n)| n.param.map(|p| (i, p))).collect();
        Backprop { grads, params }
    }

    fn backward_node(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.ng(a) {
                    accumulate(grads, a, dy.matmul_ex(false, val(b), true));
                }
                if self.ng(b) {
                    accumulate(grads, b, val(a).matmul_ex(true, dy, false));
                }
            }
            &Op::MatMulBt(a, b) => {
                if self.ng(a) {
                    accumulate(grads, a, dy.matmul(val(b)));
                }
                if self.ng(b) {
                    accumulate(grads, b, dy.matmul_ex(true, val(a), false));
                }
            }
            &Op::Add(a, b) => {
                if self.ng(a) {
                    accumulate(grads, a, dy.clone());
                }
                if self.ng(b) {
                    accumulate(grads, b, dy.clone());
                }
            }
            &Op::AddRow(x, row) => {
                if self.ng(x) {
                    accumulate(grads, x, dy.clone());
                }
                if self.ng(row) {
                    accumulate(grads, row, column_sums(dy));
                }
            }
            &Op::Mul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                if self.ng(a) {
                    accumulate(grads, a, zip_map(dy, tb, |g, y| g * y));
                }
                if self.ng(b) {
                    accumulate(grads, b, zip_map(dy, ta, |g, x| g * x));
                }
            }
            &Op::Scale(x, c) => accumulate(grads, x, dy.map(|g| g * c)),
            &Op::Gelu(x) => accumulate(grads, x, zip_map(dy, val(x), |g, v| g * gelu_grad(v))),
            &Op::Ln(x) => accumulate(grads, x, zip_map(dy, val(x), |g, v| g / v)),
            &Op::Softmax(x) => {
                let y = &node.value;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), dy.row(r));
                    let dot = yr.iter().zip(gr).fold(T::zero(), |s, (a, b)| s + *a * *b);
                    for (d, (yv, gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *d = *yv * (*gv - dot);
                    }
                }
                accumulate(grads, x, dx);
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let (rows, cols) = (dy.rows(), dy.cols());
                let g = val(*gain).values();
                if self.ng(*gain) {
                    let mut dg = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            dg.values_mut()[c] += dy.get(r, c) * xhat[r * cols + c];
                        }
                    }
                    accumulate(grads, *gain, dg);
                }
                if self.ng(*bias) {
                    accumulate(grads, *bias, column_sums(dy));
                }
                if self.ng(*x) {
                    let n = T::from_usize_lossy(cols);
                    let mut dx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let dxh: Vec<T> = (0..cols).map(|c| dy.get(r, c) * g[c]).collect();
                        let s1 = dxh.iter().fold(T::zero(), |s, v| s + *v);
                        let s2 = dxh.iter().zip(xh).fold(T::zero(), |s, (a, b)| s + *a * *b);
                        let k = inv_std[r] / n;
                        for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d = k * (n * dxh[c] - s1 - xh[c] * s2);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            &Op::SliceCols { x, start } => {
                let tx = val(x);
                let mut dx = Tensor::zeros(tx.rows(), tx.cols());
                let w = dy.cols();
                for r in 0..dy.rows() {
                    dx.row_mut(r)[start..start + w].copy_from_slice(dy.row(r));
                }
                accumulate(grads, x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if self.ng(p) {
                        let mut dp = Tensor::zeros(dy.rows(), w);
                        for r in 0..dy.rows() {
                            dp.row_mut(r).copy_from_slice(&dy.row(r)[offset..offset + w]);
                        }
                        accumulate(grads, p, dp);
                    }
                    offset += w;
                }
            }
            Op::GatherRows { x, idx } => {
                let tx = val(*x);
                let mut dx = Tensor::zeros(tx.rows(), tx.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (d, g) in dx.row_mut(i).iter_mut().zip(dy.row(r)) {
                        *d += *g;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let tl = val(*logits);
                let (rows, cols) = (tl.rows(), tl.cols());
                let k = dy.item() / T::from_usize_lossy(rows);
                let mut dl = Tensor::from_rows(rows, cols, probs.clone());
                for (r, &t) in targets.iter().enumerate() {
                    dl.row_mut(r)[t] -= T::one();
                }
                dl.values_mut().iter_mut().for_each(|v| *v *= k);
                accumulate(grads, *logits, dl);
            }
            Op::Dropout { x, mask } => {
                let values = dy.values().iter().zip(mask).map(|(g, m)| *g * *m).collect();
                accumulate(grads, *x, Tensor::from_rows(dy.rows(), dy.cols(), values));
            }
            &Op::Conv1d { x, w, b, kernel, stride } => {
                let (tx, tw) = (val(x), val(w));
                let (len, c_in) = (tx.rows(), tx.cols());
                let (frames, c_out) = (dy.rows(), dy.cols());
                let span = kernel * c_in;
                if self.ng(b) {
                    accumulate(grads, b, column_sums(dy));
                }
                if self.ng(w) {
                    let mut dw = Tensor::zeros(span, c_out);
                    // im2col^T * dy, reading im2col as a transposed strided view
                    T::gemm(
                        span,
                        frames,
                        c_out,
                        T::one(),
                        tx.values(),
                        (1, (stride * c_in) as isize),
                        dy.values(),
                        (c_out as isize, 1),
                        T::zero(),
                        dw.values_mut(),
                        (c_out as isize, 1),
                    );
                    accumulate(grads, w, dw);
                }
                if self.ng(x) {
                    let dcols = dy.matmul_ex(false, tw, true);
                    let mut dx = Tensor::zeros(len, c_in);
                    for t in 0..frames {
                        let base = t * stride * c_in;
                        for (d, g) in dx.values_mut()[base..base + span].iter_mut().zip(dcols.row(t)) {
                            *d += *g;
                        }
                    }
                    accumulate(grads, x, dx);
                }
            }
            Op::RowCosine { a, b, norms } => {
                let (ta, tb) = (val(*a), val(*b));
                let cos = &node.value;
                let mut da = Tensor::zeros(ta.rows(), ta.cols());
                let mut db = Tensor::zeros(tb.rows(), tb.cols());
                for r in 0..ta.rows() {
                    let (na, nb) = norms[r];
                    let (g, c) = (dy.get(r, 0), cos.get(r, 0));
                    let (ra, rb) = (ta.row(r), tb.row(r));
                    for (j, d) in da.row_mut(r).iter_mut().enumerate() {
                        *d = g * (rb[j] / (na * nb) - c * ra[j] / (na * na));
                    }
                    for (j, d) in db.row_mut(r).iter_mut().enumerate() {
                        *d = g * (ra[j] / (na * nb) - c * rb[j] / (nb * nb));
                    }
                }
                if self.ng(*a) {
                    accumulate(grads, *a, da);
                }
                if self.ng(*b) {
                    accumulate(grads, *b, db);
                }
            }
            &Op::Reshape(x) => {
                let tx = val(x);
                accumulate(grads, x, dy.clone().reshaped(tx.rows(), tx.cols()));
            }
            Op::ReplaceRows { x, fill, mask } => {
                let mut dx = dy.clone();
                let mut df = Tensor::zeros(1, dy.cols());
                for (r, &m) in mask.iter().enumerate() {
                    if m {
                        for (d, g) in df.values_mut().iter_mut().zip(dy.row(r)) {
                            *d += *g;
                        }
                        dx.row_mut(r).iter_mut().for_each(|v| *v = T::zero());
                    }
                }
                if self.ng(*x) {
                    accumulate(grads, *x, dx);
                }
                if self.ng(*fill) {
                    accumulate(grads, *fill, df);
                }
            }
            &Op::StraightThrough(soft) => accumulate(grads, soft, dy.clone()),
            &Op::MeanRows(x) => {
                let tx = val(x);
                let inv = T::one() / T::from_usize_lossy(tx.rows());
                let mut dx = Tensor::zeros(tx.rows(), tx.cols());
                for r in 0..tx.rows() {
                    for (d, g) in dx.row_mut(r).iter_mut().zip(dy.values()) {
                        *d = *g * inv;
                    }
                }
                accumulate(grads, x, dx);
            }
            &Op::Sum(x) => {
                let tx = val(x);
                accumulate(grads, x, Tensor::full(tx.rows(), tx.cols(), dy.item()));
            }
        }
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let values = a.values().iter().zip(b.values()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::from_rows(a.rows(), a.cols(), values)
}

fn column_sums<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(1, t.cols());
    for r in 0..t.rows() {
        for (o, v) in out.values_mut().iter_mut().zip(t.row(r)) {
            *o += *v;
        }
    }
    out
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

/// Per-row standardization used by layer norm: returns `(xhat, 1/std)`.
pub fn normalize_rows<T: Scalar>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let (rows, cols) = (x.rows(), x.cols());
    let n = T::from_usize_lossy(cols);
    let eps = T::lit(LAYER_NORM_EPS);
    let mut xhat = Vec::with_capacity(rows * cols);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().fold(T::zero(), |s, v| s + *v) / n;
        let var = row.iter().fold(T::zero(), |s, v| s + (*v - mean) * (*v - mean)) / n;
        let inv = T::one() / (var + eps).sqrt();
        xhat.extend(row.iter().map(|v| (*v - mean) * inv));
        inv_std.push(inv);
    }
    (xhat, inv_std)
}
