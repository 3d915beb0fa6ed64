use std::sync::Arc;

use super::kernels::{segment_softmax, segment_weighted_mean, SparseMatrix};
use super::matrix::{dot, Matrix};
use super::params::{ParamGrads, ParamId, ParamStore};
use crate::scalar::{log_sigmoid, sigmoid, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddConst(Var, T),
    AddRow(Var, Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Gather(Var, Arc<[usize]>),
    RowDot(Var, Var),
    RowNormalize(Var),
    SegmentSoftmax(Var, Arc<[usize]>),
    SegmentWeightedMean {
        values: Var,
        weights: Var,
        offsets: Arc<[usize]>,
    },
    SpMM(Arc<SparseMatrix<T>>, Var),
    Sum(Var),
    RowLogSumExp(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Reverse-mode recording of the primitives the model is built from.
///
/// Nodes are appended in evaluation order, so iterating them backwards is a
/// reverse topological order and every node is visited once in
/// [`Tape::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints of every node reachable from the loss.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> Var {
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::RowDot(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::Scale(a, _)
            | Op::AddConst(a, _)
            | Op::Sigmoid(a)
            | Op::LogSigmoid(a)
            | Op::Gather(a, _)
            | Op::RowNormalize(a)
            | Op::SegmentSoftmax(a, _)
            | Op::SpMM(_, a)
            | Op::Sum(a)
            | Op::RowLogSumExp(a) => self.needs(*a),
            Op::SegmentWeightedMean { values, weights, .. } => self.needs(*values) || self.needs(*weights),
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(|v| self.needs(*v)),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Input)
    }

    /// Trainable leaf holding a copy of a parameter tensor.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.tensor(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a, c))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "bias must be a single row");
        let mut v = self.value(a).clone();
        assert_eq!(v.cols(), b.cols(), "bias width mismatch");
        let b = b.as_slice().to_vec();
        for r in 0..v.rows() {
            for (x, &y) in v.row_mut(r).iter_mut().zip(&b) {
                *x = *x + y;
            }
        }
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(log_sigmoid);
        self.push(v, Op::LogSigmoid(a))
    }

    pub fn gather(&mut self, a: Var, idx: impl Into<Arc<[usize]>>) -> Var {
        let idx = idx.into();
        let v = self.value(a).gather_rows(&idx);
        self.push(v, Op::Gather(a, idx))
    }

    /// Row-wise inner product, `n x d` with `n x d` to `n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "row_dot shape mismatch");
        let v = Matrix::column((0..x.rows()).map(|i| dot(x.row(i), y.row(i))).collect());
        self.push(v, Op::RowDot(a, b))
    }

    /// Scales each row to unit L2 norm.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        let floor = T::of(NORM_FLOOR);
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let n = dot(row, row).sqrt().max(floor);
            for x in row {
                *x = *x / n;
            }
        }
        self.push(v, Op::RowNormalize(a))
    }

    /// Softmax of an `n x 1` score column within CSR segments.
    pub fn segment_softmax(&mut self, scores: Var, offsets: impl Into<Arc<[usize]>>) -> Var {
        let offsets = offsets.into();
        let s = self.value(scores);
        assert_eq!(s.cols(), 1, "segment_softmax takes a column");
        let v = Matrix::column(segment_softmax(s.as_slice(), &offsets));
        self.push(v, Op::SegmentSoftmax(scores, offsets))
    }

    /// `(1/|s|) * sum_{i in s} w_i * values_i` for each CSR segment `s`.
    pub fn segment_weighted_mean(&mut self, values: Var, weights: Var, offsets: impl Into<Arc<[usize]>>) -> Var {
        let offsets = offsets.into();
        let w = self.value(weights);
        assert_eq!(w.cols(), 1, "weights must be a column");
        let v = segment_weighted_mean(self.value(values), w.as_slice(), &offsets);
        self.push(
            v,
            Op::SegmentWeightedMean {
                values,
                weights,
                offsets,
            },
        )
    }

    /// Constant sparse matrix times `x`.
    pub fn spmm(&mut self, s: Arc<SparseMatrix<T>>, x: Var) -> Var {
        let v = s.mul_dense(self.value(x));
        self.push(v, Op::SpMM(s, x))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Row-wise `log sum exp`, `n x k` to `n x 1`.
    pub fn row_logsumexp(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Matrix::column((0..x.rows()).map(|r| logsumexp(x.row(r))).collect());
        self.push(v, Op::RowLogSumExp(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut at = 0;
            for p in parts {
                let src = self.value(*p);
                assert_eq!(src.rows(), rows, "concat_cols row mismatch");
                v.row_mut(r)[at..at + src.cols()].copy_from_slice(src.row(r));
                at += src.cols();
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let src = self.value(*p);
            assert_eq!(src.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(src.as_slice());
            rows += src.rows();
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Accumulates adjoints from a `1 x 1` loss back to every node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn acc(&self, grads: &mut [Option<Matrix<T>>], v: Var, delta: Matrix<T>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, i: usize, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, g.matmul_t(self.value(*b)));
                }
                if self.needs(*b) {
                    self.acc(grads, *b, self.value(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    self.acc(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.acc(grads, *a, g.map(|x| x * c));
            }
            Op::AddConst(a, _) => self.acc(grads, *a, g.clone()),
            Op::AddRow(a, bias) => {
                self.acc(grads, *a, g.clone());
                if self.needs(*bias) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, &x) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *d = *d + x;
                        }
                    }
                    self.acc(grads, *bias, db);
                }
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(out, |gx, s| gx * s * (T::one() - s));
                self.acc(grads, *a, d);
            }
            Op::LogSigmoid(a) => {
                let d = g.zip_map(self.value(*a), |gx, x| gx * sigmoid(-x));
                self.acc(grads, *a, d);
            }
            Op::Gather(a, idx) => {
                if self.needs(*a) {
                    let src = self.value(*a);
                    let mut d = Matrix::zeros(src.rows(), src.cols());
                    for (k, &row) in idx.iter().enumerate() {
                        for (x, &y) in d.row_mut(row).iter_mut().zip(g.row(k)) {
                            *x = *x + y;
                        }
                    }
                    self.acc(grads, *a, d);
                }
            }
            Op::RowDot(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut d = y.clone();
                    for r in 0..d.rows() {
                        let s = g[(r, 0)];
                        d.row_mut(r).iter_mut().for_each(|v| *v = *v * s);
                    }
                    self.acc(grads, *a, d);
                }
                if self.needs(*b) {
                    let mut d = x.clone();
                    for r in 0..d.rows() {
                        let s = g[(r, 0)];
                        d.row_mut(r).iter_mut().for_each(|v| *v = *v * s);
                    }
                    self.acc(grads, *b, d);
                }
            }
            Op::RowNormalize(a) => {
                let x = self.value(*a);
                let floor = T::of(NORM_FLOOR);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let norm = dot(x.row(r), x.row(r)).sqrt();
                    let (gr, yr) = (g.row(r), out.row(r));
                    let dr = d.row_mut(r);
                    if norm < floor {
                        for (o, &gv) in dr.iter_mut().zip(gr) {
                            *o = gv / floor;
                        }
                    } else {
                        let proj = dot(yr, gr);
                        for ((o, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *o = (gv - yv * proj) / norm;
                        }
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::SegmentSoftmax(a, offsets) => {
                let y = out.as_slice();
                let gs = g.as_slice();
                let mut d = vec![T::zero(); y.len()];
                for w in offsets.windows(2) {
                    let (lo, hi) = (w[0], w[1]);
                    let inner = (lo..hi).fold(T::zero(), |acc, i| acc + y[i] * gs[i]);
                    for i in lo..hi {
                        d[i] = y[i] * (gs[i] - inner);
                    }
                }
                self.acc(grads, *a, Matrix::column(d));
            }
            Op::SegmentWeightedMean {
                values,
                weights,
                offsets,
            } => {
                let vals = self.value(*values);
                let w = self.value(*weights).as_slice();
                let mut dv = Matrix::zeros(vals.rows(), vals.cols());
                let mut dw = vec![T::zero(); w.len()];
                for s in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    if lo == hi {
                        continue;
                    }
                    let inv = T::one() / T::of_usize(hi - lo);
                    let gs = g.row(s);
                    for i in lo..hi {
                        dw[i] = inv * dot(vals.row(i), gs);
                        let c = w[i] * inv;
                        for (o, &gv) in dv.row_mut(i).iter_mut().zip(gs) {
                            *o = c * gv;
                        }
                    }
                }
                if self.needs(*values) {
                    self.acc(grads, *values, dv);
                }
                if self.needs(*weights) {
                    self.acc(grads, *weights, Matrix::column(dw));
                }
            }
            Op::SpMM(s, x) => self.acc(grads, *x, s.t_mul_dense(g)),
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.acc(grads, *a, Matrix::filled(r, c, g.item()));
            }
            Op::RowLogSumExp(a) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let lse = out[(r, 0)];
                    let gr = g[(r, 0)];
                    for (o, &xv) in d.row_mut(r).iter_mut().zip(x.row(r)) {
                        *o = gr * (xv - lse).exp();
                    }
                }
                self.acc(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if self.needs(*p) {
                        let mut d = Matrix::zeros(g.rows(), c);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[at..at + c]);
                        }
                        self.acc(grads, *p, d);
                    }
                    at += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for p in parts {
                    let (r, c) = self.value(*p).shape();
                    if self.needs(*p) {
                        let d = Matrix::from_vec(r, c, g.as_slice()[at * c..(at + r) * c].to_vec());
                        self.acc(grads, *p, d);
                    }
                    at += r;
                }
            }
        }
    }

    /// Sums node adjoints into per-parameter gradients.
    pub fn param_grads(&self, grads: &Gradients<T>, store: &ParamStore<T>) -> ParamGrads<T> {
        let mut out = ParamGrads::empty(store.len());
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                out.accumulate(*id, g);
            }
        }
        out
    }
}

pub(crate) fn logsumexp<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of d(sum(w ⊙ f(x)))/dx for a unary tape op.
    fn check_unary(build: impl Fn(&mut Tape<f64>, Var) -> Var, x: Matrix<f64>) {
        let eval = |x: &Matrix<f64>| -> (f64, Option<Matrix<f64>>) {
            let mut store = ParamStore::new();
            let id = store.insert("x", x.clone());
            let mut t = Tape::new();
            let xv = t.param(&store, id);
            let y = build(&mut t, xv);
            // weight outputs so the check is not blind to symmetric errors
            let (r, c) = t.value(y).shape();
            let w = Matrix::from_vec(r, c, (0..r * c).map(|i| 0.3 + 0.17 * i as f64).collect());
            let wv = t.input(w);
            let yw = t.mul(y, wv);
            let l = t.sum(yw);
            let grads = t.backward(l);
            let pg = t.param_grads(&grads, &store);
            (t.value(l).item(), pg.get(id).cloned())
        };
        let (_, analytic) = eval(&x);
        let analytic = analytic.expect("gradient reaches input");
        let eps = 1e-6;
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[k] += eps;
            let mut xm = x.clone();
            xm.as_mut_slice()[k] -= eps;
            let fd = (eval(&xp).0 - eval(&xm).0) / (2.0 * eps);
            let a = analytic.as_slice()[k];
            assert!((a - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "coord {k}: analytic {a} vs fd {fd}");
        }
    }

    fn sample(rows: usize, cols: usize) -> Matrix<f64> {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|i| ((i * 7919) % 23) as f64 / 11.0 - 1.0).collect(),
        )
    }

    #[test]
    fn unary_ops_match_finite_differences() {
        check_unary(|t, x| t.sigmoid(x), sample(3, 2));
        check_unary(|t, x| t.log_sigmoid(x), sample(3, 2));
        check_unary(|t, x| t.row_normalize(x), sample(3, 4));
        check_unary(|t, x| t.row_logsumexp(x), sample(4, 3));
        check_unary(|t, x| t.gather(x, vec![2, 0, 2, 1]), sample(3, 2));
        check_unary(|t, x| t.segment_softmax(x, vec![0, 3, 3, 5, 6]), sample(6, 1));
        check_unary(|t, x| t.row_dot(x, x), sample(3, 3));
        check_unary(|t, x| t.mul(x, x), sample(2, 3));
        check_unary(|t, x| t.matmul(x, x), sample(3, 3));
        check_unary(
            |t, x| {
                let a = t.gather(x, vec![0, 1]);
                let b = t.gather(x, vec![2]);
                t.concat_rows(&[a, b, a])
            },
            sample(3, 2),
        );
        check_unary(
            |t, x| {
                let c = t.scale(x, 2.5);
                let c = t.add_const(c, -0.3);
                t.concat_cols(&[x, c])
            },
            sample(3, 2),
        );
        check_unary(
            |t, x| {
                let s = Arc::new(SparseMatrix::from_sorted_entries(
                    2,
                    3,
                    vec![(0, 0, 0.5), (0, 2, -1.0), (1, 1, 2.0), (1, 2, 0.25)],
                ));
                t.spmm(s, x)
            },
            sample(3, 2),
        );
        check_unary(
            |t, x| {
                let b = t.gather(x, vec![0]);
                let y = t.add_row(x, b);
                t.sub(y, x)
            },
            sample(3, 2),
        );
    }

    #[test]
    fn weighted_mean_gradients_reach_values_and_weights() {
        check_unary(
            |t, x| {
                let w = t.gather(x, vec![0, 1, 2, 3]);
                let w = t.row_dot(w, w);
                let vals = t.gather(x, vec![3, 2, 1, 0]);
                t.segment_weighted_mean(vals, w, vec![0, 1, 1, 4])
            },
            sample(4, 2),
        );
    }

    #[test]
    fn inputs_receive_no_gradient() {
        let mut t = Tape::<f64>::new();
        let a = t.input(Matrix::scalar(2.0));
        let b = t.input(Matrix::scalar(3.0));
        let c = t.mul(a, b);
        let s = t.sum(c);
        let g = t.backward(s);
        assert!(g.wrt(a).is_none());
        assert_eq!(t.value(s).item(), 6.0);
    }

    #[test]
    fn logsumexp_is_stable() {
        assert!((logsumexp(&[1000.0f64, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp::<f64>(&[]), f64::NEG_INFINITY);
    }
}
