//! A small reverse-mode differentiation tape over [`Tensor2`] values.
//!
//! Every operation evaluates eagerly and records how to push gradients back to
//! its inputs. Constant inputs (embeddings, masks, prior weights, targets) are
//! borrowed rather than copied. Shape mismatches are programming errors and
//! panic.

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{self, matmul_acc, matmul_at_acc, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'a> {
    Owned(Tensor2),
    Borrowed(&'a Tensor2),
}

impl Value<'_> {
    fn get(&self) -> &Tensor2 {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ScaleRows(Var, Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Softplus(Var),
    PairScore(Var, Var, Option<&'a Tensor2>),
    RowSoftmax(Var),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Mean(Vec<Var>),
    RowDot(Var, Var),
    SmoothL1Mean(Var, &'a Tensor2),
    Weighted(Vec<(Var, f64)>),
}

struct Node<'a> {
    value: Value<'a>,
    op: Op<'a>,
    /// Whether any gradient can flow into this node.
    needs: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of one scalar output with respect to every node of a tape.
pub struct Grads {
    grads: Vec<Option<Tensor2>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor2> {
        self.grads[v.0].take()
    }
}

fn smooth_l1_grad(d: f64) -> f64 {
    if d.abs() < 1.0 {
        d
    } else {
        d.signum()
    }
}

pub(crate) fn smooth_l1_value(d: f64) -> f64 {
    let a = d.abs();
    if a < 1.0 {
        0.5 * d * d
    } else {
        a - 0.5
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        self.nodes[v.0].value.get()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.shape(), (1, 1), "scalar() on a non-scalar node");
        t[(0, 0)]
    }

    fn inputs_need(&self, op: &Op<'a>) -> bool {
        let n = |v: &Var| self.nodes[v.0].needs;
        match op {
            Op::Leaf => true,
            Op::MatMul(a, b) | Op::MatMulBt(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::ScaleRows(a, b) | Op::RowDot(a, b) => {
                n(a) || n(b)
            }
            Op::PairScore(a, b, _) => n(a) || n(b),
            Op::Scale(x, _)
            | Op::LeakyRelu(x, _)
            | Op::Sigmoid(x)
            | Op::Softplus(x)
            | Op::RowSoftmax(x)
            | Op::SliceRows(x, _)
            | Op::SliceCols(x, _)
            | Op::SmoothL1Mean(x, _) => n(x),
            Op::ConcatCols(vs) | Op::Mean(vs) => vs.iter().any(n),
            Op::Weighted(ts) => ts.iter().any(|(v, _)| n(v)),
        }
    }

    fn push(&mut self, value: Tensor2, op: Op<'a>) -> Var {
        let needs = self.inputs_need(&op);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn borrowed(&mut self, value: &'a Tensor2) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(value),
            op: Op::Leaf,
            needs: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A borrowed input that never receives a gradient.
    pub fn constant(&mut self, value: &'a Tensor2) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(value),
            op: Op::Leaf,
            needs: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// An owned input that never receives a gradient.
    pub fn constant_owned(&mut self, value: Tensor2) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Leaf,
            needs: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = tensor::matmul(self.value(a), self.value(b)).expect("matmul shape");
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`; the usual way to apply a weight stored as `out × in`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let out = tensor::matmul_bt(self.value(a), self.value(b)).expect("matmul_bt shape");
        self.push(out, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).add(self.value(b)).expect("add shape");
        self.push(out, Op::Add(a, b))
    }

    /// Adds the `1 × d` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        assert_eq!(bv.rows(), 1, "add_row bias must be a row");
        assert_eq!(xv.cols(), bv.cols(), "add_row width");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bv.as_slice()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(x, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale(x, s))
    }

    /// Multiplies row `i` of `x` by `s[i]`, where `s` is `n × 1`.
    pub fn scale_rows(&mut self, s: Var, x: Var) -> Var {
        let (sv, xv) = (self.value(s), self.value(x));
        assert_eq!(sv.shape(), (xv.rows(), 1), "scale_rows factor shape");
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let f = sv[(r, 0)];
            out.row_mut(r).iter_mut().for_each(|v| *v *= f);
        }
        self.push(out, Op::ScaleRows(s, x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| tensor::leaky_relu(v, slope));
        self.push(out, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(tensor::sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(tensor::softplus);
        self.push(out, Op::Softplus(x))
    }

    /// `S[i][j] = u[i] + w[i][j] · v[j]` for column vectors `u` (n) and `v` (m),
    /// with `w` all ones when absent.
    pub fn pair_score(&mut self, u: Var, v: Var, prior: Option<&'a Tensor2>) -> Var {
        let (uv, vv) = (self.value(u), self.value(v));
        assert_eq!(uv.cols(), 1, "pair_score u must be a column");
        assert_eq!(vv.cols(), 1, "pair_score v must be a column");
        let (n, m) = (uv.rows(), vv.rows());
        if let Some(w) = prior {
            assert_eq!(w.shape(), (n, m), "pair_score prior shape");
        }
        let mut out = Tensor2::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                let w = prior.map_or(1.0, |w| w[(i, j)]);
                out[(i, j)] = uv[(i, 0)] + w * vv[(j, 0)];
            }
        }
        self.push(out, Op::PairScore(u, v, prior))
    }

    /// Row-wise softmax over all entries.
    pub fn row_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = Tensor2::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&tensor::softmax(xv.row(r)));
        }
        self.push(out, Op::RowSoftmax(x))
    }

    /// Row-wise softmax restricted to entries where `mask` is non-zero.
    ///
    /// Masked entries get weight 0; a row with no admissible entry is all zero.
    pub fn masked_row_softmax(&mut self, x: Var, mask: &Tensor2) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), mask.shape(), "mask shape");
        let mut out = Tensor2::zeros(xv.rows(), xv.cols());
        let mut scratch = Vec::new();
        for r in 0..xv.rows() {
            scratch.clear();
            scratch.extend(
                xv.row(r)
                    .iter()
                    .zip(mask.row(r))
                    .filter(|(_, &m)| m != 0.0)
                    .map(|(&v, _)| v),
            );
            let weights = tensor::softmax(&scratch);
            let mut it = weights.into_iter();
            for (o, &m) in out.row_mut(r).iter_mut().zip(mask.row(r)) {
                if m != 0.0 {
                    *o = it.next().unwrap_or(0.0);
                }
            }
        }
        // Same backward rule as a full softmax: zero-weight entries receive no gradient.
        self.push(out, Op::RowSoftmax(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor2::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat row count");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.rows(), "slice_rows range");
        let data = xv.as_slice()[start * xv.cols()..(start + len) * xv.cols()].to_vec();
        let out = Tensor2::from_vec(len, xv.cols(), data).expect("slice_rows");
        self.push(out, Op::SliceRows(x, start))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols(), "slice_cols range");
        let mut out = Tensor2::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols(x, start))
    }

    /// Element-wise mean of same-shaped nodes, summed left to right.
    pub fn mean(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "mean of nothing");
        let mut out = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            let pv = self.value(p);
            assert_eq!(pv.shape(), out.shape(), "mean shape");
            out.add_assign(pv);
        }
        let out = out.scale(1.0 / parts.len() as f64);
        self.push(out, Op::Mean(parts.to_vec()))
    }

    /// Row-wise dot products of two `n × d` nodes, as `n × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "row_dot shape");
        let vals: Vec<f64> = (0..av.rows()).map(|r| tensor::dot(av.row(r), bv.row(r))).collect();
        self.push(Tensor2::column(&vals), Op::RowDot(a, b))
    }

    /// Mean Smooth-L1 distance between `x` and a constant target, as `1 × 1`.
    pub fn smooth_l1_mean(&mut self, x: Var, target: &'a Tensor2) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), target.shape(), "smooth_l1 shape");
        let total: f64 = xv
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(a, b)| smooth_l1_value(a - b))
            .sum();
        let out = Tensor2::filled(1, 1, total / xv.len().max(1) as f64);
        self.push(out, Op::SmoothL1Mean(x, target))
    }

    /// `Σ cₖ · xₖ` over same-shaped nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "weighted sum of nothing");
        let (first, _) = terms[0];
        let mut out = Tensor2::zeros(self.value(first).rows(), self.value(first).cols());
        for &(v, c) in terms {
            let vv = self.value(v);
            assert_eq!(vv.shape(), out.shape(), "weighted_sum shape");
            for (o, x) in out.as_mut_slice().iter_mut().zip(vv.as_slice()) {
                *o += c * x;
            }
        }
        self.push(out, Op::Weighted(terms.to_vec()))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, output: Var) -> Grads {
        assert_eq!(self.value(output).shape(), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor2>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor2::filled(1, 1, 1.0));
        let needs: Vec<bool> = self.nodes.iter().map(|n| n.needs).collect();
        let accumulate = |grads: &mut [Option<Tensor2>], v: Var, g: Tensor2| {
            if needs[v.0] {
                accumulate(grads, v, g);
            }
        };
        let wants = |v: &Var| needs[v.0];

        for idx in (0..=output.0).rev() {
            if !needs[idx] {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let out = node.value.get();
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if wants(a) {
                        let mut da = Tensor2::zeros(av.rows(), av.cols());
                        // da = g · bᵀ
                        for i in 0..g.rows() {
                            for p in 0..av.cols() {
                                da[(i, p)] = tensor::dot(g.row(i), bv.row(p));
                            }
                        }
                        accumulate(&mut grads, *a, da);
                    }
                    if wants(b) {
                        let mut db = Tensor2::zeros(bv.rows(), bv.cols());
                        matmul_at_acc(av, &g, &mut db);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if wants(a) {
                        let mut da = Tensor2::zeros(av.rows(), av.cols());
                        matmul_acc(&g, bv, &mut da);
                        accumulate(&mut grads, *a, da);
                    }
                    if wants(b) {
                        let mut db = Tensor2::zeros(bv.rows(), bv.cols());
                        matmul_at_acc(&g, av, &mut db);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(x, b) => {
                    let mut db = Tensor2::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, v) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(x, s) => accumulate(&mut grads, *x, g.scale(*s)),
                Op::ScaleRows(s, x) => {
                    let (sv, xv) = (self.value(*s), self.value(*x));
                    let ds: Vec<f64> = (0..xv.rows()).map(|r| tensor::dot(g.row(r), xv.row(r))).collect();
                    let mut dx = g;
                    for r in 0..dx.rows() {
                        let f = sv[(r, 0)];
                        dx.row_mut(r).iter_mut().for_each(|v| *v *= f);
                    }
                    accumulate(&mut grads, *s, Tensor2::column(&ds));
                    accumulate(&mut grads, *x, dx);
                }
                Op::LeakyRelu(x, slope) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        if v < 0.0 {
                            *d *= slope;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = g;
                    for (d, &y) in dx.as_mut_slice().iter_mut().zip(out.as_slice()) {
                        *d *= y * (1.0 - y);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Softplus(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        *d *= tensor::sigmoid(v);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::PairScore(u, v, prior) => {
                    let (n, m) = g.shape();
                    let du: Vec<f64> = (0..n).map(|i| g.row(i).iter().sum()).collect();
                    let mut dv = vec![0.0; m];
                    for i in 0..n {
                        for (j, d) in dv.iter_mut().enumerate() {
                            *d += g[(i, j)] * prior.map_or(1.0, |w| w[(i, j)]);
                        }
                    }
                    accumulate(&mut grads, *u, Tensor2::column(&du));
                    accumulate(&mut grads, *v, Tensor2::column(&dv));
                }
                Op::RowSoftmax(x) => {
                    let mut dx = Tensor2::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let y = out.row(r);
                        let inner = tensor::dot(y, g.row(r));
                        for ((d, &yv), &gv) in dx.row_mut(r).iter_mut().zip(y).zip(g.row(r)) {
                            *d = yv * (gv - inner);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut dp = Tensor2::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads, p, dp);
                    }
                }
                Op::SliceRows(x, start) => {
                    let xv = self.value(*x);
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    let c = xv.cols();
                    dx.as_mut_slice()[start * c..start * c + g.len()].copy_from_slice(g.as_slice());
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols(x, start) => {
                    let xv = self.value(*x);
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Mean(parts) => {
                    let d = g.scale(1.0 / parts.len() as f64);
                    for &p in parts {
                        accumulate(&mut grads, p, d.clone());
                    }
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = bv.clone();
                    let mut db = av.clone();
                    for r in 0..g.rows() {
                        let f = g[(r, 0)];
                        da.row_mut(r).iter_mut().for_each(|v| *v *= f);
                        db.row_mut(r).iter_mut().for_each(|v| *v *= f);
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::SmoothL1Mean(x, target) => {
                    let xv = self.value(*x);
                    let scale = g[(0, 0)] / xv.len().max(1) as f64;
                    let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                    for ((d, &a), &b) in dx.as_mut_slice().iter_mut().zip(xv.as_slice()).zip(target.as_slice()) {
                        *d = scale * smooth_l1_grad(a - b);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Weighted(terms) => {
                    for &(v, c) in terms {
                        accumulate(&mut grads, v, g.scale(c));
                    }
                }
            }
        }
        // Only leaves keep their gradients.
        Grads { grads }
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}
