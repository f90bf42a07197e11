use super::{numel, Result, Scalar, Tensor, TensorError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Assignment of rows to segments. `None` rows are excluded: they receive
/// zero weight in a segment softmax and are skipped by a segment sum.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segments {
    ids: Vec<Option<usize>>,
    count: usize,
}

impl Segments {
    pub fn new(ids: Vec<Option<usize>>, count: usize) -> Result<Self> {
        if let Some(&bad) = ids.iter().flatten().find(|&&s| s >= count) {
            return Err(TensorError::Index {
                op: "segments",
                index: bad,
                bound: count,
            });
        }
        Ok(Segments { ids, count })
    }

    /// Every row of a `rows × cols` matrix is one segment.
    pub fn by_row(rows: usize, cols: usize) -> Self {
        let ids = (0..rows * cols).map(|i| Some(i / cols)).collect();
        Segments { ids, count: rows }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn ids(&self) -> &[Option<usize>] {
        &self.ids
    }
}

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        map_a: Option<Vec<usize>>,
        map_b: Option<Vec<usize>>,
    },
    Affine(Var, F),
    Sigmoid(Var),
    Tanh(Var),
    PRelu(Var, Var),
    ConcatLast(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    Reshape(Var),
    SumAll(Var),
    MeanAll(Var),
    SumLast(Var),
    SegmentSum(Var, Segments),
    SegmentSoftmax(Var, Segments),
    SelectCol(Var, usize),
    Nll {
        p: Var,
        labels: Vec<F>,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Wengert list of recorded operations. Backward walks it in exact reverse
/// recording order, so every input is recorded before its consumers.
#[derive(Debug, Default)]
pub struct Tape<F: Scalar = f32> {
    nodes: Vec<Node<F>>,
}

/// Probability clamp applied before the logs of the negative log-likelihood.
pub const PROB_CLAMP: f64 = 1e-7;

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.value(v).data()[0].as_f64()
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, name: &'static str, op: Op<F>, value: Tensor<F>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        let value = Tensor::new([m, n], out)?;
        self.push("matmul", Op::MatMul(a, b), value, &[a, b])
    }

    fn binary(&mut self, name: &'static str, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(name, av.shape(), bv.shape())?;
        let map_a = index_map(&out_shape, av.shape());
        let map_b = index_map(&out_shape, bv.shape());
        let n = numel(&out_shape);
        let (ad, bd) = (av.data(), bv.data());
        let f = |x: F, y: F| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let out: Vec<F> = (0..n)
            .map(|i| {
                let x = ad[map_a.as_ref().map_or(i, |m| m[i])];
                let y = bd[map_b.as_ref().map_or(i, |m| m[i])];
                f(x, y)
            })
            .collect();
        let value = Tensor::new(out_shape, out)?;
        let op = Op::Binary {
            kind,
            a,
            b,
            map_a,
            map_b,
        };
        self.push(name, op, value, &[a, b])
    }

    /// Elementwise sum with trailing-axis broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", BinaryKind::Div, a, b)
    }

    /// `alpha * x + beta`.
    pub fn affine(&mut self, x: Var, alpha: f64, beta: f64) -> Result<Var> {
        let (al, be) = (F::of(alpha), F::of(beta));
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| al * v + be).collect();
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("affine", Op::Affine(x, al), value, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("sigmoid", Op::Sigmoid(x), value, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = xv.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("tanh", Op::Tanh(x), value, &[x])
    }

    /// Parametric rectifier with one learned slope per channel of the last axis.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(slope));
        let c = xv.cols();
        if sv.numel() != c {
            return Err(TensorError::Shape {
                op: "prelu",
                lhs: xv.shape().to_vec(),
                rhs: sv.shape().to_vec(),
            });
        }
        let s = sv.data();
        let out = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if v > F::zero() { v } else { s[i % c] * v })
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("prelu", Op::PRelu(x, slope), value, &[x, slope])
    }

    /// Concatenates along the last axis; leading shapes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).shape().to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(TensorError::Shape {
                    op: "concat_last",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let rows = numel(lead);
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        self.push("concat_last", Op::ConcatLast(parts.to_vec()), value, parts)
    }

    /// Stacks along the first axis; trailing shapes must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).shape().to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != first.len() || v.shape()[1..] != first[1..] {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    lhs: first.clone(),
                    rhs: v.shape().to_vec(),
                });
            }
            rows += v.shape()[0];
            out.extend_from_slice(v.data());
        }
        let mut shape = first.clone();
        shape[0] = rows;
        let value = Tensor::new(shape, out)?;
        self.push("concat_rows", Op::ConcatRows(parts.to_vec()), value, parts)
    }

    /// Row lookup `table[idx[r], :]`, the embedding lookup.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(TensorError::Shape {
                op: "gather",
                lhs: tv.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let (v, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            if i >= v {
                return Err(TensorError::Index {
                    op: "gather",
                    index: i,
                    bound: v,
                });
            }
            out.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let value = Tensor::new([idx.len(), d], out)?;
        self.push("gather", Op::Gather(table, idx.to_vec()), value, &[table])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if numel(shape) != xv.numel() {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: xv.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = Tensor::new(shape.to_vec(), xv.data().to_vec())?;
        self.push("reshape", Op::Reshape(x), value, &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push("sum_all", Op::SumAll(x), Tensor::scalar(s), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s: F = xv.data().iter().copied().sum();
        let m = s / F::of(xv.numel() as f64);
        self.push("mean_all", Op::MeanAll(x), Tensor::scalar(m), &[x])
    }

    /// Sums the last axis, keeping it with extent 1.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let out: Vec<F> = xv.data().chunks(c).map(|r| r.iter().copied().sum()).collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = 1;
        let value = Tensor::new(shape, out)?;
        self.push("sum_last", Op::SumLast(x), value, &[x])
    }

    /// Sums rows of `x` into their segments; excluded rows are dropped.
    pub fn segment_sum(&mut self, x: Var, seg: &Segments) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != seg.len() {
            return Err(TensorError::Shape {
                op: "segment_sum",
                lhs: xv.shape().to_vec(),
                rhs: vec![seg.len()],
            });
        }
        let w = xv.numel() / xv.rows().max(1);
        let mut out = vec![F::zero(); seg.count() * w];
        for (i, id) in seg.ids().iter().enumerate() {
            if let Some(s) = *id {
                let src = &xv.data()[i * w..(i + 1) * w];
                for (o, &v) in out[s * w..(s + 1) * w].iter_mut().zip(src) {
                    *o = *o + v;
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = seg.count();
        let value = Tensor::new(shape, out)?;
        self.push("segment_sum", Op::SegmentSum(x, seg.clone()), value, &[x])
    }

    /// Softmax of one score per row within each segment, computed with
    /// per-segment max subtraction. Excluded rows get exactly zero.
    pub fn segment_softmax(&mut self, x: Var, seg: &Segments) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() != seg.len() {
            return Err(TensorError::Shape {
                op: "segment_softmax",
                lhs: xv.shape().to_vec(),
                rhs: vec![seg.len()],
            });
        }
        let out = segment_softmax_raw(xv.data(), seg)?;
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("segment_softmax", Op::SegmentSoftmax(x, seg.clone()), value, &[x])
    }

    /// Row-wise softmax of `scores[batch × T]` restricted to entries where
    /// `mask` is 1. Fully masked rows are an error.
    pub fn masked_softmax(&mut self, scores: Var, mask: &Tensor<F>) -> Result<Var> {
        let sv = self.value(scores);
        if sv.shape() != mask.shape() || sv.shape().len() != 2 {
            return Err(TensorError::Shape {
                op: "masked_softmax",
                lhs: sv.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let cols = sv.shape()[1];
        let mut ids = Vec::with_capacity(mask.numel());
        for (i, &m) in mask.data().iter().enumerate() {
            if m == F::one() {
                ids.push(Some(i / cols));
            } else if m == F::zero() {
                ids.push(None);
            } else {
                return Err(TensorError::InvalidMask);
            }
        }
        let seg = Segments::new(ids, sv.shape()[0])?;
        self.segment_softmax(scores, &seg)
    }

    /// Softmax over the last axis of a matrix.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let seg = Segments::by_row(xv.numel() / xv.cols(), xv.cols());
        self.segment_softmax(x, &seg)
    }

    pub fn select_col(&mut self, x: Var, col: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if xv.shape().len() != 2 || col >= c {
            return Err(TensorError::Index {
                op: "select_col",
                index: col,
                bound: c,
            });
        }
        let out: Vec<F> = xv.data().chunks(c).map(|r| r[col]).collect();
        let value = Tensor::new([xv.shape()[0], 1], out)?;
        self.push("select_col", Op::SelectCol(x, col), value, &[x])
    }

    /// Mean binary negative log-likelihood of probabilities `p` against
    /// 0/1 `labels`, with `p` clamped to `[1e-7, 1 - 1e-7]` before the logs.
    pub fn nll(&mut self, p: Var, labels: &[F]) -> Result<Var> {
        let pv = self.value(p);
        if pv.numel() != labels.len() {
            return Err(TensorError::Shape {
                op: "nll",
                lhs: pv.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (lo, hi) = (F::of(PROB_CLAMP), F::one() - F::of(PROB_CLAMP));
        let n = F::of(labels.len() as f64);
        let total: F = pv
            .data()
            .iter()
            .zip(labels)
            .map(|(&p, &y)| {
                let pc = p.max(lo).min(hi);
                y * pc.ln() + (F::one() - y) * (-pc).ln_1p()
            })
            .sum();
        let value = Tensor::scalar(-total / n);
        let op = Op::Nll {
            p,
            labels: labels.to_vec(),
        };
        self.push("nll", op, value, &[p])
    }

    /// Reverse pass from a scalar `loss`. Leaves that did not participate
    /// report a zero gradient through [`Gradients::wrt`].
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if needs(*a) {
                    let acc = slot(grads, *a, m * k);
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let br = &bv.data()[p * n..(p + 1) * n];
                            let dot: F = gr.iter().zip(br).map(|(&x, &y)| x * y).sum();
                            acc[i * k + p] = acc[i * k + p] + dot;
                        }
                    }
                }
                if needs(*b) {
                    let acc = slot(grads, *b, k * n);
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let a_ip = av.data()[i * k + p];
                            let row = &mut acc[p * n..(p + 1) * n];
                            for (o, &gv) in row.iter_mut().zip(gr) {
                                *o = *o + a_ip * gv;
                            }
                        }
                    }
                }
            }
            Op::Binary {
                kind,
                a,
                b,
                map_a,
                map_b,
            } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let ia = |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
                let ib = |i: usize| map_b.as_ref().map_or(i, |m| m[i]);
                if needs(*a) {
                    let acc = slot(grads, *a, ad.len());
                    for (i, &gv) in g.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add | BinaryKind::Sub => gv,
                            BinaryKind::Mul => gv * bd[ib(i)],
                            BinaryKind::Div => gv / bd[ib(i)],
                        };
                        acc[ia(i)] = acc[ia(i)] + d;
                    }
                }
                if needs(*b) {
                    let acc = slot(grads, *b, bd.len());
                    for (i, &gv) in g.iter().enumerate() {
                        let d = match kind {
                            BinaryKind::Add => gv,
                            BinaryKind::Sub => -gv,
                            BinaryKind::Mul => gv * ad[ia(i)],
                            BinaryKind::Div => {
                                let y = bd[ib(i)];
                                -gv * ad[ia(i)] / (y * y)
                            }
                        };
                        acc[ib(i)] = acc[ib(i)] + d;
                    }
                }
            }
            Op::Affine(x, alpha) => {
                let acc = slot(grads, *x, g.len());
                for (o, &gv) in acc.iter_mut().zip(g) {
                    *o = *o + *alpha * gv;
                }
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let acc = slot(grads, *x, g.len());
                for i in 0..g.len() {
                    acc[i] = acc[i] + g[i] * y[i] * (F::one() - y[i]);
                }
            }
            Op::Tanh(x) => {
                let y = node.value.data();
                let acc = slot(grads, *x, g.len());
                for i in 0..g.len() {
                    acc[i] = acc[i] + g[i] * (F::one() - y[i] * y[i]);
                }
            }
            Op::PRelu(x, slope) => {
                let xd = self.value(*x).data();
                let sd = self.value(*slope).data();
                let c = sd.len();
                if needs(*x) {
                    let acc = slot(grads, *x, xd.len());
                    for i in 0..g.len() {
                        let d = if xd[i] > F::zero() { g[i] } else { g[i] * sd[i % c] };
                        acc[i] = acc[i] + d;
                    }
                }
                if needs(*slope) {
                    let acc = slot(grads, *slope, c);
                    for i in 0..g.len() {
                        if xd[i] <= F::zero() {
                            acc[i % c] = acc[i % c] + g[i] * xd[i];
                        }
                    }
                }
            }
            Op::ConcatLast(parts) => {
                let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for (p, &w) in parts.iter().zip(&widths) {
                    if needs(*p) {
                        let acc = slot(grads, *p, rows * w);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            for (o, &gv) in acc[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *o = *o + gv;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if needs(*p) {
                        let acc = slot(grads, *p, n);
                        for (o, &gv) in acc.iter_mut().zip(&g[offset..offset + n]) {
                            *o = *o + gv;
                        }
                    }
                    offset += n;
                }
            }
            Op::Gather(table, idx) => {
                let tv = self.value(*table);
                let d = tv.shape()[1];
                let acc = slot(grads, *table, tv.numel());
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..d {
                        acc[i * d + c] = acc[i * d + c] + g[r * d + c];
                    }
                }
            }
            Op::Reshape(x) => {
                let acc = slot(grads, *x, g.len());
                for (o, &gv) in acc.iter_mut().zip(g) {
                    *o = *o + gv;
                }
            }
            Op::SumAll(x) | Op::MeanAll(x) => {
                let n = self.value(*x).numel();
                let scale = match node.op {
                    Op::MeanAll(_) => g[0] / F::of(n as f64),
                    _ => g[0],
                };
                let acc = slot(grads, *x, n);
                for o in acc.iter_mut() {
                    *o = *o + scale;
                }
            }
            Op::SumLast(x) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let acc = slot(grads, *x, xv.numel());
                for (i, o) in acc.iter_mut().enumerate() {
                    *o = *o + g[i / c];
                }
            }
            Op::SegmentSum(x, seg) => {
                let xv = self.value(*x);
                let w = xv.numel() / seg.len().max(1);
                let acc = slot(grads, *x, xv.numel());
                for (i, id) in seg.ids().iter().enumerate() {
                    if let Some(s) = *id {
                        for c in 0..w {
                            acc[i * w + c] = acc[i * w + c] + g[s * w + c];
                        }
                    }
                }
            }
            Op::SegmentSoftmax(x, seg) => {
                let y = node.value.data();
                let mut dots = vec![F::zero(); seg.count()];
                for (i, id) in seg.ids().iter().enumerate() {
                    if let Some(s) = *id {
                        dots[s] = dots[s] + y[i] * g[i];
                    }
                }
                let acc = slot(grads, *x, y.len());
                for (i, id) in seg.ids().iter().enumerate() {
                    if let Some(s) = *id {
                        acc[i] = acc[i] + y[i] * (g[i] - dots[s]);
                    }
                }
            }
            Op::SelectCol(x, col) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let acc = slot(grads, *x, xv.numel());
                for (r, &gv) in g.iter().enumerate() {
                    acc[r * c + col] = acc[r * c + col] + gv;
                }
            }
            Op::Nll { p, labels } => {
                let pd = self.value(*p).data();
                let (lo, hi) = (F::of(PROB_CLAMP), F::one() - F::of(PROB_CLAMP));
                let n = F::of(labels.len() as f64);
                let acc = slot(grads, *p, pd.len());
                for i in 0..pd.len() {
                    let (pi, y) = (pd[i], labels[i]);
                    if pi < lo || pi > hi {
                        continue;
                    }
                    let d = -(y / pi - (F::one() - y) / (F::one() - pi)) / n;
                    acc[i] = acc[i] + g[0] * d;
                }
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<Tensor<F>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("gradient matches shape"))
    }

    /// Gradient of `v`, zero-filled if `v` did not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor<F> {
        self.get(v).unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }
}

fn slot<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, n: usize) -> &mut [F] {
    grads[v.0].get_or_insert_with(|| vec![F::zero(); n])
}

fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub(crate) fn matmul_raw<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

fn segment_softmax_raw<F: Scalar>(x: &[F], seg: &Segments) -> Result<Vec<F>> {
    let mut maxv = vec![F::neg_infinity(); seg.count()];
    let mut members = vec![0usize; seg.count()];
    for (i, id) in seg.ids().iter().enumerate() {
        if let Some(s) = *id {
            maxv[s] = maxv[s].max(x[i]);
            members[s] += 1;
        }
    }
    if let Some(row) = members.iter().position(|&c| c == 0) {
        return Err(TensorError::DegenerateRow { row });
    }
    let mut out = vec![F::zero(); x.len()];
    let mut sums = vec![F::zero(); seg.count()];
    for (i, id) in seg.ids().iter().enumerate() {
        if let Some(s) = *id {
            out[i] = (x[i] - maxv[s]).exp();
            sums[s] = sums[s] + out[i];
        }
    }
    for (i, id) in seg.ids().iter().enumerate() {
        if let Some(s) = *id {
            out[i] = out[i] / sums[s];
        }
    }
    Ok(out)
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for k in 0..rank {
        let da = if k + a.len() >= rank { a[k + a.len() - rank] } else { 1 };
        let db = if k + b.len() >= rank { b[k + b.len() - rank] } else { 1 };
        out[k] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::Shape {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Flat index into an operand of shape `inp` for every element of `out`,
/// or `None` when no broadcasting is involved.
fn index_map(out: &[usize], inp: &[usize]) -> Option<Vec<usize>> {
    if out == inp {
        return None;
    }
    let rank = out.len();
    let offset = rank - inp.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for k in (0..inp.len()).rev() {
        strides[offset + k] = if inp[k] == 1 { 0 } else { s };
        s *= inp[k];
    }
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let mut counter = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..n {
        map.push(pos);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            pos += strides[ax];
            if counter[ax] < out[ax] {
                break;
            }
            pos -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    Some(map)
}
