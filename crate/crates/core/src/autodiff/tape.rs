use std::sync::Arc;

use super::tensor::{dims2, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentMode {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Maximum(Var, Var),
    ScalarMul(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Powf(Var, f64),
    SoftmaxRows(Var),
    Concat(Vec<Var>, usize),
    Slice { src: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    GatherRows(Var, Arc<[usize]>),
    Segment {
        src: Var,
        ids: Arc<[usize]>,
        mode: SegmentMode,
        // Mean: per-segment counts. Max: winning source row per output
        // element, usize::MAX for empty segments.
        aux: Vec<usize>,
    },
    Faulty(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape.
///
/// Nodes are appended in evaluation order, so parents always precede their
/// children and a reverse sweep is a valid topological order. Leaf gradients
/// accumulate across [`Tape::backward`] calls until [`Tape::zero_grads`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

struct Bcast {
    rows: usize,
    cols: usize,
    a: (usize, usize),
    b: (usize, usize),
    shape: Vec<usize>,
}

impl Bcast {
    fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        let da = dims2(a);
        let db = dims2(b);
        let join = |x: usize, y: usize| -> Option<usize> {
            if x == y {
                Some(x)
            } else if x == 1 {
                Some(y)
            } else if y == 1 {
                Some(x)
            } else {
                None
            }
        };
        let (rows, cols) = match (join(da.0, db.0), join(da.1, db.1)) {
            (Some(r), Some(c)) => (r, c),
            _ => return Err(Error::shape(op, a, b)),
        };
        let shape = match a.len().max(b.len()) {
            0 => vec![],
            1 => vec![cols],
            _ => vec![rows, cols],
        };
        Ok(Self {
            rows,
            cols,
            a: da,
            b: db,
            shape,
        })
    }

    #[inline]
    fn index(dims: (usize, usize), r: usize, c: usize) -> usize {
        let rr = if dims.0 == 1 { 0 } else { r };
        let cc = if dims.1 == 1 { 0 } else { c };
        rr * dims.1 + cc
    }

    fn same(&self) -> bool {
        self.a == self.b
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grads(&mut self) {
        self.leaf_grads.clear();
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let bc = Bcast::new(name, self.shape(a), self.shape(b))?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data: Vec<f64> = if bc.same() {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = Vec::with_capacity(bc.rows * bc.cols);
            for r in 0..bc.rows {
                for c in 0..bc.cols {
                    out.push(f(
                        av[Bcast::index(bc.a, r, c)],
                        bv[Bcast::index(bc.b, r, c)],
                    ));
                }
            }
            out
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(bc.shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("maximum", a, b, |x, y| if x >= y { x } else { y }, Op::Maximum(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn scalar_mul(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::ScalarMul(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        self.unary(a, |x| x.powf(p), Op::Powf(a, p))
    }

    /// Identity forward with a deliberately wrong (doubled) backward rule.
    /// Exists only so the gradient-check harness can be shown to fail.
    #[doc(hidden)]
    pub fn faulty_identity(&mut self, a: Var) -> Var {
        self.unary(a, |x| x, Op::Faulty(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; n * m];
        matmul_into(av, bv, &mut out, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), rg))
    }

    /// Softmax along the last axis of each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (rows, cols) = t.dims2();
        let mut out = t.data().to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    /// Concatenate rank-2 tensors along `axis` (0 = rows, 1 = columns), or
    /// rank-1 tensors along axis 0.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let s0 = self.shape(first).to_vec();
        let rank = s0.len();
        if rank == 0 || axis >= rank {
            return Err(Error::shape("concat", &s0, &[axis]));
        }
        for &p in &parts[1..] {
            let sp = self.shape(p);
            let ok = sp.len() == rank && (0..rank).all(|d| d == axis || sp[d] == s0[d]);
            if !ok {
                return Err(Error::shape("concat", &s0, sp));
            }
        }
        let (shape, data) = if rank == 1 || axis == 0 {
            let mut data = Vec::new();
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            let mut shape = s0.clone();
            shape[0] = parts.iter().map(|&p| self.shape(p)[0]).sum();
            (shape, data)
        } else {
            let rows = s0[0];
            let total: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            (vec![rows, total], data)
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// `len` consecutive rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::shape("slice", &s, &[axis, start, len]));
        }
        let t = self.value(a);
        let (shape, data) = if s.len() == 1 {
            (vec![len], t.data()[start..start + len].to_vec())
        } else if axis == 0 {
            let c = s[1];
            (vec![len, c], t.data()[start * c..(start + len) * c].to_vec())
        } else {
            let mut data = Vec::with_capacity(s[0] * len);
            for r in 0..s[0] {
                data.extend_from_slice(&t.row(r)[start..start + len]);
            }
            (vec![s[0], len], data)
        };
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice { src: a, axis, start }, rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Per-row sum, shape `[rows, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (rows, cols) = t.dims2();
        let data = (0..rows)
            .map(|r| t.data()[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        let value = Tensor::new(vec![rows, 1], data).expect("rows x 1");
        let rg = self.rg(a);
        self.push(value, Op::RowSum(a), rg)
    }

    /// Rows of `a` picked by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &Arc<[usize]>) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("gather_rows", &s, &[idx.len()]));
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * s[1]);
        for &i in idx.iter() {
            if i >= s[0] {
                return Err(Error::InvalidArgument(format!(
                    "gather_rows: index {i} out of range for {} rows",
                    s[0]
                )));
            }
            data.extend_from_slice(t.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(vec![idx.len(), s[1]], data)?,
            Op::GatherRows(a, idx.clone()),
            rg,
        ))
    }

    /// Reduce rows of `values` into `num_segments` buckets given by `ids`.
    ///
    /// Empty segments produce zeros for every mode. For `Max`, the gradient
    /// of each output element goes to the first row attaining the maximum.
    pub fn segment_reduce(
        &mut self,
        values: Var,
        ids: &Arc<[usize]>,
        num_segments: usize,
        mode: SegmentMode,
    ) -> Result<Var> {
        let s = self.shape(values).to_vec();
        if s.len() != 2 || s[0] != ids.len() {
            return Err(Error::shape("segment_reduce", &s, &[ids.len()]));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= num_segments) {
            return Err(Error::InvalidArgument(format!(
                "segment_reduce: id {bad} out of range for {num_segments} segments"
            )));
        }
        let d = s[1];
        let t = self.value(values);
        let mut out = vec![0.0; num_segments * d];
        let aux = match mode {
            SegmentMode::Sum | SegmentMode::Mean => {
                let mut counts = vec![0usize; num_segments];
                for (r, &g) in ids.iter().enumerate() {
                    counts[g] += 1;
                    let dst = &mut out[g * d..(g + 1) * d];
                    for (o, &x) in dst.iter_mut().zip(t.row(r)) {
                        *o += x;
                    }
                }
                if mode == SegmentMode::Mean {
                    for (g, &n) in counts.iter().enumerate() {
                        if n > 0 {
                            for o in &mut out[g * d..(g + 1) * d] {
                                *o /= n as f64;
                            }
                        }
                    }
                }
                counts
            }
            SegmentMode::Max => {
                let mut arg = vec![usize::MAX; num_segments * d];
                for (r, &g) in ids.iter().enumerate() {
                    for (c, &x) in t.row(r).iter().enumerate() {
                        let k = g * d + c;
                        if arg[k] == usize::MAX || x > out[k] {
                            out[k] = x;
                            arg[k] = r;
                        }
                    }
                }
                arg
            }
        };
        let rg = self.rg(values);
        Ok(self.push(
            Tensor::new(vec![num_segments, d], out)?,
            Op::Segment {
                src: values,
                ids: ids.clone(),
                mode,
                aux,
            },
            rg,
        ))
    }

    /// Reverse sweep from a single-element `loss`; adds into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ls = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {ls:?}"
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, x)| *a += x),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let val = |v: Var| &nodes[v.0].value;
        let wants = |v: Var| nodes[v.0].requires_grad;

        // Borrow-free accumulation into a parent's gradient buffer.
        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        match &nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let bc = Bcast::new("add", val(*a).shape(), val(*b).shape()).expect("checked");
                for (v, s, dims) in [(*a, 1.0, bc.a), (*b, sign, bc.b)] {
                    if !wants(v) {
                        continue;
                    }
                    let ga = acc(grads, v, val(v).len());
                    for r in 0..bc.rows {
                        for c in 0..bc.cols {
                            ga[Bcast::index(dims, r, c)] += s * g[r * bc.cols + c];
                        }
                    }
                }
            }
            Op::Mul(a, b) | Op::Div(a, b) | Op::Maximum(a, b) => {
                let bc = Bcast::new("mul", val(*a).shape(), val(*b).shape()).expect("checked");
                let (av, bv) = (val(*a).data(), val(*b).data());
                let op = &nodes[i].op;
                // Local partials (d/da, d/db) at one broadcast position.
                let partial = |x: f64, y: f64| -> (f64, f64) {
                    match op {
                        Op::Mul(..) => (y, x),
                        Op::Div(..) => (1.0 / y, -x / (y * y)),
                        _ => {
                            if x >= y {
                                (1.0, 0.0)
                            } else {
                                (0.0, 1.0)
                            }
                        }
                    }
                };
                let (wa, wb) = (wants(*a), wants(*b));
                let mut ga = wa.then(|| grads[a.0].take().unwrap_or_else(|| vec![0.0; av.len()]));
                let mut gb = wb.then(|| grads[b.0].take().unwrap_or_else(|| vec![0.0; bv.len()]));
                for r in 0..bc.rows {
                    for c in 0..bc.cols {
                        let ia = Bcast::index(bc.a, r, c);
                        let ib = Bcast::index(bc.b, r, c);
                        let (pa, pb) = partial(av[ia], bv[ib]);
                        let go = g[r * bc.cols + c];
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += go * pa;
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] += go * pb;
                        }
                    }
                }
                if a == b {
                    // Same parent on both sides: merge.
                    if let (Some(mut x), Some(y)) = (ga.take(), gb.take()) {
                        x.iter_mut().zip(&y).for_each(|(p, q)| *p += q);
                        grads[a.0] = Some(x);
                    }
                } else {
                    if let Some(x) = ga {
                        grads[a.0] = Some(x);
                    }
                    if let Some(y) = gb {
                        grads[b.0] = Some(y);
                    }
                }
            }
            Op::ScalarMul(a, s) => {
                let ga = acc(grads, *a, g.len());
                ga.iter_mut().zip(g).for_each(|(p, &x)| *p += s * x);
            }
            Op::AddScalar(a) => {
                let ga = acc(grads, *a, g.len());
                ga.iter_mut().zip(g).for_each(|(p, &x)| *p += x);
            }
            Op::Faulty(a) => {
                let ga = acc(grads, *a, g.len());
                ga.iter_mut().zip(g).for_each(|(p, &x)| *p += 2.0 * x);
            }
            Op::Relu(a) | Op::LeakyRelu(a, _) | Op::Abs(a) | Op::Powf(a, _) | Op::Exp(a)
            | Op::Log(a) | Op::Sigmoid(a) | Op::Tanh(a) => {
                let xs = val(*a).data();
                let ys = out.data();
                let op = &nodes[i].op;
                let ga = acc(grads, *a, g.len());
                for k in 0..g.len() {
                    let (x, y) = (xs[k], ys[k]);
                    let d = match op {
                        Op::Relu(_) => (x > 0.0) as u8 as f64,
                        Op::LeakyRelu(_, s) => {
                            if x > 0.0 {
                                1.0
                            } else {
                                *s
                            }
                        }
                        Op::Abs(_) => {
                            if x > 0.0 {
                                1.0
                            } else if x < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        Op::Powf(_, p) => p * x.powf(p - 1.0),
                        Op::Exp(_) => y,
                        Op::Log(_) => 1.0 / x,
                        Op::Sigmoid(_) => y * (1.0 - y),
                        _ => 1.0 - y * y,
                    };
                    ga[k] += g[k] * d;
                }
            }
            Op::MatMul(a, b) => {
                let (n, k) = val(*a).dims2();
                let m = val(*b).cols();
                if wants(*a) {
                    // dA = G · Bᵀ
                    let bv = val(*b).data();
                    let ga = acc(grads, *a, n * k);
                    for r in 0..n {
                        let grow = &g[r * m..(r + 1) * m];
                        for kk in 0..k {
                            let brow = &bv[kk * m..(kk + 1) * m];
                            let mut s = 0.0;
                            for j in 0..m {
                                s += grow[j] * brow[j];
                            }
                            ga[r * k + kk] += s;
                        }
                    }
                }
                if wants(*b) {
                    // dB = Aᵀ · G
                    let av = val(*a).data();
                    let gb = acc(grads, *b, k * m);
                    for r in 0..n {
                        let grow = &g[r * m..(r + 1) * m];
                        for kk in 0..k {
                            let x = av[r * k + kk];
                            if x == 0.0 {
                                continue;
                            }
                            let dst = &mut gb[kk * m..(kk + 1) * m];
                            for j in 0..m {
                                dst[j] += x * grow[j];
                            }
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let (rows, cols) = out.dims2();
                let y = out.data();
                let ga = acc(grads, *a, g.len());
                for r in 0..rows {
                    let sl = r * cols..(r + 1) * cols;
                    let dot: f64 = g[sl.clone()].iter().zip(&y[sl.clone()]).map(|(p, q)| p * q).sum();
                    for k in sl {
                        ga[k] += y[k] * (g[k] - dot);
                    }
                }
            }
            Op::Concat(parts, axis) => {
                let rank = out.shape().len();
                if rank == 1 || *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let len = val(p).len();
                        if wants(p) {
                            let gp = acc(grads, p, len);
                            gp.iter_mut().zip(&g[off..off + len]).for_each(|(x, y)| *x += y);
                        }
                        off += len;
                    }
                } else {
                    let (rows, total) = out.dims2();
                    let mut off = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        if wants(p) {
                            let gp = acc(grads, p, rows * w);
                            for r in 0..rows {
                                for c in 0..w {
                                    gp[r * w + c] += g[r * total + off + c];
                                }
                            }
                        }
                        off += w;
                    }
                }
            }
            Op::Slice { src, axis, start } => {
                let s = val(*src).shape().to_vec();
                let ga = acc(grads, *src, val(*src).len());
                if s.len() == 1 {
                    for (k, &x) in g.iter().enumerate() {
                        ga[start + k] += x;
                    }
                } else if *axis == 0 {
                    let base = start * s[1];
                    for (k, &x) in g.iter().enumerate() {
                        ga[base + k] += x;
                    }
                } else {
                    let len = out.cols();
                    for r in 0..s[0] {
                        for c in 0..len {
                            ga[r * s[1] + start + c] += g[r * len + c];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                let ga = acc(grads, *a, n);
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                let ga = acc(grads, *a, n);
                let s = g[0] / n as f64;
                ga.iter_mut().for_each(|x| *x += s);
            }
            Op::RowSum(a) => {
                let (rows, cols) = val(*a).dims2();
                let ga = acc(grads, *a, rows * cols);
                for r in 0..rows {
                    for c in 0..cols {
                        ga[r * cols + c] += g[r];
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                let (rows, d) = val(*a).dims2();
                let ga = acc(grads, *a, rows * d);
                for (k, &src) in idx.iter().enumerate() {
                    let dst = &mut ga[src * d..(src + 1) * d];
                    for (x, y) in dst.iter_mut().zip(&g[k * d..(k + 1) * d]) {
                        *x += y;
                    }
                }
            }
            Op::Segment { src, ids, mode, aux } => {
                let (rows, d) = val(*src).dims2();
                let ga = acc(grads, *src, rows * d);
                match mode {
                    SegmentMode::Sum | SegmentMode::Mean => {
                        for (r, &s) in ids.iter().enumerate() {
                            let scale = if *mode == SegmentMode::Mean {
                                1.0 / aux[s] as f64
                            } else {
                                1.0
                            };
                            for c in 0..d {
                                ga[r * d + c] += scale * g[s * d + c];
                            }
                        }
                    }
                    SegmentMode::Max => {
                        for (k, &r) in aux.iter().enumerate() {
                            if r != usize::MAX {
                                ga[r * d + k % d] += g[k];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for r in 0..n {
        let orow = &mut out[r * m..(r + 1) * m];
        for kk in 0..k {
            let x = a[r * k + kk];
            if x == 0.0 {
                continue;
            }
            let brow = &b[kk * m..(kk + 1) * m];
            for j in 0..m {
                orow[j] += x * brow[j];
            }
        }
    }
}
