//! Append-only operation tape with reverse-mode accumulation.
//!
//! Parameters live in a [`ParamStore`]; a [`Tape`] borrows the store, reads
//! parameters (or single rows of embedding tables) as leaves and records
//! every operation in evaluation order. [`Tape::backward`] walks the records
//! once in reverse and returns dense gradients for every stored parameter.

use super::special::{digamma, lgamma, trigamma};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Rounds every value to the nearest 32-bit float.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.values {
            for x in v.data_mut() {
                *x = *x as f32 as f64;
            }
        }
    }
}

/// Dense gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            grads: store
                .values
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` into `self` coordinate by coordinate.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for x in g.data_mut() {
                *x *= factor;
            }
        }
    }
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Rows(ParamId, Vec<usize>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Broadcast(Var),
    MatVec(Var, Var),
    MatMul(Var, Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    MinOf(Vec<Var>),
    Softmax(Var),
    Mean(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    L1(Var),
    L2(Var),
    Lgamma(Var),
    Digamma(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn constant_vector(&mut self, data: Vec<f64>) -> Var {
        self.constant(Tensor::vector(data))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.get(id).clone();
        self.push(value, Op::Param(id))
    }

    /// Row `row` of a matrix parameter, as a vector.
    pub fn param_row(&mut self, id: ParamId, row: usize) -> Result<Var> {
        let table = self.store.get(id);
        if table.shape().len() != 2 || row >= table.rows() {
            return Err(Error::IdOutOfRange {
                kind: "row",
                id: row,
                size: table.rows(),
            });
        }
        let value = Tensor::vector(table.row(row).to_vec());
        Ok(self.push(value, Op::Rows(id, vec![row])))
    }

    /// Selected rows of a matrix parameter, stacked as a matrix.
    pub fn param_rows(&mut self, id: ParamId, rows: &[usize]) -> Result<Var> {
        let table = self.store.get(id);
        let cols = table.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if table.shape().len() != 2 || r >= table.rows() {
                return Err(Error::IdOutOfRange {
                    kind: "row",
                    id: r,
                    size: table.rows(),
                });
            }
            data.extend_from_slice(table.row(r));
        }
        let value = Tensor::matrix(rows.len(), cols, data)?;
        Ok(self.push(value, Op::Rows(id, rows.to_vec())))
    }

    fn zip_with(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op_name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, op))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().contains(&0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: "division by zero".into(),
            });
        }
        self.zip_with("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| c * x, Op::Scale(a, c))
    }

    /// Adds a constant.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x + c, Op::Shift(a))
    }

    /// Repeats a scalar into a vector of length `n`.
    pub fn broadcast(&mut self, s: Var, n: usize) -> Result<Var> {
        let t = self.value(s);
        if t.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                lhs: t.shape().to_vec(),
                rhs: vec![n],
            });
        }
        let value = Tensor::vector(vec![t.item(); n]);
        Ok(self.push(value, Op::Broadcast(s)))
    }

    /// Matrix `[r, c]` times vector `[c]`.
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.shape().len() != 2 || tv.shape().len() != 1 || tm.cols() != tv.len() {
            return Err(shape_err("matvec", tm, tv));
        }
        let x = tv.data();
        let data = (0..tm.rows())
            .map(|i| tm.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        Ok(self.push(Tensor::vector(data), Op::MatVec(m, v)))
    }

    /// Matrix `[m, k]` times matrix `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = ta.data()[i * k + p];
                for j in 0..n {
                    data[i * n + j] += aip * tb.data()[p * n + j];
                }
            }
        }
        let value = Tensor::matrix(m, n, data)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Concatenates scalars and vectors into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() > 1 {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: t.shape().to_vec(),
                    rhs: vec![],
                });
            }
            data.extend_from_slice(t.data());
        }
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec())))
    }

    /// Contiguous sub-vector `[start, start + len)`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 1 || start + len > t.len() {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: t.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let value = Tensor::vector(t.data()[start..start + len].to_vec());
        Ok(self.push(value, Op::Slice(a, start)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x.is_nan() || x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: "argument must be positive".into(),
            });
        }
        Ok(self.map(a, f64::ln, Op::Log(a)))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, f64::abs, Op::Abs(a))
    }

    /// Clamps into `[lo, hi]`; the adjoint is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Coordinate-wise minimum over equally shaped inputs. On ties the
    /// earliest input wins, both in value and in gradient routing.
    pub fn min_of(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyDisjuncts)?;
        let mut out = self.value(first).clone();
        for &p in &parts[1..] {
            let t = self.value(p);
            if t.shape() != out.shape() {
                return Err(shape_err("min_of", &out, t));
            }
            for (o, &x) in out.data_mut().iter_mut().zip(t.data()) {
                if x < *o {
                    *o = x;
                }
            }
        }
        Ok(self.push(out, Op::MinOf(parts.to_vec())))
    }

    /// Softmax over the entries of a vector.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let max = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data().iter().map(|&x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let value = Tensor::new(t.shape().to_vec(), exps.iter().map(|e| e / total).collect())
            .expect("same shape");
        self.push(value, Op::Softmax(a))
    }

    /// Element-wise mean of equally shaped inputs.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyDisjuncts)?;
        let mut out = self.value(first).clone();
        for &p in &parts[1..] {
            let t = self.value(p);
            if t.shape() != out.shape() {
                return Err(shape_err("mean", &out, t));
            }
            for (o, &x) in out.data_mut().iter_mut().zip(t.data()) {
                *o += x;
            }
        }
        let n = parts.len() as f64;
        for o in out.data_mut() {
            *o /= n;
        }
        Ok(self.push(out, Op::Mean(parts.to_vec())))
    }

    /// Column means of a matrix.
    pub fn mean_rows(&mut self, m: Var) -> Result<Var> {
        let t = self.value(m);
        if t.shape().len() != 2 || t.rows() == 0 {
            return Err(Error::ShapeMismatch {
                op: "mean_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            for (o, x) in out.iter_mut().zip(t.row(i)) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= rows as f64;
        }
        Ok(self.push(Tensor::vector(out), Op::MeanRows(m)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn l1_norm(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x.abs()).sum();
        self.push(Tensor::scalar(s), Op::L1(a))
    }

    pub fn l2_norm(&mut self, a: Var) -> Var {
        let s = self
            .value(a)
            .data()
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        self.push(Tensor::scalar(s), Op::L2(a))
    }

    pub fn lgamma(&mut self, a: Var) -> Result<Var> {
        self.check_positive(a, "lgamma")?;
        Ok(self.map(a, lgamma, Op::Lgamma(a)))
    }

    pub fn digamma(&mut self, a: Var) -> Result<Var> {
        self.check_positive(a, "digamma")?;
        Ok(self.map(a, digamma, Op::Digamma(a)))
    }

    fn check_positive(&self, a: Var, op: &'static str) -> Result<()> {
        if self.value(a).data().iter().all(|&x| x > 0.0) {
            Ok(())
        } else {
            Err(Error::Domain {
                op,
                detail: "argument must be positive".into(),
            })
        }
    }

    /// Affine map `w x + b` with `w: [out, in]`.
    pub fn linear(&mut self, w: Var, x: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matvec(w, x)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self.store);
        self.backward_into(root, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`] but adds into existing gradients.
    pub fn backward_into(&self, root: Var, grads: &mut Gradients) -> Result<()> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        if grads.len() != self.store.len() {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: vec![grads.len()],
                rhs: vec![self.store.len()],
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, f: impl Fn(usize) -> f64, n: usize) {
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; n]);
            for (i, s) in slot.iter_mut().enumerate() {
                *s += f(i);
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = node.value.data();
            let val = |v: Var| self.nodes[v.0].value.data();
            let len = |v: Var| self.nodes[v.0].value.len();
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    for (d, s) in grads.grads[id.0].data_mut().iter_mut().zip(&g) {
                        *d += s;
                    }
                }
                Op::Rows(id, rows) => {
                    let target = &mut grads.grads[id.0];
                    let cols = target.cols();
                    for (k, &r) in rows.iter().enumerate() {
                        for (d, s) in target
                            .row_mut(r)
                            .iter_mut()
                            .zip(&g[k * cols..(k + 1) * cols])
                        {
                            *d += s;
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, |i| g[i], g.len());
                    acc(&mut adj, *b, |i| g[i], g.len());
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, |i| g[i], g.len());
                    acc(&mut adj, *b, |i| -g[i], g.len());
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    acc(&mut adj, *a, |i| g[i] * vb[i], g.len());
                    acc(&mut adj, *b, |i| g[i] * va[i], g.len());
                }
                Op::Div(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    acc(&mut adj, *a, |i| g[i] / vb[i], g.len());
                    acc(&mut adj, *b, |i| -g[i] * va[i] / (vb[i] * vb[i]), g.len());
                }
                Op::Scale(a, c) => acc(&mut adj, *a, |i| c * g[i], g.len()),
                Op::Shift(a) => acc(&mut adj, *a, |i| g[i], g.len()),
                Op::Broadcast(s) => {
                    let total: f64 = g.iter().sum();
                    acc(&mut adj, *s, |_| total, 1);
                }
                Op::MatVec(m, v) => {
                    let (tm, x) = (&self.nodes[m.0].value, val(*v));
                    let cols = tm.cols();
                    acc(&mut adj, *m, |k| g[k / cols] * x[k % cols], tm.len());
                    acc(
                        &mut adj,
                        *v,
                        |j| (0..tm.rows()).map(|i| tm.data()[i * cols + j] * g[i]).sum(),
                        cols,
                    );
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    // dA = G B^T, dB = A^T G
                    acc(
                        &mut adj,
                        *a,
                        |ip| {
                            let (i, p) = (ip / k, ip % k);
                            (0..n).map(|j| g[i * n + j] * tb.data()[p * n + j]).sum()
                        },
                        m * k,
                    );
                    acc(
                        &mut adj,
                        *b,
                        |pj| {
                            let (p, j) = (pj / n, pj % n);
                            (0..m).map(|i| ta.data()[i * k + p] * g[i * n + j]).sum()
                        },
                        k * n,
                    );
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = len(p);
                        acc(&mut adj, p, |i| g[offset + i], n);
                        offset += n;
                    }
                }
                Op::Slice(a, start) => {
                    let n = len(*a);
                    let (start, end) = (*start, *start + g.len());
                    acc(
                        &mut adj,
                        *a,
                        |i| {
                            if (start..end).contains(&i) {
                                g[i - start]
                            } else {
                                0.0
                            }
                        },
                        n,
                    );
                }
                Op::Relu(a) => {
                    let x = val(*a);
                    acc(
                        &mut adj,
                        *a,
                        |i| if x[i] > 0.0 { g[i] } else { 0.0 },
                        g.len(),
                    );
                }
                Op::Sigmoid(a) => acc(&mut adj, *a, |i| g[i] * out[i] * (1.0 - out[i]), g.len()),
                Op::Softplus(a) => {
                    let x = val(*a);
                    acc(&mut adj, *a, |i| g[i] * sigmoid(x[i]), g.len());
                }
                Op::Exp(a) => acc(&mut adj, *a, |i| g[i] * out[i], g.len()),
                Op::Log(a) => {
                    let x = val(*a);
                    acc(&mut adj, *a, |i| g[i] / x[i], g.len());
                }
                Op::Abs(a) => {
                    let x = val(*a);
                    acc(
                        &mut adj,
                        *a,
                        |i| {
                            if x[i] > 0.0 {
                                g[i]
                            } else if x[i] < 0.0 {
                                -g[i]
                            } else {
                                0.0
                            }
                        },
                        g.len(),
                    );
                }
                Op::Clamp(a, lo, hi) => {
                    let x = val(*a);
                    acc(
                        &mut adj,
                        *a,
                        |i| {
                            if x[i] >= *lo && x[i] <= *hi {
                                g[i]
                            } else {
                                0.0
                            }
                        },
                        g.len(),
                    );
                }
                Op::MinOf(parts) => {
                    // Route each coordinate to the first input attaining the minimum.
                    let n = g.len();
                    let mut owner = vec![0usize; n];
                    for (i, o) in owner.iter_mut().enumerate() {
                        for (k, &p) in parts.iter().enumerate() {
                            if val(p)[i] == out[i] {
                                *o = k;
                                break;
                            }
                        }
                    }
                    for (k, &p) in parts.iter().enumerate() {
                        acc(&mut adj, p, |i| if owner[i] == k { g[i] } else { 0.0 }, n);
                    }
                }
                Op::Softmax(a) => {
                    let dot: f64 = g.iter().zip(out).map(|(x, y)| x * y).sum();
                    acc(&mut adj, *a, |i| out[i] * (g[i] - dot), g.len());
                }
                Op::Mean(parts) => {
                    let n = parts.len() as f64;
                    for &p in parts {
                        acc(&mut adj, p, |i| g[i] / n, g.len());
                    }
                }
                Op::MeanRows(m) => {
                    let t = &self.nodes[m.0].value;
                    let (rows, cols) = (t.rows(), t.cols());
                    acc(&mut adj, *m, |k| g[k % cols] / rows as f64, rows * cols);
                }
                Op::Sum(a) => acc(&mut adj, *a, |_| g[0], len(*a)),
                Op::L1(a) => {
                    let x = val(*a);
                    acc(
                        &mut adj,
                        *a,
                        |i| g[0] * x[i].signum() * f64::from(x[i] != 0.0),
                        x.len(),
                    );
                }
                Op::L2(a) => {
                    let x = val(*a);
                    let norm = out[0];
                    acc(
                        &mut adj,
                        *a,
                        |i| if norm > 0.0 { g[0] * x[i] / norm } else { 0.0 },
                        x.len(),
                    );
                }
                Op::Lgamma(a) => {
                    let x = val(*a);
                    acc(&mut adj, *a, |i| g[i] * digamma(x[i]), g.len());
                }
                Op::Digamma(a) => {
                    let x = val(*a);
                    acc(&mut adj, *a, |i| g[i] * trigamma(x[i]), g.len());
                }
            }
        }
        Ok(())
    }
}
