//! Recorded-tape reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters are borrowed
//! from a [`ParamStore`] rather than copied; gradients come back as a
//! [`Gradients`] value that the caller folds into the store once the graph is
//! dropped.

use std::collections::BTreeMap;

use super::ops;
use super::store::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Which parameters receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tracking {
    /// Nothing is differentiated.
    Off,
    /// Parameters in the store's trainable mask.
    Trainable,
    /// Every parameter, regardless of the mask (gradient checking).
    All,
}

enum Value<'s> {
    Owned(Tensor),
    Borrowed(&'s Tensor),
}

enum Op {
    Leaf,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    Gelu(Var),
    Transpose(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Gather {
        table: Var,
        rows: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node<'s> {
    value: Value<'s>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'s> {
    store: Option<&'s ParamStore>,
    nodes: Vec<Node<'s>>,
    tracking: Tracking,
}

impl<'s> Graph<'s> {
    /// Tape over `store` that differentiates the trainable parameters.
    pub fn new(store: &'s ParamStore) -> Self {
        Self::with_tracking(store, Tracking::Trainable)
    }

    pub fn inference(store: &'s ParamStore) -> Self {
        Self::with_tracking(store, Tracking::Off)
    }

    pub fn with_tracking(store: &'s ParamStore, tracking: Tracking) -> Self {
        Graph {
            store: Some(store),
            nodes: Vec::new(),
            tracking,
        }
    }

    /// Tape with no parameter store; only explicit inputs can carry gradients.
    pub fn standalone() -> Graph<'static> {
        Graph {
            store: None,
            nodes: Vec::new(),
            tracking: Tracking::Trainable,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tracking(&self) -> Tracking {
        self.tracking
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad: needs_grad && self.tracking != Tracking::Off,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input leaf; differentiated when `requires_grad` is set.
    pub fn input(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Borrows the named parameter from the store.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let store = self
            .store
            .ok_or_else(|| Error::contract("graph has no parameter store"))?;
        let t = store.require(name)?;
        let needs = match self.tracking {
            Tracking::Off => false,
            Tracking::Trainable => store.is_trainable(name),
            Tracking::All => true,
        };
        self.nodes.push(Node {
            value: Value::Borrowed(t),
            op: Op::Param(name.to_string()),
            needs_grad: needs,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.dim_err(name, a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(self.value(a).shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Adds the vector `bias [n]` to every row of `x [m×n]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(x)?;
        if self.value(bias).numel() != n {
            return Err(self.dim_err("add_row", x, bias));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for r in 0..m {
            out[r * n..(r + 1) * n].iter_mut().zip(b).for_each(|(o, v)| *o += v);
        }
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let ng = self.needs(x) || self.needs(bias);
        Ok(self.push(t, Op::AddRow(x, bias), ng))
    }

    /// `x · weight + bias` for `x [m×k]`, `weight [k×n]`, `bias [n]`.
    pub fn affine(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let h = self.matmul(x, weight)?;
        self.add_row(h, bias)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * c).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data).expect("same shape");
        let ng = self.needs(x);
        self.push(t, Op::Scale(x, c), ng)
    }

    /// Element-wise product with a constant mask (used for dropout).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::contract("mul_const mask length differs from input"));
        }
        let data = self.value(x).data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), data)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::MulConst(x, mask), ng))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = ops::gelu_tensor(self.value(x));
        let ng = self.needs(x);
        self.push(t, Op::Gelu(x), ng)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = ops::transpose(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::Transpose(x), ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.dims(x)?;
        if self.value(gain).numel() != cols || self.value(bias).numel() != cols {
            return Err(self.dim_err("layer_norm", x, gain));
        }
        let (out, xhat, inv_std) = ops::layer_norm_rows(
            self.value(x).data(),
            self.value(gain).data(),
            self.value(bias).data(),
            rows,
            cols,
            eps,
        );
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Row-wise softmax; columns with `allowed[j] == false` get weight zero.
    pub fn softmax_rows(&mut self, x: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let (rows, cols) = self.dims(x)?;
        if allowed.is_some_and(|m| m.len() != cols) {
            return Err(Error::contract("softmax mask length differs from row width"));
        }
        let out = ops::masked_softmax_rows(self.value(x).data(), rows, cols, allowed);
        let t = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::Softmax(x), ng))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims(x)?;
        if len == 0 || start + len > cols {
            return Err(Error::contract(format!(
                "slice_cols {start}..{} out of range for width {cols}",
                start + len
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let t = Tensor::new(vec![rows, len], out)?;
        let ng = self.needs(x);
        Ok(self.push(t, Op::SliceCols { x, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let rows = self.dims(first)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p)?;
            if r != rows {
                return Err(self.dim_err("concat_cols", first, p));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let t = Tensor::new(vec![rows, total], out)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Stacks `table[rows[i]]` into a `[rows.len()×width]` matrix.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let (n, width) = self.dims(table)?;
        if rows.is_empty() {
            return Err(Error::contract("gather of zero rows"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::contract(format!("row index {bad} out of range for {n} rows")));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            out.extend_from_slice(&src[r * width..(r + 1) * width]);
        }
        let t = Tensor::new(vec![rows.len(), width], out)?;
        let ng = self.needs(table);
        Ok(self.push(
            t,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Mean cross-entropy of `logits [n×c]` against one target class per row.
    /// Classes with `allowed[j] == false` are excluded from the normaliser.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], allowed: Option<&[bool]>) -> Result<Var> {
        let (n, c) = self.dims(logits)?;
        if targets.len() != n {
            return Err(Error::contract(format!(
                "cross_entropy: {} targets for {n} rows",
                targets.len()
            )));
        }
        if allowed.is_some_and(|m| m.len() != c) {
            return Err(Error::contract("cross_entropy mask length differs from class count"));
        }
        for &t in targets {
            if t >= c || allowed.is_some_and(|m| !m[t]) {
                return Err(Error::contract(format!("target class {t} is not an allowed class")));
            }
        }
        let src = self.value(logits).data();
        let probs = ops::masked_softmax_rows(src, n, c, allowed);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            // log-sum-exp form keeps extreme logits finite
            let row = &src[r * c..(r + 1) * c];
            let ok = |j: usize| allowed.is_none_or(|m| m[j]);
            let max = (0..c).filter(|&j| ok(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..c).filter(|&j| ok(j)).map(|j| (row[j] - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        loss /= n as f64;
        let ng = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        if self.needs(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Param(name) => match params.get_mut(name) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        params.insert(name.clone(), g);
                    }
                },
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a)?;
                    let n = self.dims(*b)?.1;
                    if self.needs(*a) {
                        let mut da = vec![0.0; m * k];
                        ops::matmul_nt_into(&g, self.value(*b).data(), &mut da, m, n, k);
                        accumulate(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = vec![0.0; k * n];
                        ops::matmul_tn_into(self.value(*a).data(), &g, &mut db, m, k, n);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.iter().map(|v| -v).collect());
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let bv = self.value(*b).data();
                        accumulate(&mut grads, *a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                    }
                    if self.needs(*b) {
                        let av = self.value(*a).data();
                        accumulate(&mut grads, *b, g.iter().zip(av).map(|(x, y)| x * y).collect());
                    }
                }
                Op::AddRow(x, bias) => {
                    let n = self.value(*bias).numel();
                    if self.needs(*bias) {
                        let mut db = vec![0.0; n];
                        for row in g.chunks(n) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                        accumulate(&mut grads, *bias, db);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Scale(x, c) => {
                    accumulate(&mut grads, *x, g.iter().map(|v| v * c).collect());
                }
                Op::MulConst(x, mask) => {
                    accumulate(&mut grads, *x, g.iter().zip(mask).map(|(v, m)| v * m).collect());
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x).data();
                    accumulate(
                        &mut grads,
                        *x,
                        g.iter().zip(xv).map(|(d, v)| d * ops::gelu_grad(*v)).collect(),
                    );
                }
                Op::Transpose(x) => {
                    let (r, c) = self.dims(*x)?;
                    // g is [c×r]
                    let mut dx = vec![0.0; r * c];
                    for i in 0..c {
                        for j in 0..r {
                            dx[j * c + i] = g[i * r + j];
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let (rows, cols) = self.dims(*x)?;
                    let gv = self.value(*gain).data();
                    if self.needs(*gain) {
                        let mut dg = vec![0.0; cols];
                        for r in 0..rows {
                            for j in 0..cols {
                                dg[j] += g[r * cols + j] * xhat[r * cols + j];
                            }
                        }
                        accumulate(&mut grads, *gain, dg);
                    }
                    if self.needs(*bias) {
                        let mut db = vec![0.0; cols];
                        for row in g.chunks(cols) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                        accumulate(&mut grads, *bias, db);
                    }
                    if self.needs(*x) {
                        let mut dx = vec![0.0; rows * cols];
                        let nf = cols as f64;
                        for r in 0..rows {
                            let xh = &xhat[r * cols..(r + 1) * cols];
                            let dxh: Vec<f64> = (0..cols).map(|j| g[r * cols + j] * gv[j]).collect();
                            let s1: f64 = dxh.iter().sum();
                            let s2: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                            for j in 0..cols {
                                dx[r * cols + j] = inv_std[r] / nf * (nf * dxh[j] - s1 - xh[j] * s2);
                            }
                        }
                        accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Softmax(x) => {
                    let (rows, cols) = self.dims(*x)?;
                    let y = match &node.value {
                        Value::Owned(t) => t.data(),
                        Value::Borrowed(t) => t.data(),
                    };
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            dx[r * cols + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols { x, start } => {
                    let (rows, cols) = self.dims(*x)?;
                    let len = g.len() / rows;
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        dx[r * cols + start..r * cols + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let total = self.value(Var(idx)).cols();
                    let rows = g.len() / total;
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.needs(p) {
                            let mut dp = vec![0.0; rows * w];
                            for r in 0..rows {
                                dp[r * w..(r + 1) * w]
                                    .copy_from_slice(&g[r * total + offset..r * total + offset + w]);
                            }
                            accumulate(&mut grads, p, dp);
                        }
                        offset += w;
                    }
                }
                Op::Gather { table, rows } => {
                    let (n, width) = self.dims(*table)?;
                    let mut dt = vec![0.0; n * width];
                    for (i, &r) in rows.iter().enumerate() {
                        dt[r * width..(r + 1) * width]
                            .iter_mut()
                            .zip(&g[i * width..(i + 1) * width])
                            .for_each(|(d, v)| *d += v);
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::Sum(x) => {
                    let n = self.value(*x).numel();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).numel();
                    accumulate(&mut grads, *x, vec![g[0] / n as f64; n]);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let n = targets.len();
                    let c = probs.len() / n;
                    let scale = g[0] / n as f64;
                    let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        dl[r * c + t] -= scale;
                    }
                    accumulate(&mut grads, *logits, dl);
                }
            }
        }

        Ok(Gradients { nodes: grads, params })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    /// Gradient of an input leaf created with `requires_grad`.
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).map(Vec::as_slice)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.params.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}
