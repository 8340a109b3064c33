//! Dense matrix tensors with tape-based reverse-mode differentiation.
//!
//! Every tensor is viewed as a row-major matrix: a shape `[n]` is a single
//! row of `n` columns and a shape `[m, n]` is `m` rows. Operations are
//! methods on [`Tape`] taking and returning [`Var`] handles. A node is only
//! recorded as an operation when at least one input requires a gradient;
//! otherwise its value is stored as a constant and backward skips it.
//!
//! ```
//! use ncd_core::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::vector(vec![1.0, -2.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).data(), &[2.0, -4.0]);
//! ```

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NcdError, Result};

/// A dense tensor of double precision values in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 || shape.contains(&0) {
            return shape_err(format!("unsupported tensor shape {shape:?}"));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    /// A `rows × cols` matrix. Panics if `data` has the wrong length.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::new(vec![rows, cols], data).expect("matrix data length")
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(vec![n], data).expect("non-empty vector")
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; n]).expect("valid zero shape")
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::matrix(n, n, data)
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return shape_err("cannot build a matrix from zero rows");
        };
        let cols = first.len();
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("ragged rows");
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[0]
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return shape_err(format!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }
}

/// Plain (untaped) matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return shape_err(format!("matmul inner dimensions {m}x{k} · {k2}x{n}"));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out_row.iter_mut().zip(b.row(p)) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::matrix(m, n, out))
}

/// Temperature softmax of a single logit row, max-shifted for stability.
pub fn softmax_tau(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(NcdError::Parameter(format!("temperature must be positive, got {tau}")));
    }
    if logits.is_empty() {
        return shape_err("softmax of an empty vector");
    }
    Ok(softmax_row(logits, tau))
}

fn softmax_row(logits: &[f64], tau: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| ((l - max) / tau).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var, f64),
    ClampMin(Var, f64),
    RowNormalize(Var),
    Log(Var),
    Sum(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of operations. Nodes are appended in evaluation order,
/// so every operation's inputs precede it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients for every node of a tape after [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when the loss does
    /// not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        let shape = self.shapes[var.0].clone();
        match &self.grads[var.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Collects the gradients of `vars` in order.
    pub fn collect(&self, vars: &[Var]) -> GradientMap {
        GradientMap::new(vars.iter().map(|&v| self.get(v)).collect())
    }
}

/// Gradients aligned index-by-index with a parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    grads: Vec<Tensor>,
}

impl GradientMap {
    pub fn new(grads: Vec<Tensor>) -> Self {
        Self { grads }
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
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op: if requires_grad { op } else { Op::Leaf },
        });
        Var(nodes.len() - 1)
    }

    /// A leaf that requires a gradient.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> Tensor {
        self.nodes.borrow()[var.0].value.clone()
    }

    pub fn scalar_value(&self, var: Var) -> Result<f64> {
        self.nodes.borrow()[var.0].value.item()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes.borrow()[var.0].requires_grad
    }

    fn dims(&self, var: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        let v = &nodes[var.0].value;
        (v.rows(), v.cols())
    }

    fn unary(&self, a: Var, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            (f(&n.value), n.requires_grad)
        };
        self.push(value, rg, op)
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            (f(&na.value, &nb.value)?, na.requires_grad || nb.requires_grad)
        };
        Ok(self.push(value, rg, op))
    }

    fn elementwise(&self, a: Var, b: Var, op: Op, f: fn(f64, f64) -> f64) -> Result<Var> {
        self.binary(a, b, op, |x, y| {
            if x.rows() != y.rows() || x.cols() != y.cols() {
                return shape_err(format!(
                    "elementwise shapes {:?} vs {:?}",
                    x.shape(),
                    y.shape()
                ));
            }
            let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
            Tensor::new(x.shape().to_vec(), data)
        })
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::MatMul(a, b), matmul)
    }

    pub fn transpose(&self, a: Var) -> Var {
        self.unary(a, Op::Transpose(a), |x| {
            let (m, n) = (x.rows(), x.cols());
            let mut data = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    data[j * m + i] = x.get(i, j);
                }
            }
            Tensor::matrix(n, m, data)
        })
    }

    /// Adds a `1 × n` row to every row of an `m × n` matrix.
    pub fn add_row(&self, x: Var, row: Var) -> Result<Var> {
        self.binary(x, row, Op::AddRow(x, row), |x, r| {
            if r.rows() != 1 || r.cols() != x.cols() {
                return shape_err(format!("add_row {:?} + {:?}", x.shape(), r.shape()));
            }
            let mut out = x.clone();
            let n = x.cols();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += r.data()[i % n];
            }
            Ok(out)
        })
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&self, a: Var, factor: f64) -> Var {
        self.unary(a, Op::Scale(a, factor), |x| {
            let data = x.data().iter().map(|v| v * factor).collect();
            Tensor::new(x.shape().to_vec(), data).expect("same shape")
        })
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| {
            let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            Tensor::new(x.shape().to_vec(), data).expect("same shape")
        })
    }

    /// Row-wise temperature softmax.
    pub fn softmax_rows(&self, a: Var, tau: f64) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(NcdError::Parameter(format!("temperature must be positive, got {tau}")));
        }
        Ok(self.unary(a, Op::Softmax(a, tau), |x| {
            let data = (0..x.rows()).flat_map(|i| softmax_row(x.row(i), tau)).collect();
            Tensor::new(x.shape().to_vec(), data).expect("same shape")
        }))
    }

    /// Elementwise `max(x, floor)`; the gradient passes only where `x > floor`.
    pub fn clamp_min(&self, a: Var, floor: f64) -> Var {
        self.unary(a, Op::ClampMin(a, floor), |x| {
            let data = x.data().iter().map(|&v| v.max(floor)).collect();
            Tensor::new(x.shape().to_vec(), data).expect("same shape")
        })
    }

    /// Divides every row by its sum.
    pub fn row_normalize(&self, a: Var) -> Var {
        self.unary(a, Op::RowNormalize(a), |x| {
            let n = x.cols();
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(n) {
                let s: f64 = row.iter().sum();
                for v in row {
                    *v /= s;
                }
            }
            out
        })
    }

    pub fn log(&self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| {
            let data = x.data().iter().map(|v| v.ln()).collect();
            Tensor::new(x.shape().to_vec(), data).expect("same shape")
        })
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&self, a: Var) -> Var {
        self.unary(a, Op::Sum(a), |x| Tensor::scalar(x.data().iter().sum()))
    }

    pub fn mean(&self, a: Var) -> Var {
        let n = self.nodes.borrow()[a.0].value.len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `[a | b]` for matrices with equal row counts.
    pub fn concat_cols(&self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::ConcatCols(a, b), |x, y| {
            if x.rows() != y.rows() {
                return shape_err(format!("concat rows {} vs {}", x.rows(), y.rows()));
            }
            let mut data = Vec::with_capacity(x.len() + y.len());
            for i in 0..x.rows() {
                data.extend_from_slice(x.row(i));
                data.extend_from_slice(y.row(i));
            }
            Ok(Tensor::matrix(x.rows(), x.cols() + y.cols(), data))
        })
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (_, n) = self.dims(a);
        if start >= end || end > n {
            return shape_err(format!("column slice {start}..{end} of width {n}"));
        }
        Ok(self.unary(a, Op::SliceCols(a, start), |x| {
            let data = (0..x.rows()).flat_map(|i| x.row(i)[start..end].to_vec()).collect();
            Tensor::matrix(x.rows(), end - start, data)
        }))
    }

    /// Reverse-mode gradients of a scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(NcdError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let out = &node.value;
            let mut acc = |v: Var, delta: &dyn Fn(usize) -> f64| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                let len = nodes[v.0].value.len();
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
                for (i, s) in slot.iter_mut().enumerate() {
                    *s += delta(i);
                }
            };
            match node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    if nodes[a.0].requires_grad {
                        // dA = dC · Bᵀ
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                da[i * k + p] =
                                    grow.iter().zip(bv.row(p)).map(|(x, y)| x * y).sum();
                            }
                        }
                        acc(a, &|i| da[i]);
                    }
                    if nodes[b.0].requires_grad {
                        // dB = Aᵀ · dC
                        let mut db = vec![0.0; k * n];
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for (p, &a_ip) in av.row(i).iter().enumerate() {
                                if a_ip == 0.0 {
                                    continue;
                                }
                                for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *d += a_ip * gv;
                                }
                            }
                        }
                        acc(b, &|i| db[i]);
                    }
                }
                Op::Transpose(a) => {
                    let (m, n) = (out.rows(), out.cols());
                    // out is n_a×m_a = m×n; input index (r, c) maps to out (c, r)
                    acc(a, &|i| {
                        let (r, c) = (i / m, i % m);
                        g[c * n + r]
                    });
                }
                Op::AddRow(x, row) => {
                    acc(x, &|i| g[i]);
                    let n = out.cols();
                    let mut col = vec![0.0; n];
                    for (i, gv) in g.iter().enumerate() {
                        col[i % n] += gv;
                    }
                    acc(row, &|i| col[i]);
                }
                Op::Add(a, b) => {
                    acc(a, &|i| g[i]);
                    acc(b, &|i| g[i]);
                }
                Op::Sub(a, b) => {
                    acc(a, &|i| g[i]);
                    acc(b, &|i| -g[i]);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(a, &|i| g[i] * bv[i]);
                    acc(b, &|i| g[i] * av[i]);
                }
                Op::Scale(a, f) => acc(a, &|i| g[i] * f),
                Op::Relu(a) => {
                    let av = nodes[a.0].value.data();
                    acc(a, &|i| if av[i] > 0.0 { g[i] } else { 0.0 });
                }
                Op::Softmax(a, tau) => {
                    let n = out.cols();
                    let y = out.data();
                    let dots: Vec<f64> = (0..out.rows())
                        .map(|r| (r * n..(r + 1) * n).map(|i| g[i] * y[i]).sum())
                        .collect();
                    acc(a, &|i| y[i] * (g[i] - dots[i / n]) / tau);
                }
                Op::ClampMin(a, floor) => {
                    let av = nodes[a.0].value.data();
                    acc(a, &|i| if av[i] > floor { g[i] } else { 0.0 });
                }
                Op::RowNormalize(a) => {
                    let n = out.cols();
                    let y = out.data();
                    let av = &nodes[a.0].value;
                    let sums: Vec<f64> = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
                    let dots: Vec<f64> = (0..out.rows())
                        .map(|r| (r * n..(r + 1) * n).map(|i| g[i] * y[i]).sum())
                        .collect();
                    acc(a, &|i| (g[i] - dots[i / n]) / sums[i / n]);
                }
                Op::Log(a) => {
                    let av = nodes[a.0].value.data();
                    acc(a, &|i| g[i] / av[i]);
                }
                Op::Sum(a) => acc(a, &|_| g[0]),
                Op::ConcatCols(a, b) => {
                    let na = nodes[a.0].value.cols();
                    let nb = nodes[b.0].value.cols();
                    let n = na + nb;
                    acc(a, &|i| g[(i / na) * n + i % na]);
                    acc(b, &|i| g[(i / nb) * n + na + i % nb]);
                }
                Op::SliceCols(a, start) => {
                    let w = out.cols();
                    let n = nodes[a.0].value.cols();
                    acc(a, &|i| {
                        let c = i % n;
                        if c >= start && c < start + w {
                            g[(i / n) * w + c - start]
                        } else {
                            0.0
                        }
                    });
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Anything holding an ordered list of trainable tensors.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;
}

/// Gradient descent with heavy-ball momentum: `v ← μ·v + g`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    /// `lr = 0` is accepted and leaves parameters untouched.
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(NcdError::Parameter(format!("learning rate must be >= 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(NcdError::Parameter(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Self { lr, momentum, velocity: Vec::new() })
    }

    pub fn step<P: Parameters + ?Sized>(&mut self, params: &mut P, grads: &GradientMap) -> Result<()> {
        let mut tensors = params.tensors_mut();
        if tensors.len() != grads.len() {
            return Err(NcdError::Shape(format!(
                "{} parameters but {} gradients",
                tensors.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
        }
        for ((w, g), v) in tensors.iter_mut().zip(grads.tensors()).zip(&mut self.velocity) {
            if w.shape() != g.shape() || v.shape() != w.shape() {
                return Err(NcdError::Shape(format!(
                    "gradient shape {:?} for parameter {:?}",
                    g.shape(),
                    w.shape()
                )));
            }
            for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = self.momentum * *vi + gi;
                *wi -= self.lr * *vi;
            }
        }
        Ok(())
    }
}

impl Parameters for Vec<Tensor> {
    fn tensors(&self) -> Vec<&Tensor> {
        self.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_examples() {
        let x = Tensor::matrix(2, 2, vec![3.0, -1.0, 0.5, 2.0]);
        assert_eq!(matmul(&Tensor::identity(2), &x).unwrap(), x);
        let a = Tensor::matrix(1, 2, vec![1.0, 2.0]);
        let b = Tensor::matrix(2, 1, vec![3.0, 4.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
        let z = matmul(&Tensor::zeros(&[2, 2]), &x).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(matches!(matmul(&a, &a), Err(NcdError::Shape(_))));
    }

    #[test]
    fn relu_forward_and_sign_mask() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let loss = tape.sum(r);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).data(), &[0.0, 0.0, 1.0]);

        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![-3.0, -0.5]));
        assert!(tape.value(tape.relu(x)).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_tau(&[2.0, 2.0, 2.0, 2.0], 0.37).unwrap();
        assert!(p.iter().all(|&v| close(v, 0.25, 1e-15)));
        let p = softmax_tau(&[1.0, 0.0], 0.1).unwrap();
        let e10 = 10f64.exp();
        assert!(close(p[0], e10 / (e10 + 1.0), 1e-15));
        assert!(close(p[0], 0.9999546, 1e-7));
        assert!(close(p[1], 0.0000454, 1e-7));
        let a = softmax_tau(&[0.3, -1.2], 1.0).unwrap();
        let b = softmax_tau(&[5.3, 3.8], 1.0).unwrap();
        assert!(close(a[0], b[0], 1e-14) && close(a[1], b[1], 1e-14));
        assert!(matches!(softmax_tau(&[1.0], 0.0), Err(NcdError::Parameter(_))));
        assert!(matches!(softmax_tau(&[1.0], -1.0), Err(NcdError::Parameter(_))));
    }

    #[test]
    fn backward_simple_losses() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.3, 1.0, -4.0]));
        let loss = tape.sum(x);
        assert_eq!(tape.backward(loss).unwrap().get(x).data(), &[1.0, 1.0, 1.0]);

        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(NcdError::Usage(_))));
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.param(Tensor::matrix(2, 2, vec![1.0; 4]));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn constants_are_not_recorded() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.add(a, a).unwrap();
        assert!(!tape.requires_grad(b));
    }

    #[test]
    fn sgd_examples() {
        let mut w = vec![Tensor::scalar(1.0)];
        let mut opt = Sgd::new(0.1, 0.0).unwrap();
        opt.step(&mut w, &GradientMap::new(vec![Tensor::scalar(2.0)])).unwrap();
        assert!(close(w[0].data()[0], 0.8, 1e-15));

        let mut w = vec![Tensor::vector(vec![0.5, -0.25])];
        let before = w.clone();
        let mut opt = Sgd::new(0.3, 0.9).unwrap();
        opt.step(&mut w, &GradientMap::new(vec![Tensor::zeros(&[2])])).unwrap();
        assert_eq!(w, before);

        let mut w = vec![Tensor::scalar(0.0)];
        let mut opt = Sgd::new(1.0, 0.9).unwrap();
        for _ in 0..2 {
            opt.step(&mut w, &GradientMap::new(vec![Tensor::scalar(1.0)])).unwrap();
        }
        assert!(close(w[0].data()[0], -2.9, 1e-15));

        let mut w = vec![Tensor::scalar(0.0)];
        let err = opt.step(&mut w, &GradientMap::new(vec![Tensor::zeros(&[2])]));
        assert!(matches!(err, Err(NcdError::Shape(_))));
        assert!(Sgd::new(-0.1, 0.0).is_err());
        assert!(Sgd::new(0.1, 1.0).is_err());
    }

    #[test]
    fn tensor_shape_validation() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
