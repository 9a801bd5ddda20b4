//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every op appends a node holding its forward value. Node ids grow
//! monotonically, so the tape is already in topological order and
//! [`Tape::backward`] is a single reverse sweep.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    MatMul,
    Affine,
    Silu,
    Softmax,
    LogSoftmax,
    Sum,
    Mean,
    SquaredNorm,
    Concat,
    SliceCols,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Affine { x: Var, w: Var, b: Var },
    Silu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    SquaredNorm(Var),
    Concat(Var, Var),
    SliceCols { a: Var, start: usize, len: usize },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Affine { .. } => OpKind::Affine,
            Op::Silu(_) => OpKind::Silu,
            Op::Softmax(_) => OpKind::Softmax,
            Op::LogSoftmax(_) => OpKind::LogSoftmax,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::SquaredNorm(_) => OpKind::SquaredNorm,
            Op::Concat(..) => OpKind::Concat,
            Op::SliceCols { .. } => OpKind::SliceCols,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::Concat(a, b) => {
                vec![a, b]
            }
            Op::Affine { x, w, b } => vec![x, w, b],
            Op::Scale(a, _)
            | Op::Silu(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SquaredNorm(a)
            | Op::SliceCols { a, .. } => vec![a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`; zeros when `v` is unreachable from the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, with `op(a)` of shape `m x k`
/// and `op(b)` of shape `k x n`. `ta`/`tb` mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the bounds above cover every element addressed by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn as_matrix(t: &Tensor) -> Option<(usize, usize)> {
    match t.shape() {
        [r, c] => Some((*r, *c)),
        _ => None,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("forward op `{name}`")));
        }
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    fn zip_same(&self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), v, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same(a, b, "sub", |x, y| x - y)?;
        self.push(Op::Sub(a, b), v, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_same(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), v, "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push(Op::Scale(a, s), v, "scale")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (as_matrix(ta), as_matrix(tb)) {
            (Some((m, k)), Some((k2, n))) if k == k2 => (m, k, n),
            _ => return Err(shape_err("matmul", ta, tb)),
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut out);
        let v = Tensor::matrix(m, n, out)?;
        self.push(Op::MatMul(a, b), v, "matmul")
    }

    /// `x W + b` with `x: [batch, in]` (or `[in]`), `W: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (fan_in, fan_out) = as_matrix(tw).ok_or_else(|| shape_err("affine", tx, tw))?;
        if tx.last_dim() != fan_in || tx.shape().len() > 2 {
            return Err(shape_err("affine", tx, tw));
        }
        if tb.shape() != [fan_out] {
            return Err(shape_err("affine", tw, tb));
        }
        let rows = tx.rows();
        let mut out = Vec::with_capacity(rows * fan_out);
        for _ in 0..rows {
            out.extend_from_slice(tb.data());
        }
        gemm(rows, fan_in, fan_out, tx.data(), false, tw.data(), false, 1.0, &mut out);
        let shape = if tx.shape().len() == 1 {
            vec![fan_out]
        } else {
            vec![rows, fan_out]
        };
        let v = Tensor::new(shape, out)?;
        self.push(Op::Affine { x, w, b }, v, "affine")
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * sigmoid(x));
        self.push(Op::Silu(a), v, "silu")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = softmax_rows(self.value(a));
        self.push(Op::Softmax(a), v, "softmax")
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.last_dim();
        let mut out = Vec::with_capacity(t.len());
        for r in 0..t.rows() {
            let row = t.row(r);
            let lse = log_sum_exp(row);
            out.extend(row.iter().map(|x| x - lse));
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        debug_assert_eq!(v.last_dim(), c);
        self.push(Op::LogSoftmax(a), v, "log_softmax")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(Op::Sum(a), v, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let v = Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64);
        self.push(Op::Mean(a), v, "mean")
    }

    pub fn squared_norm(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).squared_norm());
        self.push(Op::SquaredNorm(a), v, "squared_norm")
    }

    /// Concatenates two tensors with equal leading shape along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let lead_a = &ta.shape()[..ta.shape().len() - 1];
        let lead_b = &tb.shape()[..tb.shape().len() - 1];
        if lead_a != lead_b {
            return Err(shape_err("concat", ta, tb));
        }
        let (ca, cb) = (ta.last_dim(), tb.last_dim());
        let mut out = Vec::with_capacity(ta.len() + tb.len());
        for r in 0..ta.rows() {
            out.extend_from_slice(ta.row(r));
            out.extend_from_slice(tb.row(r));
        }
        let mut shape = lead_a.to_vec();
        shape.push(ca + cb);
        let v = Tensor::new(shape, out)?;
        self.push(Op::Concat(a, b), v, "concat")
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let c = t.last_dim();
        if len == 0 || start + len > c {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            out.extend_from_slice(&t.row(r)[start..start + len]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let v = Tensor::new(shape, out)?;
        self.push(Op::SliceCols { a, start, len }, v, "slice_cols")
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            for input in node.op.inputs() {
                if input.0 >= id {
                    return Err(Error::CyclicTape { node: id, input: input.0 });
                }
            }
            for (input, contrib) in self.local_grads(&node.op, &node.value, &g) {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[id] = Some(g);
        }
        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(Error::NonFinite("backward pass".into()));
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn local_grads(&self, op: &Op, out: &Tensor, g: &Tensor) -> Vec<(Var, Tensor)> {
        match *op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Sub(a, b) => vec![(a, g.clone()), (b, g.map(|x| -x))],
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let ga = zip(g, tb, |g, y| g * y);
                let gb = zip(g, ta, |g, x| g * x);
                vec![(a, ga), (b, gb)]
            }
            Op::Scale(a, s) => vec![(a, g.map(|x| x * s))],
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k) = as_matrix(ta).unwrap();
                let n = tb.shape()[1];
                let mut ga = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, tb.data(), true, 0.0, &mut ga);
                let mut gb = vec![0.0; k * n];
                gemm(k, m, n, ta.data(), true, g.data(), false, 0.0, &mut gb);
                vec![
                    (a, Tensor::new(ta.shape().to_vec(), ga).unwrap()),
                    (b, Tensor::new(tb.shape().to_vec(), gb).unwrap()),
                ]
            }
            Op::Affine { x, w, b } => {
                let (tx, tw) = (self.value(x), self.value(w));
                let (fan_in, fan_out) = as_matrix(tw).unwrap();
                let rows = tx.rows();
                let mut gx = vec![0.0; rows * fan_in];
                gemm(rows, fan_out, fan_in, g.data(), false, tw.data(), true, 0.0, &mut gx);
                let mut gw = vec![0.0; fan_in * fan_out];
                gemm(fan_in, rows, fan_out, tx.data(), true, g.data(), false, 0.0, &mut gw);
                let mut gb = vec![0.0; fan_out];
                for r in 0..rows {
                    for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                vec![
                    (x, Tensor::new(tx.shape().to_vec(), gx).unwrap()),
                    (w, Tensor::new(tw.shape().to_vec(), gw).unwrap()),
                    (b, Tensor::vector(gb)),
                ]
            }
            Op::Silu(a) => {
                let ta = self.value(a);
                let ga = zip(g, ta, |g, x| {
                    let s = sigmoid(x);
                    g * s * (1.0 + x * (1.0 - s))
                });
                vec![(a, ga)]
            }
            Op::Softmax(a) => {
                let c = out.last_dim();
                let mut ga = Vec::with_capacity(out.len());
                for r in 0..out.rows() {
                    let (y, gy) = (out.row(r), g.row(r));
                    let dot: f64 = y.iter().zip(gy).map(|(y, g)| y * g).sum();
                    ga.extend((0..c).map(|j| y[j] * (gy[j] - dot)));
                }
                vec![(a, Tensor::new(out.shape().to_vec(), ga).unwrap())]
            }
            Op::LogSoftmax(a) => {
                let c = out.last_dim();
                let mut ga = Vec::with_capacity(out.len());
                for r in 0..out.rows() {
                    let (y, gy) = (out.row(r), g.row(r));
                    let total: f64 = gy.iter().sum();
                    ga.extend((0..c).map(|j| gy[j] - y[j].exp() * total));
                }
                vec![(a, Tensor::new(out.shape().to_vec(), ga).unwrap())]
            }
            Op::Sum(a) => vec![(a, Tensor::full(self.value(a).shape(), g.item()))],
            Op::Mean(a) => {
                let ta = self.value(a);
                vec![(a, Tensor::full(ta.shape(), g.item() / ta.len() as f64))]
            }
            Op::SquaredNorm(a) => {
                let s = 2.0 * g.item();
                vec![(a, self.value(a).map(|x| s * x))]
            }
            Op::Concat(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (ca, cb) = (ta.last_dim(), tb.last_dim());
                let mut ga = Vec::with_capacity(ta.len());
                let mut gb = Vec::with_capacity(tb.len());
                for r in 0..g.rows() {
                    let row = g.row(r);
                    ga.extend_from_slice(&row[..ca]);
                    gb.extend_from_slice(&row[ca..ca + cb]);
                }
                vec![
                    (a, Tensor::new(ta.shape().to_vec(), ga).unwrap()),
                    (b, Tensor::new(tb.shape().to_vec(), gb).unwrap()),
                ]
            }
            Op::SliceCols { a, start, len } => {
                let ta = self.value(a);
                let c = ta.last_dim();
                let mut ga = vec![0.0; ta.len()];
                for r in 0..ta.rows() {
                    ga[r * c + start..r * c + start + len].copy_from_slice(g.row(r));
                }
                vec![(a, Tensor::new(ta.shape().to_vec(), ga).unwrap())]
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax of each row along the last axis.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = Vec::with_capacity(t.len());
    for r in 0..t.rows() {
        let row = t.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|x| (x - max).exp()));
        let z: f64 = out[start..].iter().sum();
        for v in &mut out[start..] {
            *v /= z;
        }
    }
    Tensor::new(t.shape().to_vec(), out).unwrap()
}
