use super::tensor::{gemm, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Binary(Binary, Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Unary(Unary, Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Sum(Var),
    BceMean {
        pred: Var,
        target: Vec<f64>,
        eps: f64,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Binary(_, a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Unary(_, a)
            | Op::SoftmaxRows(a)
            | Op::SliceCols(a, _)
            | Op::SliceRows(a, _)
            | Op::Sum(a) => vec![*a],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
            Op::BceMean { pred, .. } => vec![*pred],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Append-only tape of tensor operations.
///
/// Nodes are stored in creation order, which is a topological order, so
/// [`Graph::backward`] simply walks the tape in reverse. Saved activations
/// for sigmoid, tanh and softmax are the node outputs themselves.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// All trainable leaves, in creation order.
    pub fn trainable_leaves(&self) -> Vec<Var> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.requires_grad && matches!(n.op, Op::Leaf))
            .map(|(i, _)| Var(i))
            .collect()
    }

    /// Inputs of the op that produced `v`.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(id)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let data = gemm(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        let rg = self.any_grad(&[a]);
        self.push(t, Op::Transpose(a), rg)
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                match kind {
                    Binary::Add => "add",
                    Binary::Sub => "sub",
                    Binary::Mul => "mul",
                },
                ta.shape(),
                tb.shape(),
            ));
        }
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(t, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// `a + 1·bias` where `bias` is a single row; the only broadcast allowed.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let (br, bn) = self.dims(bias);
        if br != 1 || bn != n {
            return Err(Error::shape(
                "add_row",
                self.value(a).shape(),
                self.value(bias).shape(),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut t = self.value(a).clone();
        for i in 0..m {
            for (v, bv) in t.data_mut()[i * n..(i + 1) * n].iter_mut().zip(&b) {
                *v += bv;
            }
        }
        let rg = self.any_grad(&[a, bias]);
        Ok(self.push(t, Op::AddRow(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|v| *v *= s);
        let rg = self.any_grad(&[a]);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Square => |x| x * x,
        };
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|v| *v = f(*v));
        let rg = self.any_grad(&[a]);
        self.push(t, Op::Unary(kind, a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        if src.data().iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax_rows: NaN input".into()));
        }
        let t = softmax_rows(src);
        let rg = self.any_grad(&[a]);
        Ok(self.push(t, Op::SoftmaxRows(a), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Usage("concat_cols: no parts".into()))?;
        if parts.len() == 1 {
            return Ok(first);
        }
        let rows = self.dims(first).0;
        for &p in parts {
            if self.dims(p).0 != rows {
                return Err(Error::shape(
                    "concat_cols",
                    self.value(first).shape(),
                    self.value(p).shape(),
                ));
            }
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::matrix(rows, total, data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Usage("concat_rows: no parts".into()))?;
        if parts.len() == 1 {
            return Ok(first);
        }
        let cols = self.dims(first).1;
        let mut data = Vec::new();
        for &p in parts {
            if self.dims(p).1 != cols {
                return Err(Error::shape(
                    "concat_rows",
                    self.value(first).shape(),
                    self.value(p).shape(),
                ));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols;
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::matrix(rows, cols, data)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if width == 0 || start + width > n {
            return Err(Error::shape("slice_cols", &[m, n], &[start, width]));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(m * width);
        for r in 0..m {
            data.extend_from_slice(&src.row_slice(r)[start..start + width]);
        }
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(m, width, data)?, Op::SliceCols(a, start), rg))
    }

    /// Rows `start..start + height`.
    pub fn slice_rows(&mut self, a: Var, start: usize, height: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if height == 0 || start + height > m {
            return Err(Error::shape("slice_rows", &[m, n], &[start, height]));
        }
        let data = self.value(a).data()[start * n..(start + height) * n].to_vec();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::matrix(height, n, data)?, Op::SliceRows(a, start), rg))
    }

    /// Sum of all entries as a `1×1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean binary cross-entropy of `pred` against fixed `target`, with the
    /// prediction clamped to `[eps, 1 - eps]`.
    pub fn bce_mean(&mut self, pred: Var, target: &[f64], eps: f64) -> Result<Var> {
        let p = self.value(pred);
        if p.len() != target.len() {
            return Err(Error::shape("bce", p.shape(), &[target.len()]));
        }
        let n = target.len() as f64;
        let mut acc = 0.0;
        for (&pv, &y) in p.data().iter().zip(target) {
            let q = pv.clamp(eps, 1.0 - eps);
            acc += y * q.ln() + (1.0 - y) * (1.0 - q).ln();
        }
        let rg = self.any_grad(&[pred]);
        Ok(self.push(
            Tensor::scalar(-acc / n),
            Op::BceMean {
                pred,
                target: target.to_vec(),
                eps,
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar output. Clears previous gradients and
    /// returns the number of nodes whose backward rule ran.
    pub fn backward(&mut self, out: Var) -> Result<usize> {
        if self.value(out).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(out).shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[out.0].grad = Some(Tensor::scalar(1.0));
        let mut visited = 0;
        for id in (0..=out.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(dy) = self.nodes[id].grad.take() else {
                continue;
            };
            visited += 1;
            self.propagate(id, &dy);
            self.nodes[id].grad = Some(dy);
        }
        Ok(visited)
    }

    fn accumulate(&mut self, v: Var, delta: Vec<f64>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => g.data_mut().iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            None => {
                node.grad = Some(
                    Tensor::new(node.value.shape().to_vec(), delta)
                        .expect("gradient shape matches value"),
                )
            }
        }
    }

    fn propagate(&mut self, id: usize, dy: &Tensor) {
        let op = self.nodes[id].op.clone();
        let g = dy.data();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(a);
                let n = self.dims(b).1;
                if self.requires_grad(a) {
                    let da = gemm_nt(g, self.value(b).data(), m, n, k);
                    self.accumulate(a, da);
                }
                if self.requires_grad(b) {
                    let db = gemm_tn(self.value(a).data(), g, m, k, n);
                    self.accumulate(b, db);
                }
            }
            Op::Transpose(a) => {
                let da = dy.transpose().into_data();
                self.accumulate(a, da);
            }
            Op::Binary(kind, a, b) => match kind {
                Binary::Add => {
                    self.accumulate(a, g.to_vec());
                    self.accumulate(b, g.to_vec());
                }
                Binary::Sub => {
                    self.accumulate(a, g.to_vec());
                    self.accumulate(b, g.iter().map(|v| -v).collect());
                }
                Binary::Mul => {
                    let da = zip_map(g, self.value(b).data(), |x, y| x * y);
                    let db = zip_map(g, self.value(a).data(), |x, y| x * y);
                    self.accumulate(a, da);
                    self.accumulate(b, db);
                }
            },
            Op::AddRow(a, bias) => {
                self.accumulate(a, g.to_vec());
                let n = dy.cols();
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                self.accumulate(bias, db);
            }
            Op::Scale(a, s) => self.accumulate(a, g.iter().map(|v| v * s).collect()),
            Op::Unary(kind, a) => {
                let y = self.nodes[id].value.data();
                let da = match kind {
                    Unary::Sigmoid => zip_map(g, y, |d, y| d * y * (1.0 - y)),
                    Unary::Tanh => zip_map(g, y, |d, y| d * (1.0 - y * y)),
                    Unary::Square => zip_map(g, self.value(a).data(), |d, x| 2.0 * d * x),
                };
                self.accumulate(a, da);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[id].value;
                let n = y.cols();
                let mut da = vec![0.0; y.len()];
                for (r, (yr, gr)) in y.data().chunks(n).zip(g.chunks(n)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        da[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(a, da);
            }
            Op::ConcatCols(parts) => {
                let total = dy.cols();
                let mut offset = 0;
                for p in parts {
                    let (m, w) = self.dims(p);
                    let mut dp = Vec::with_capacity(m * w);
                    for r in 0..m {
                        dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    self.accumulate(p, dp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(p).len();
                    self.accumulate(p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.dims(a);
                let w = dy.cols();
                let mut da = vec![0.0; m * n];
                for r in 0..m {
                    da[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                self.accumulate(a, da);
            }
            Op::SliceRows(a, start) => {
                let (m, n) = self.dims(a);
                let mut da = vec![0.0; m * n];
                da[start * n..start * n + g.len()].copy_from_slice(g);
                self.accumulate(a, da);
            }
            Op::Sum(a) => {
                let len = self.value(a).len();
                self.accumulate(a, vec![g[0]; len]);
            }
            Op::BceMean { pred, target, eps } => {
                let n = target.len() as f64;
                let da = self
                    .value(pred)
                    .data()
                    .iter()
                    .zip(&target)
                    .map(|(&p, &y)| {
                        if p < eps || p > 1.0 - eps {
                            0.0
                        } else {
                            -g[0] / n * (y / p - (1.0 - y) / (1.0 - p))
                        }
                    })
                    .collect();
                self.accumulate(pred, da);
            }
        }
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_rows(a: &Tensor) -> Tensor {
    let n = a.cols();
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}
