use std::fmt;

use super::kernels::{self, ConvGeom};
use super::{gemm, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kind, used for provenance in error reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Conv2d,
    MaxPool2,
    GlobalAvgPool,
    Reshape,
    MatMul,
    MatMulNt,
    AddBias,
    Relu,
    Softmax,
    LogSoftmax,
    Log,
    Exp,
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    L2NormalizeRows,
    GatherRows,
    SumAll,
    MeanAll,
    SumRows,
    MaxRows,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    MaxPool2 { x: Var, arg: Vec<u32> },
    GlobalAvgPool { x: Var, hw: usize },
    Reshape { x: Var },
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatMulNt { a: Var, b: Var, m: usize, k: usize, n: usize },
    AddBias { x: Var, b: Var },
    Relu { x: Var },
    Softmax { x: Var },
    LogSoftmax { x: Var },
    Log { x: Var },
    Exp { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, c: T },
    AddScalar { x: Var },
    L2NormalizeRows { x: Var, norms: Vec<T>, clamped: Vec<bool> },
    GatherRows { x: Var, idx: Vec<usize> },
    SumAll { x: Var },
    MeanAll { x: Var },
    SumRows { x: Var },
    MaxRows { x: Var, arg: Vec<usize> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::MaxPool2 { .. } => OpKind::MaxPool2,
            Op::GlobalAvgPool { .. } => OpKind::GlobalAvgPool,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::MatMulNt { .. } => OpKind::MatMulNt,
            Op::AddBias { .. } => OpKind::AddBias,
            Op::Relu { .. } => OpKind::Relu,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LogSoftmax { .. } => OpKind::LogSoftmax,
            Op::Log { .. } => OpKind::Log,
            Op::Exp { .. } => OpKind::Exp,
            Op::Add { .. } => OpKind::Add,
            Op::Sub { .. } => OpKind::Sub,
            Op::Mul { .. } => OpKind::Mul,
            Op::Scale { .. } => OpKind::Scale,
            Op::AddScalar { .. } => OpKind::AddScalar,
            Op::L2NormalizeRows { .. } => OpKind::L2NormalizeRows,
            Op::GatherRows { .. } => OpKind::GatherRows,
            Op::SumAll { .. } => OpKind::SumAll,
            Op::MeanAll { .. } => OpKind::MeanAll,
            Op::SumRows { .. } => OpKind::SumRows,
            Op::MaxRows { .. } => OpKind::MaxRows,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of primitive applications for one forward pass.
///
/// Nodes are stored in creation order, which is a topological order; the
/// backward pass walks them once in reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    clamp_warnings: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Row-norm floor used by [`Tape::l2_normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), clamp_warnings: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Rows whose norm fell below the floor in `l2_normalize_rows`.
    pub fn clamp_warnings(&self) -> usize {
        self.clamp_warnings
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// First node (in creation order) holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<(Var, OpKind)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.all_finite())
            .map(|(i, n)| (Var(i), n.op.kind()))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.value(v).shape();
        if s.len() != 2 {
            return Err(Error::shape(op, format!("expected a matrix, got {:?}", s)));
        }
        Ok((s[0], s[1]))
    }

    /// Stride-1 convolution of `x: B x Cin x H x W` with `w: Cout x Cin x kh x kw`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || bs != [ws[0]] {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?}, weight {:?}, bias {:?}", xs, ws, bs),
            ));
        }
        let geom = ConvGeom {
            batch: xs[0],
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ws[0],
            kh: ws[2],
            kw: ws[3],
            pad,
        };
        if xs[2] + 2 * pad < ws[2] || xs[3] + 2 * pad < ws[3] {
            return Err(Error::shape("conv2d", format!("kernel {:?} larger than padded input {:?}", ws, xs)));
        }
        let y = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let t = Tensor::new(&[geom.batch, geom.c_out, geom.out_h(), geom.out_w()], y)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// 2x2 stride-2 max pooling; spatial dims must be even.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(Error::shape("max_pool2", format!("input {:?} needs even spatial dims", s)));
        }
        let (y, arg) = kernels::maxpool2_forward(self.value(x).data(), s[0] * s[1], s[2], s[3]);
        let t = Tensor::new(&[s[0], s[1], s[2] / 2, s[3] / 2], y)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::MaxPool2 { x, arg }, rg))
    }

    /// `B x C x H x W -> B x C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 4 {
            return Err(Error::shape("global_avg_pool", format!("input {:?}", s)));
        }
        let hw = s[2] * s[3];
        let y = kernels::global_avg_pool(self.value(x).data(), s[0] * s[1], hw);
        let t = Tensor::new(&[s[0], s[1]], y)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::GlobalAvgPool { x, hw }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    /// `a (m x k) * b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("{}x{} * {}x{}", m, k, k2, n)));
        }
        let mut y = vec![T::zero(); m * n];
        gemm(false, false, m, n, k, T::one(), self.value(a).data(), self.value(b).data(), T::zero(), &mut y);
        let t = Tensor::new(&[m, n], y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MatMul { a, b, m, k, n }, rg))
    }

    /// `a (m x k) * b^T` for `b: n x k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul_nt", a)?;
        let (n, k2) = self.matrix_dims("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", format!("{}x{} * ({}x{})^T", m, k, n, k2)));
        }
        let mut y = vec![T::zero(); m * n];
        gemm(false, true, m, n, k, T::one(), self.value(a).data(), self.value(b).data(), T::zero(), &mut y);
        let t = Tensor::new(&[m, n], y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MatMulNt { a, b, m, k, n }, rg))
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(b).shape() != [c] {
            return Err(Error::shape(
                "add_bias",
                format!("input {:?}, bias {:?}", self.value(x).shape(), self.value(b).shape()),
            ));
        }
        let mut t = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for row in t.data_mut().chunks_mut(c) {
            for (v, bv) in row.iter_mut().zip(&bias) {
                *v = *v + *bv;
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(t, Op::AddBias { x, b }, rg))
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let mut t = self.value(x).clone();
        for v in t.data_mut() {
            *v = f(*v);
        }
        let rg = self.rg(&[x]);
        self.push(t, op, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, |v| v.exp(), Op::Exp { x })
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, |v| v.ln(), Op::Log { x })
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.map(x, |v| v * c, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.map(x, |v| v + c, Op::AddScalar { x })
    }

    /// Softmax along the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let y = kernels::softmax_rows(v.data(), v.cols());
        let t = Tensor::new(v.shape(), y).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::Softmax { x }, rg)
    }

    /// Log-softmax along the last dimension.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let y = kernels::log_softmax_rows(v.data(), v.cols());
        let t = Tensor::new(v.shape(), y).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::LogSoftmax { x }, rg)
    }

    fn zip(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let mut t = self.value(a).clone();
        for (v, w) in t.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *v = f(*v, *w);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    /// Divides every row by `max(||row||_2, 1e-12)`.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let eps = T::lit(NORM_EPS);
        let mut t = self.value(x).clone();
        let c = t.cols();
        let mut norms = Vec::with_capacity(t.rows());
        let mut clamped = Vec::with_capacity(t.rows());
        for row in t.data_mut().chunks_mut(c) {
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            let is_clamped = !(n >= eps);
            let d = if is_clamped { eps } else { n };
            for v in row.iter_mut() {
                *v = *v / d;
            }
            norms.push(d);
            clamped.push(is_clamped);
        }
        self.clamp_warnings += clamped.iter().filter(|&&c| c).count();
        let rg = self.rg(&[x]);
        self.push(t, Op::L2NormalizeRows { x, norms, clamped }, rg)
    }

    /// Selects rows of `x` (viewed as a matrix over its last dim) by index.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let (r, c) = (v.rows(), v.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("index {} out of {} rows", bad, r)));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(v.row(i));
        }
        let t = Tensor::new(&[idx.len(), c], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::GatherRows { x, idx: idx.to_vec() }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::from_usize(v.numel()).unwrap();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::MeanAll { x }, rg)
    }

    /// Sum over the last dimension: `R x C -> R`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data: Vec<T> = v.data().chunks(v.cols()).map(|r| r.iter().copied().sum()).collect();
        let t = Tensor::new(&[data.len()], data).expect("rows");
        let rg = self.rg(&[x]);
        self.push(t, Op::SumRows { x }, rg)
    }

    /// Max over the last dimension: `R x C -> R`.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let c = v.cols();
        let mut arg = Vec::with_capacity(v.rows());
        let mut data = Vec::with_capacity(v.rows());
        for (r, row) in v.data().chunks(c).enumerate() {
            let j = kernels::argmax(row);
            arg.push(r * c + j);
            data.push(row[j]);
        }
        let t = Tensor::new(&[data.len()], data).expect("rows");
        let rg = self.rg(&[x]);
        self.push(t, Op::MaxRows { x, arg }, rg)
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[id].take() else { continue };
            self.backward_node(node, &gy, &mut grads);
            grads[id] = Some(gy);
        }
        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| match (g, &n.op) {
                    (Some(g), Op::Leaf) if n.requires_grad => Some(Tensor::new(n.value.shape(), g).expect("grad shape")),
                    _ => None,
                })
                .collect(),
        })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, d) in g.iter_mut().zip(delta) {
                    *a = *a + d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn backward_node(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(geom, val(*x), val(*w), gy, self.wants(*x));
                if let Some(dx) = dx {
                    self.acc(grads, *x, dx);
                }
                self.acc(grads, *w, dw);
                self.acc(grads, *b, db);
            }
            Op::MaxPool2 { x, arg } => {
                let mut dx = vec![T::zero(); val(*x).len()];
                for (g, &i) in gy.iter().zip(arg) {
                    dx[i as usize] = dx[i as usize] + *g;
                }
                self.acc(grads, *x, dx);
            }
            Op::GlobalAvgPool { x, hw } => {
                let inv = T::one() / T::from_usize(*hw).unwrap();
                let mut dx = Vec::with_capacity(gy.len() * hw);
                for g in gy {
                    dx.extend(std::iter::repeat_n(*g * inv, *hw));
                }
                self.acc(grads, *x, dx);
            }
            Op::Reshape { x } => self.acc(grads, *x, gy.to_vec()),
            Op::MatMul { a, b, m, k, n } => {
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(false, true, *m, *k, *n, T::one(), gy, val(*b), T::zero(), &mut da);
                    self.acc(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm(true, false, *k, *n, *m, T::one(), val(*a), gy, T::zero(), &mut db);
                    self.acc(grads, *b, db);
                }
            }
            Op::MatMulNt { a, b, m, k, n } => {
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm(false, false, *m, *k, *n, T::one(), gy, val(*b), T::zero(), &mut da);
                    self.acc(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); n * k];
                    gemm(true, false, *n, *k, *m, T::one(), gy, val(*a), T::zero(), &mut db);
                    self.acc(grads, *b, db);
                }
            }
            Op::AddBias { x, b } => {
                self.acc(grads, *x, gy.to_vec());
                if self.wants(*b) {
                    let c = val(*b).len();
                    let mut db = vec![T::zero(); c];
                    for row in gy.chunks(c) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d = *d + *g;
                        }
                    }
                    self.acc(grads, *b, db);
                }
            }
            Op::Relu { x } => {
                let dx = gy.iter().zip(val(*x)).map(|(g, v)| if *v > T::zero() { *g } else { T::zero() }).collect();
                self.acc(grads, *x, dx);
            }
            Op::Exp { x } => {
                let dx = gy.iter().zip(y).map(|(g, e)| *g * *e).collect();
                self.acc(grads, *x, dx);
            }
            Op::Log { x } => {
                let dx = gy.iter().zip(val(*x)).map(|(g, v)| *g / *v).collect();
                self.acc(grads, *x, dx);
            }
            Op::Scale { x, c } => {
                let dx = gy.iter().map(|g| *g * *c).collect();
                self.acc(grads, *x, dx);
            }
            Op::AddScalar { x } => self.acc(grads, *x, gy.to_vec()),
            Op::Softmax { x } => {
                let c = node.value.cols();
                let mut dx = Vec::with_capacity(gy.len());
                for (gr, yr) in gy.chunks(c).zip(y.chunks(c)) {
                    let dot: T = gr.iter().zip(yr).map(|(g, p)| *g * *p).sum();
                    dx.extend(gr.iter().zip(yr).map(|(g, p)| *p * (*g - dot)));
                }
                self.acc(grads, *x, dx);
            }
            Op::LogSoftmax { x } => {
                let c = node.value.cols();
                let mut dx = Vec::with_capacity(gy.len());
                for (gr, yr) in gy.chunks(c).zip(y.chunks(c)) {
                    let s: T = gr.iter().copied().sum();
                    dx.extend(gr.iter().zip(yr).map(|(g, ly)| *g - ly.exp() * s));
                }
                self.acc(grads, *x, dx);
            }
            Op::Add { a, b } => {
                self.acc(grads, *a, gy.to_vec());
                self.acc(grads, *b, gy.to_vec());
            }
            Op::Sub { a, b } => {
                self.acc(grads, *a, gy.to_vec());
                self.acc(grads, *b, gy.iter().map(|g| -*g).collect());
            }
            Op::Mul { a, b } => {
                if self.wants(*a) {
                    self.acc(grads, *a, gy.iter().zip(val(*b)).map(|(g, v)| *g * *v).collect());
                }
                if self.wants(*b) {
                    self.acc(grads, *b, gy.iter().zip(val(*a)).map(|(g, v)| *g * *v).collect());
                }
            }
            Op::L2NormalizeRows { x, norms, clamped } => {
                let c = node.value.cols();
                let mut dx = Vec::with_capacity(gy.len());
                for ((gr, yr), (n, cl)) in gy.chunks(c).zip(y.chunks(c)).zip(norms.iter().zip(clamped)) {
                    if *cl {
                        dx.extend(gr.iter().map(|g| *g / *n));
                    } else {
                        let dot: T = gr.iter().zip(yr).map(|(g, v)| *g * *v).sum();
                        dx.extend(gr.iter().zip(yr).map(|(g, v)| (*g - *v * dot) / *n));
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::GatherRows { x, idx } => {
                let c = node.value.cols();
                let mut dx = vec![T::zero(); val(*x).len()];
                for (gr, &i) in gy.chunks(c).zip(idx) {
                    for (d, g) in dx[i * c..(i + 1) * c].iter_mut().zip(gr) {
                        *d = *d + *g;
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::SumAll { x } => {
                let n = val(*x).len();
                self.acc(grads, *x, vec![gy[0]; n]);
            }
            Op::MeanAll { x } => {
                let n = val(*x).len();
                self.acc(grads, *x, vec![gy[0] / T::from_usize(n).unwrap(); n]);
            }
            Op::SumRows { x } => {
                let c = self.nodes[x.0].value.cols();
                let mut dx = Vec::with_capacity(gy.len() * c);
                for g in gy {
                    dx.extend(std::iter::repeat_n(*g, c));
                }
                self.acc(grads, *x, dx);
            }
            Op::MaxRows { x, arg } => {
                let mut dx = vec![T::zero(); val(*x).len()];
                for (g, &i) in gy.iter().zip(arg) {
                    dx[i] = dx[i] + *g;
                }
                self.acc(grads, *x, dx);
            }
        }
    }
}

/// Gradients of trainable leaves after [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` for constants and for leaves the loss does not depend on.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_gradient_is_a_gate() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(&[2], vec![-1.0, 2.0]).unwrap());
        let y = tape.relu(x);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn identity_kernel_is_identity_map() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..2 * 3 * 4 * 4).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = tape.constant(Tensor::new(&[2, 3, 4, 4], data.clone()).unwrap());
        let mut w = vec![0.0; 3 * 3];
        for c in 0..3 {
            w[c * 3 + c] = 1.0;
        }
        let w = tape.constant(Tensor::new(&[3, 3, 1, 1], w).unwrap());
        let b = tape.constant(Tensor::zeros(&[3]));
        let y = tape.conv2d(x, w, b, 0).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }

    #[test]
    fn normalize_three_four_five() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap());
        let y = tape.l2_normalize_rows(x);
        assert_eq!(tape.value(y).data(), &[0.6, 0.8]);
    }

    #[test]
    fn zero_row_is_clamped_and_counted() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[2, 3]));
        let y = tape.l2_normalize_rows(x);
        assert_eq!(tape.clamp_warnings(), 2);
        assert!(tape.value(y).all_finite());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::full(&[3], 2.0));
        let c = tape.constant(Tensor::full(&[3], 5.0));
        let p = tape.mul(a, c).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[5.0; 3]);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        let err = tape.add(a, c).unwrap_err();
        assert!(err.to_string().contains("add") && err.to_string().contains("[2, 3]"), "{err}");
    }
}
