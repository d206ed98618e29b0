//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The primitive set covers everything the forecasting layers need:
//! matmul / batched matmul / sparse matmul, broadcast arithmetic, concat
//! along the last axis, transpose / permute / reshape / slice, reductions,
//! the usual activations, a numerically stable softmax, masked fill for
//! neighbor-restricted attention, and row lookup for embedding tables.
//!
//! Tensors are cheap handles (`Clone` shares the buffer). Gradients
//! accumulate by summation into leaves created with [`Tensor::param`];
//! see [`tape`] for the recording lifecycle.

pub mod check;
mod kernels;
mod sparse;
pub mod tape;

pub use sparse::SparseMatrix;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use crate::error::{Error, Result};
use tape::Op;

pub(crate) struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: Cell<Option<(u64, usize)>>,
}

impl Inner {
    fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Boolean fill pattern for [`Tensor::masked_fill`]. `true` entries are
/// replaced by the fill value; the mask broadcasts over leading axes.
#[derive(Debug, Clone)]
pub struct Mask {
    shape: Vec<usize>,
    fill: Vec<bool>,
}

impl Mask {
    pub fn new(shape: &[usize], fill: Vec<bool>) -> Result<Mask> {
        if kernels::numel(shape) != fill.len() {
            return Err(Error::shape(
                "mask",
                format!("shape {:?} does not match {} entries", shape, fill.len()),
            ));
        }
        Ok(Mask { shape: shape.to_vec(), fill })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
}

#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

fn make(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
    Tensor {
        inner: Rc::new(Inner {
            shape,
            data: RefCell::new(data),
            requires_grad,
            grad: RefCell::new(None),
            node: Cell::new(None),
        }),
    }
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if kernels::numel(shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} wants {} values, got {}", shape, kernels::numel(shape), data.len()),
            ));
        }
        Ok(make(data, shape.to_vec(), false))
    }

    /// Leaf tensor that accumulates gradients.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if kernels::numel(shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} wants {} values, got {}", shape, kernels::numel(shape), data.len()),
            ));
        }
        Ok(make(data, shape.to_vec(), true))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        make(vec![0.0; kernels::numel(shape)], shape.to_vec(), false)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        make(vec![value; kernels::numel(shape)], shape.to_vec(), false)
    }

    pub fn scalar(value: f64) -> Tensor {
        make(vec![value], Vec::new(), false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn ndim(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Extract the single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape("item", format!("tensor has shape {:?}", self.shape())));
        }
        Ok(self.inner.data.borrow()[0])
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Replace the buffer contents (same length). Intended for optimizer
    /// updates and checkpoint restores between training steps; the change
    /// is visible to every handle sharing this tensor.
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        let mut d = self.inner.data.borrow_mut();
        if values.len() != d.len() {
            return Err(Error::shape(
                "set_data",
                format!("expected {} values, got {}", d.len(), values.len()),
            ));
        }
        d.copy_from_slice(values);
        Ok(())
    }

    pub fn with_data_mut<R>(&self, f: impl FnOnce(&mut [f64]) -> R) -> R {
        f(&mut self.inner.data.borrow_mut())
    }

    /// Detached copy: same values, no gradient tracking, no tape link.
    pub fn detach(&self) -> Tensor {
        make(self.to_vec(), self.inner.shape.clone(), false)
    }

    fn op_output(&self, op: Op, inputs: &[&Tensor], data: Vec<f64>, shape: Vec<usize>) -> Tensor {
        debug_assert_eq!(kernels::numel(&shape), data.len());
        let out = make(data, shape, false);
        let _ = self; // inputs[0] is always self; kept for call-site symmetry
        tape::record(op, inputs, &out);
        out
    }

    // ── binary ops ─────────────────────────────────────────────────────

    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.ndim() != 2 || rhs.ndim() != 2 {
            return Err(Error::shape(
                "matmul",
                format!("need 2-D operands, got {:?} x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (rhs.shape()[0], rhs.shape()[1]);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims differ: {:?} x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(&self.inner.data.borrow(), &rhs.inner.data.borrow(), m, k, n, &mut out);
        Ok(self.op_output(Op::MatMul, &[self, rhs], out, vec![m, n]))
    }

    /// Batched matmul: [B,m,k] x [B,k,n] -> [B,m,n].
    pub fn bmm(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.ndim() != 3 || rhs.ndim() != 3 {
            return Err(Error::shape(
                "bmm",
                format!("need 3-D operands, got {:?} x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let (b, m, k) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (b2, k2, n) = (rhs.shape()[0], rhs.shape()[1], rhs.shape()[2]);
        if b != b2 || k != k2 {
            return Err(Error::shape(
                "bmm",
                format!("incompatible shapes {:?} x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let a = self.inner.data.borrow();
        let bb = rhs.inner.data.borrow();
        let mut out = vec![0.0; b * m * n];
        for s in 0..b {
            kernels::matmul(
                &a[s * m * k..(s + 1) * m * k],
                &bb[s * k * n..(s + 1) * k * n],
                m,
                k,
                n,
                &mut out[s * m * n..(s + 1) * m * n],
            );
        }
        drop((a, bb));
        Ok(self.op_output(Op::Bmm, &[self, rhs], out, vec![b, m, n]))
    }

    /// Sparse-dense product `M * x` over the second-to-last axis of `x`
    /// ([..., cols, d] -> [..., rows, d]). Differentiable w.r.t. `x`.
    pub fn spmm(mat: &Arc<SparseMatrix>, x: &Tensor) -> Result<Tensor> {
        if x.ndim() < 2 {
            return Err(Error::shape("spmm", format!("need >= 2-D input, got {:?}", x.shape())));
        }
        let ndim = x.ndim();
        let d = x.shape()[ndim - 1];
        let node_axis = x.shape()[ndim - 2];
        if node_axis != mat.cols() {
            return Err(Error::shape(
                "spmm",
                format!("matrix has {} columns, input rows are {}", mat.cols(), node_axis),
            ));
        }
        let batch: usize = x.shape()[..ndim - 2].iter().product();
        let rows = mat.rows();
        let xd = x.inner.data.borrow();
        let mut out = vec![0.0; batch * rows * d];
        for s in 0..batch {
            mat.mul_dense(
                &xd[s * mat.cols() * d..(s + 1) * mat.cols() * d],
                d,
                &mut out[s * rows * d..(s + 1) * rows * d],
            );
        }
        drop(xd);
        let mut shape = x.shape().to_vec();
        shape[ndim - 2] = rows;
        Ok(x.op_output(Op::SpMM(mat.clone()), &[x], out, shape))
    }

    fn broadcast_op(
        &self,
        rhs: &Tensor,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let out_shape = kernels::broadcast_shape(self.shape(), rhs.shape()).ok_or_else(|| {
            Error::shape(name, format!("cannot broadcast {:?} with {:?}", self.shape(), rhs.shape()))
        })?;
        let out = kernels::broadcast_binary(
            &self.inner.data.borrow(),
            self.shape(),
            &rhs.inner.data.borrow(),
            rhs.shape(),
            &out_shape,
            f,
        );
        Ok(self.op_output(op, &[self, rhs], out, out_shape))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.broadcast_op(rhs, Op::Add, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.broadcast_op(rhs, Op::Sub, "sub", |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.broadcast_op(rhs, Op::Mul, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.inner.data.borrow().iter().map(|v| v * c).collect();
        self.op_output(Op::Scale(c), &[self], out, self.shape().to_vec())
    }

    // ── unary / shaping ────────────────────────────────────────────────

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let out: Vec<f64> = self.inner.data.borrow().iter().map(|&v| f(v)).collect();
        self.op_output(op, &[self], out, self.shape().to_vec())
    }

    pub fn abs(&self) -> Tensor {
        self.unary(Op::Abs, f64::abs)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Op::Sigmoid, |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(Op::Tanh, f64::tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Op::Relu, |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(Op::LeakyRelu(slope), move |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.inner.data.borrow().iter().sum();
        self.op_output(Op::SumAll, &[self], vec![s], Vec::new())
    }

    pub fn mean_all(&self) -> Tensor {
        let d = self.inner.data.borrow();
        let s: f64 = d.iter().sum();
        let n = d.len() as f64;
        drop(d);
        self.op_output(Op::MeanAll, &[self], vec![s / n], Vec::new())
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(Error::shape("transpose", format!("need 2-D input, got {:?}", self.shape())));
        }
        let (data, shape) = kernels::permute(&self.inner.data.borrow(), self.shape(), &[1, 0]);
        Ok(self.op_output(Op::Transpose, &[self], data, shape))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let ndim = self.ndim();
        let mut seen = vec![false; ndim];
        if perm.len() != ndim || perm.iter().any(|&p| p >= ndim || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(
                "permute",
                format!("{:?} is not a permutation of {} axes", perm, ndim),
            ));
        }
        let (data, shape) = kernels::permute(&self.inner.data.borrow(), self.shape(), perm);
        Ok(self.op_output(Op::Permute(perm.to_vec()), &[self], data, shape))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if kernels::numel(shape) != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} ({} values) -> {:?}", self.shape(), self.numel(), shape),
            ));
        }
        let data = self.inner.data.borrow().clone();
        Ok(self.op_output(Op::Reshape, &[self], data, shape.to_vec()))
    }

    /// Contiguous range along one axis, other axes kept.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        if axis >= self.ndim() || start >= end || end > self.shape()[axis] {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{end} on axis {axis} of {:?}", self.shape()),
            ));
        }
        let in_shape = self.shape();
        let outer: usize = in_shape[..axis].iter().product();
        let inner: usize = in_shape[axis + 1..].iter().product();
        let len = end - start;
        let d = self.inner.data.borrow();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * in_shape[axis] + start) * inner;
            out.extend_from_slice(&d[src..src + len * inner]);
        }
        drop(d);
        let mut shape = in_shape.to_vec();
        shape[axis] = len;
        Ok(self.op_output(Op::Slice { axis, start }, &[self], out, shape))
    }

    /// Row lookup into a 2-D table (embedding gather). Gradients
    /// scatter-add back into the selected rows.
    pub fn rows(&self, indices: &[usize]) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(Error::shape("rows", format!("need a 2-D table, got {:?}", self.shape())));
        }
        let (v, d) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::shape("rows", format!("index {bad} out of range for {v} rows")));
        }
        let data = self.inner.data.borrow();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&data[i * d..(i + 1) * d]);
        }
        drop(data);
        Ok(self.op_output(
            Op::Rows(Arc::new(indices.to_vec())),
            &[self],
            out,
            vec![indices.len(), d],
        ))
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.ndim() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} out of range for {:?}", self.shape()),
            ));
        }
        let out = kernels::softmax(&self.inner.data.borrow(), self.shape(), axis);
        Ok(self.op_output(Op::Softmax(axis), &[self], out, self.shape().to_vec()))
    }

    /// Replace entries where the mask is `true` with `value`. The mask shape
    /// must be a suffix of the tensor shape (it repeats over leading axes).
    pub fn masked_fill(&self, mask: &Mask, value: f64) -> Result<Tensor> {
        let ms = mask.shape();
        let ts = self.shape();
        if ms.len() > ts.len() || &ts[ts.len() - ms.len()..] != ms {
            return Err(Error::shape(
                "masked_fill",
                format!("mask {:?} is not a suffix of {:?}", ms, ts),
            ));
        }
        let block = mask.fill.len();
        let out: Vec<f64> = self
            .inner
            .data
            .borrow()
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask.fill[i % block] { value } else { v })
            .collect();
        Ok(self.op_output(
            Op::MaskedFill(Arc::new(mask.clone())),
            &[self],
            out,
            ts.to_vec(),
        ))
    }

    /// Concatenate along the last axis; all other axes must match.
    pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs".to_string()))?;
        let lead = &first.shape()[..first.ndim() - 1];
        let mut total = 0usize;
        for p in parts {
            if p.ndim() != first.ndim() || &p.shape()[..p.ndim() - 1] != lead {
                return Err(Error::shape(
                    "concat",
                    format!("leading axes differ: {:?} vs {:?}", first.shape(), p.shape()),
                ));
            }
            total += p.shape()[p.ndim() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        let borrows: Vec<_> = parts.iter().map(|p| p.inner.data.borrow()).collect();
        for row in 0..rows {
            for (p, d) in parts.iter().zip(&borrows) {
                let w = p.shape()[p.ndim() - 1];
                out.extend_from_slice(&d[row * w..(row + 1) * w]);
            }
        }
        drop(borrows);
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(first.op_output(Op::ConcatLast, parts, out, shape))
    }
}

/// Primitive op identifiers for the dynamic dispatch entry point.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimitiveOp {
    MatMul,
    Bmm,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Abs,
    ConcatLast,
    Transpose,
    Sum,
    Mean,
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Exp,
    Softmax(usize),
    Reshape(Vec<usize>),
    Slice { axis: usize, start: usize, end: usize },
}

impl std::str::FromStr for PrimitiveOp {
    type Err = Error;

    /// Parse a primitive id. Parameterized kinds take `:`-separated
    /// arguments, e.g. `leaky-relu:0.2`, `softmax:1`, `reshape:2x3`.
    fn from_str(s: &str) -> Result<PrimitiveOp> {
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or("");
        let args: Vec<&str> = parts.collect();
        let bad_args = || Error::Autodiff(format!("bad arguments for primitive op '{s}'"));
        let op = match head {
            "matmul" => PrimitiveOp::MatMul,
            "bmm" => PrimitiveOp::Bmm,
            "add" => PrimitiveOp::Add,
            "sub" => PrimitiveOp::Sub,
            "mul" => PrimitiveOp::Mul,
            "scalar-mul" => {
                PrimitiveOp::Scale(args.first().and_then(|a| a.parse().ok()).ok_or_else(bad_args)?)
            }
            "abs" => PrimitiveOp::Abs,
            "concat-last" => PrimitiveOp::ConcatLast,
            "transpose" => PrimitiveOp::Transpose,
            "sum" => PrimitiveOp::Sum,
            "mean" => PrimitiveOp::Mean,
            "sigmoid" => PrimitiveOp::Sigmoid,
            "tanh" => PrimitiveOp::Tanh,
            "relu" => PrimitiveOp::Relu,
            "leaky-relu" => {
                PrimitiveOp::LeakyRelu(args.first().and_then(|a| a.parse().ok()).ok_or_else(bad_args)?)
            }
            "exp" => PrimitiveOp::Exp,
            "softmax" => {
                PrimitiveOp::Softmax(args.first().and_then(|a| a.parse().ok()).ok_or_else(bad_args)?)
            }
            "reshape" => {
                let dims: Option<Vec<usize>> =
                    args.first().map(|a| a.split('x').map(|d| d.parse().ok()).collect()).unwrap_or(None);
                PrimitiveOp::Reshape(dims.ok_or_else(bad_args)?)
            }
            "slice" => {
                if args.len() != 3 {
                    return Err(bad_args());
                }
                let nums: Option<Vec<usize>> = args.iter().map(|a| a.parse().ok()).collect();
                let nums = nums.ok_or_else(bad_args)?;
                PrimitiveOp::Slice { axis: nums[0], start: nums[1], end: nums[2] }
            }
            _ => return Err(Error::Autodiff(format!("unknown primitive op kind '{s}'"))),
        };
        Ok(op)
    }
}

fn exactly<'a, const N: usize>(kind: &str, inputs: &[&'a Tensor]) -> Result<[&'a Tensor; N]> {
    <[&'a Tensor; N]>::try_from(inputs.to_vec()).map_err(|_| {
        Error::Autodiff(format!("{kind} expects {N} input(s), got {}", inputs.len()))
    })
}

/// Apply a primitive by id. Recording behavior matches the concrete
/// methods on [`Tensor`].
pub fn forward_op(op: &PrimitiveOp, inputs: &[&Tensor]) -> Result<Tensor> {
    match op {
        PrimitiveOp::MatMul => exactly::<2>("matmul", inputs).and_then(|[a, b]| a.matmul(b)),
        PrimitiveOp::Bmm => exactly::<2>("bmm", inputs).and_then(|[a, b]| a.bmm(b)),
        PrimitiveOp::Add => exactly::<2>("add", inputs).and_then(|[a, b]| a.add(b)),
        PrimitiveOp::Sub => exactly::<2>("sub", inputs).and_then(|[a, b]| a.sub(b)),
        PrimitiveOp::Mul => exactly::<2>("mul", inputs).and_then(|[a, b]| a.mul(b)),
        PrimitiveOp::Scale(c) => exactly::<1>("scalar-mul", inputs).map(|[a]| a.scale(*c)),
        PrimitiveOp::Abs => exactly::<1>("abs", inputs).map(|[a]| a.abs()),
        PrimitiveOp::ConcatLast => Tensor::concat_last(inputs),
        PrimitiveOp::Transpose => exactly::<1>("transpose", inputs).and_then(|[a]| a.transpose()),
        PrimitiveOp::Sum => exactly::<1>("sum", inputs).map(|[a]| a.sum_all()),
        PrimitiveOp::Mean => exactly::<1>("mean", inputs).map(|[a]| a.mean_all()),
        PrimitiveOp::Sigmoid => exactly::<1>("sigmoid", inputs).map(|[a]| a.sigmoid()),
        PrimitiveOp::Tanh => exactly::<1>("tanh", inputs).map(|[a]| a.tanh()),
        PrimitiveOp::Relu => exactly::<1>("relu", inputs).map(|[a]| a.relu()),
        PrimitiveOp::LeakyRelu(s) => exactly::<1>("leaky-relu", inputs).map(|[a]| a.leaky_relu(*s)),
        PrimitiveOp::Exp => exactly::<1>("exp", inputs).map(|[a]| a.exp()),
        PrimitiveOp::Softmax(axis) => exactly::<1>("softmax", inputs).and_then(|[a]| a.softmax(*axis)),
        PrimitiveOp::Reshape(dims) => exactly::<1>("reshape", inputs).and_then(|[a]| a.reshape(dims)),
        PrimitiveOp::Slice { axis, start, end } => {
            exactly::<1>("slice", inputs).and_then(|[a]| a.slice(*axis, *start, *end))
        }
    }
}

/// String-keyed variant of [`forward_op`]; unknown kinds are an error.
pub fn forward_op_str(kind: &str, inputs: &[&Tensor]) -> Result<Tensor> {
    forward_op(&kind.parse()?, inputs)
}
