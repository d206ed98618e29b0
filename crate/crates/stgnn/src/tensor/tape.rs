//! Recording tape for reverse-mode differentiation.
//!
//! A tape is activated per training step with [`begin`], forward ops record
//! onto it while any input requires gradients, and [`backward`] consumes it,
//! accumulating gradients into every reachable leaf tensor. Recording is
//! thread-local; tensors without a tape link are plain values.

use std::cell::{Cell, RefCell};
use std::rc::Rc;
use std::sync::Arc;

use super::kernels;
use super::sparse::SparseMatrix;
use super::{Inner, Mask, Tensor};
use crate::error::{Error, Result};

/// A primitive application recorded for the backward pass. Saved scalars
/// (axis, slope, ...) live here; operand values are reachable through the
/// node references, so nothing is copied on the forward path.
#[derive(Debug, Clone)]
pub(super) enum Op {
    MatMul,
    Bmm,
    SpMM(Arc<SparseMatrix>),
    Add,
    Sub,
    Mul,
    Scale(f64),
    Abs,
    ConcatLast,
    Transpose,
    Permute(Vec<usize>),
    Reshape,
    SumAll,
    MeanAll,
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Exp,
    Softmax(usize),
    MaskedFill(Arc<Mask>),
    Slice { axis: usize, start: usize },
    Rows(Arc<Vec<usize>>),
}

pub(super) enum InputRef {
    /// Tracked input: gradient flows into this tape node.
    Node(usize),
    /// Untracked constant: value needed for the backward pass only.
    Const(Rc<Inner>),
}

pub(super) enum Node {
    Leaf(Tensor),
    Op { op: Op, inputs: Vec<InputRef>, out: Rc<Inner> },
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

thread_local! {
    static ACTIVE: RefCell<Option<Tape>> = const { RefCell::new(None) };
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
}

/// Start recording on a fresh tape. Any previously active tape on this
/// thread is discarded.
pub fn begin() {
    let id = NEXT_ID.with(|c| {
        let v = c.get();
        c.set(v + 1);
        v
    });
    ACTIVE.with(|slot| *slot.borrow_mut() = Some(Tape { id, nodes: Vec::new() }));
}

/// Drop the active tape without running backward.
pub fn abort() {
    ACTIVE.with(|slot| *slot.borrow_mut() = None);
}

pub fn is_recording() -> bool {
    ACTIVE.with(|slot| slot.borrow().is_some())
}

impl Tape {
    fn input_ref(&mut self, t: &Tensor) -> InputRef {
        if let Some((tid, idx)) = t.inner.node.get() {
            if tid == self.id {
                return InputRef::Node(idx);
            }
        }
        if t.inner.requires_grad {
            let idx = self.nodes.len();
            self.nodes.push(Node::Leaf(t.clone()));
            t.inner.node.set(Some((self.id, idx)));
            InputRef::Node(idx)
        } else {
            InputRef::Const(t.inner.clone())
        }
    }

    fn inner_of(&self, r: &InputRef) -> Rc<Inner> {
        match r {
            InputRef::Const(c) => c.clone(),
            InputRef::Node(i) => match &self.nodes[*i] {
                Node::Leaf(t) => t.inner.clone(),
                Node::Op { out, .. } => out.clone(),
            },
        }
    }
}

/// Attach `out` to the active tape if any input is tracked.
pub(super) fn record(op: Op, inputs: &[&Tensor], out: &Tensor) {
    ACTIVE.with(|slot| {
        let mut slot = slot.borrow_mut();
        let Some(tape) = slot.as_mut() else { return };
        let refs: Vec<InputRef> = inputs.iter().map(|t| tape.input_ref(t)).collect();
        if refs.iter().any(|r| matches!(r, InputRef::Node(_))) {
            let idx = tape.nodes.len();
            tape.nodes.push(Node::Op { op, inputs: refs, out: out.inner.clone() });
            out.inner.node.set(Some((tape.id, idx)));
        }
    });
}

/// Run the backward pass from a scalar loss. Consumes the active tape and
/// accumulates (by summation) into the `grad` slot of every leaf tensor
/// with `requires_grad` that the loss depends on.
pub fn backward(loss: &Tensor) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::Autodiff(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    let tape = ACTIVE
        .with(|slot| slot.borrow_mut().take())
        .ok_or_else(|| Error::Autodiff("no active tape (already consumed by backward?)".into()))?;
    let Some((tid, loss_idx)) = loss.inner.node.get() else {
        return Err(Error::Autodiff("loss was not recorded on any tape".into()));
    };
    if tid != tape.id {
        return Err(Error::Autodiff("loss was not recorded on the active tape".into()));
    }

    let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(tape.nodes.len());
    grads.resize_with(tape.nodes.len(), || None);
    grads[loss_idx] = Some(vec![1.0]);

    for i in (0..=loss_idx).rev() {
        let Some(g) = grads[i].take() else { continue };
        match &tape.nodes[i] {
            Node::Leaf(t) => {
                let mut slot = t.inner.grad.borrow_mut();
                let acc = slot.get_or_insert_with(|| vec![0.0; t.numel()]);
                for (a, &v) in acc.iter_mut().zip(&g) {
                    *a += v;
                }
            }
            Node::Op { op, inputs, out } => {
                op_backward(&tape, op, inputs, out, &g, &mut grads);
            }
        }
    }
    Ok(())
}

fn accumulate(grads: &mut [Option<Vec<f64>>], r: &InputRef, delta: Vec<f64>) {
    if let InputRef::Node(i) = r {
        match &mut grads[*i] {
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(delta) {
                    *a += v;
                }
            }
            slot => *slot = Some(delta),
        }
    }
}

fn is_tracked(r: &InputRef) -> bool {
    matches!(r, InputRef::Node(_))
}

fn op_backward(
    tape: &Tape,
    op: &Op,
    inputs: &[InputRef],
    out: &Rc<Inner>,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    match op {
        Op::MatMul => {
            let a = tape.inner_of(&inputs[0]);
            let b = tape.inner_of(&inputs[1]);
            let (m, k) = (a.shape[0], a.shape[1]);
            let n = b.shape[1];
            if is_tracked(&inputs[0]) {
                let mut da = vec![0.0; m * k];
                kernels::matmul_abt(g, &b.data.borrow(), m, n, k, &mut da);
                accumulate(grads, &inputs[0], da);
            }
            if is_tracked(&inputs[1]) {
                let mut db = vec![0.0; k * n];
                kernels::matmul_atb(&a.data.borrow(), g, m, k, n, &mut db);
                accumulate(grads, &inputs[1], db);
            }
        }
        Op::Bmm => {
            let a = tape.inner_of(&inputs[0]);
            let b = tape.inner_of(&inputs[1]);
            let (bs, m, k) = (a.shape[0], a.shape[1], a.shape[2]);
            let n = b.shape[2];
            let ad = a.data.borrow();
            let bd = b.data.borrow();
            if is_tracked(&inputs[0]) {
                let mut da = vec![0.0; bs * m * k];
                for s in 0..bs {
                    kernels::matmul_abt(
                        &g[s * m * n..(s + 1) * m * n],
                        &bd[s * k * n..(s + 1) * k * n],
                        m,
                        n,
                        k,
                        &mut da[s * m * k..(s + 1) * m * k],
                    );
                }
                accumulate(grads, &inputs[0], da);
            }
            if is_tracked(&inputs[1]) {
                let mut db = vec![0.0; bs * k * n];
                for s in 0..bs {
                    kernels::matmul_atb(
                        &ad[s * m * k..(s + 1) * m * k],
                        &g[s * m * n..(s + 1) * m * n],
                        m,
                        k,
                        n,
                        &mut db[s * k * n..(s + 1) * k * n],
                    );
                }
                accumulate(grads, &inputs[1], db);
            }
        }
        Op::SpMM(mat) => {
            if is_tracked(&inputs[0]) {
                let x = tape.inner_of(&inputs[0]);
                let ndim = x.shape.len();
                let d = x.shape[ndim - 1];
                let rows = mat.rows();
                let cols = mat.cols();
                let batch = x.shape[..ndim - 2].iter().product::<usize>();
                let mut dx = vec![0.0; batch * cols * d];
                for s in 0..batch {
                    mat.mul_dense_transposed(
                        &g[s * rows * d..(s + 1) * rows * d],
                        d,
                        &mut dx[s * cols * d..(s + 1) * cols * d],
                    );
                }
                accumulate(grads, &inputs[0], dx);
            }
        }
        Op::Add | Op::Sub => {
            let a = tape.inner_of(&inputs[0]);
            let b = tape.inner_of(&inputs[1]);
            if is_tracked(&inputs[0]) {
                accumulate(grads, &inputs[0], kernels::reduce_to_shape(g, &out.shape, &a.shape));
            }
            if is_tracked(&inputs[1]) {
                let gb = if matches!(op, Op::Sub) {
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    kernels::reduce_to_shape(&neg, &out.shape, &b.shape)
                } else {
                    kernels::reduce_to_shape(g, &out.shape, &b.shape)
                };
                accumulate(grads, &inputs[1], gb);
            }
        }
        Op::Mul => {
            let a = tape.inner_of(&inputs[0]);
            let b = tape.inner_of(&inputs[1]);
            if is_tracked(&inputs[0]) {
                let full = kernels::broadcast_binary(
                    g,
                    &out.shape,
                    &b.data.borrow(),
                    &b.shape,
                    &out.shape,
                    |gv, bv| gv * bv,
                );
                accumulate(grads, &inputs[0], kernels::reduce_to_shape(&full, &out.shape, &a.shape));
            }
            if is_tracked(&inputs[1]) {
                let full = kernels::broadcast_binary(
                    g,
                    &out.shape,
                    &a.data.borrow(),
                    &a.shape,
                    &out.shape,
                    |gv, av| gv * av,
                );
                accumulate(grads, &inputs[1], kernels::reduce_to_shape(&full, &out.shape, &b.shape));
            }
        }
        Op::Scale(c) => {
            accumulate(grads, &inputs[0], g.iter().map(|v| v * c).collect());
        }
        Op::Abs => {
            let x = tape.inner_of(&inputs[0]);
            let xd = x.data.borrow();
            let dg = g
                .iter()
                .zip(xd.iter())
                .map(|(&gv, &xv)| {
                    if xv > 0.0 {
                        gv
                    } else if xv < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                })
                .collect();
            accumulate(grads, &inputs[0], dg);
        }
        Op::ConcatLast => {
            let widths: Vec<usize> = inputs
                .iter()
                .map(|r| *tape.inner_of(r).shape.last().unwrap())
                .collect();
            let total: usize = widths.iter().sum();
            let rows = out.shape[..out.shape.len() - 1].iter().product::<usize>();
            let mut offset = 0usize;
            for (r, &w) in inputs.iter().zip(&widths) {
                if is_tracked(r) {
                    let mut dg = vec![0.0; rows * w];
                    for row in 0..rows {
                        dg[row * w..(row + 1) * w]
                            .copy_from_slice(&g[row * total + offset..row * total + offset + w]);
                    }
                    accumulate(grads, r, dg);
                }
                offset += w;
            }
        }
        Op::Transpose => {
            let (rows, cols) = (out.shape[0], out.shape[1]);
            let (dg, _) = kernels::permute(g, &[rows, cols], &[1, 0]);
            accumulate(grads, &inputs[0], dg);
        }
        Op::Permute(perm) => {
            let mut inverse = vec![0usize; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            let (dg, _) = kernels::permute(g, &out.shape, &inverse);
            accumulate(grads, &inputs[0], dg);
        }
        Op::Reshape => {
            accumulate(grads, &inputs[0], g.to_vec());
        }
        Op::SumAll => {
            let x = tape.inner_of(&inputs[0]);
            accumulate(grads, &inputs[0], vec![g[0]; x.numel()]);
        }
        Op::MeanAll => {
            let x = tape.inner_of(&inputs[0]);
            let n = x.numel();
            accumulate(grads, &inputs[0], vec![g[0] / n as f64; n]);
        }
        Op::Sigmoid => {
            let od = out.data.borrow();
            let dg = g.iter().zip(od.iter()).map(|(&gv, &s)| gv * s * (1.0 - s)).collect();
            accumulate(grads, &inputs[0], dg);
        }
        Op::Tanh => {
            let od = out.data.borrow();
            let dg = g.iter().zip(od.iter()).map(|(&gv, &t)| gv * (1.0 - t * t)).collect();
            accumulate(grads, &inputs[0], dg);
        }
        Op::Relu => {
            let x = tape.inner_of(&inputs[0]);
            let xd = x.data.borrow();
            let dg = g
                .iter()
                .zip(xd.iter())
                .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                .collect();
            accumulate(grads, &inputs[0], dg);
        }
        Op::LeakyRelu(slope) => {
            let x = tape.inner_of(&inputs[0]);
            let xd = x.data.borrow();
            let dg = g
                .iter()
                .zip(xd.iter())
                .map(|(&gv, &xv)| if xv > 0.0 { gv } else { gv * slope })
                .collect();
            accumulate(grads, &inputs[0], dg);
        }
        Op::Exp => {
            let od = out.data.borrow();
            let dg = g.iter().zip(od.iter()).map(|(&gv, &e)| gv * e).collect();
            accumulate(grads, &inputs[0], dg);
        }
        Op::Softmax(axis) => {
            let od = out.data.borrow();
            let dg = kernels::softmax_backward(g, &od, &out.shape, *axis);
            accumulate(grads, &inputs[0], dg);
        }
        Op::MaskedFill(mask) => {
            let block = mask.fill.len();
            let dg = g
                .iter()
                .enumerate()
                .map(|(i, &gv)| if mask.fill[i % block] { 0.0 } else { gv })
                .collect();
            accumulate(grads, &inputs[0], dg);
        }
        Op::Slice { axis, start } => {
            if is_tracked(&inputs[0]) {
                let x = tape.inner_of(&inputs[0]);
                let in_shape = &x.shape;
                let len = out.shape[*axis];
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[*axis + 1..].iter().product();
                let mut dg = vec![0.0; x.numel()];
                for o in 0..outer {
                    let src = o * len * inner;
                    let dst = (o * in_shape[*axis] + start) * inner;
                    dg[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                accumulate(grads, &inputs[0], dg);
            }
        }
        Op::Rows(indices) => {
            if is_tracked(&inputs[0]) {
                let table = tape.inner_of(&inputs[0]);
                let d = table.shape[1];
                let mut dg = vec![0.0; table.numel()];
                for (j, &row) in indices.iter().enumerate() {
                    let dst = &mut dg[row * d..(row + 1) * d];
                    let src = &g[j * d..(j + 1) * d];
                    for (a, &v) in dst.iter_mut().zip(src) {
                        *a += v;
                    }
                }
                accumulate(grads, &inputs[0], dg);
            }
        }
    }
}
