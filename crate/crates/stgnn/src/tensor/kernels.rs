//! Raw f64 slice kernels behind the tensor ops. No tape logic here.
//!
//! Matmul variants are laid out so the inner loop always walks contiguous
//! rows of both operands, which lets the compiler vectorize them.

/// C[m,n] = A[m,k] * B[k,n]
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut out[i * n..(i + 1) * n];
        for (l, &a_il) in a_row.iter().enumerate() {
            let b_row = &b[l * n..(l + 1) * n];
            for (c, &bv) in c_row.iter_mut().zip(b_row) {
                *c += a_il * bv;
            }
        }
    }
}

/// C[m,n] = A[m,k] * B[n,k]^T  (row-by-row dot products)
pub fn matmul_abt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut out[i * n..(i + 1) * n];
        for (j, c) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (&x, &y) in a_row.iter().zip(b_row) {
                s += x * y;
            }
            *c += s;
        }
    }
}

/// C[k,n] = A[m,k]^T * B[m,n]
pub fn matmul_atb(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let c_row = &mut out[p * n..(p + 1) * n];
            for (c, &bv) in c_row.iter_mut().zip(b_row) {
                *c += a_ip * bv;
            }
        }
    }
}

/// Row-major strides of a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Broadcast result shape under numpy rules (align right, 1s stretch).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0usize; ndim];
    for i in 0..ndim {
        let da = if i < ndim - a.len() { 1 } else { a[i - (ndim - a.len())] };
        let db = if i < ndim - b.len() { 1 } else { b[i - (ndim - b.len())] };
        if da != db && da != 1 && db != 1 {
            return None;
        }
        out[i] = da.max(db);
    }
    Some(out)
}

/// Strides for reading `shape` as if broadcast to `out_shape`
/// (stride 0 on stretched axes).
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let ndim = out_shape.len();
    let offset = ndim - shape.len();
    let native = strides(shape);
    let mut s = vec![0usize; ndim];
    for i in 0..shape.len() {
        s[offset + i] = if shape[i] == 1 { 0 } else { native[i] };
    }
    s
}

/// Elementwise binary op with broadcasting. `out_shape` must come from
/// `broadcast_shape(a_shape, b_shape)`.
pub fn broadcast_binary(
    a: &[f64],
    a_shape: &[usize],
    b: &[f64],
    b_shape: &[usize],
    out_shape: &[usize],
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let total = numel(out_shape);
    if a_shape == out_shape && b_shape == out_shape {
        return a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect();
    }
    let sa = broadcast_strides(a_shape, out_shape);
    let sb = broadcast_strides(b_shape, out_shape);
    let mut out = Vec::with_capacity(total);
    let ndim = out_shape.len();
    let mut coords = vec![0usize; ndim];
    let mut ia = 0usize;
    let mut ib = 0usize;
    for _ in 0..total {
        out.push(f(a[ia], b[ib]));
        // odometer increment
        for d in (0..ndim).rev() {
            coords[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
        }
    }
    out
}

/// Sum `grad` (laid out as `grad_shape`) down to `target_shape`, reversing a
/// broadcast. Returns a buffer of numel(target_shape).
pub fn reduce_to_shape(grad: &[f64], grad_shape: &[usize], target_shape: &[usize]) -> Vec<f64> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let st = broadcast_strides(target_shape, grad_shape);
    let mut out = vec![0.0; numel(target_shape)];
    let ndim = grad_shape.len();
    let mut coords = vec![0usize; ndim];
    let mut it = 0usize;
    for &g in grad {
        out[it] += g;
        for d in (0..ndim).rev() {
            coords[d] += 1;
            it += st[d];
            if coords[d] < grad_shape[d] {
                break;
            }
            coords[d] = 0;
            it -= st[d] * grad_shape[d];
        }
    }
    out
}

/// out[p] = in[coords permuted by perm]; perm[i] = source axis of output axis i.
pub fn permute(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let ndim = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = strides(shape);
    let perm_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = numel(shape);
    let mut out = Vec::with_capacity(total);
    let mut coords = vec![0usize; ndim];
    let mut src = 0usize;
    for _ in 0..total {
        out.push(data[src]);
        for d in (0..ndim).rev() {
            coords[d] += 1;
            src += perm_strides[d];
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
            src -= perm_strides[d] * out_shape[d];
        }
    }
    (out, out_shape)
}

/// Numerically stable softmax along `axis`.
pub fn softmax(data: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for l in 0..len {
                max = max.max(data[base + l * inner]);
            }
            let mut sum = 0.0;
            for l in 0..len {
                let e = (data[base + l * inner] - max).exp();
                out[base + l * inner] = e;
                sum += e;
            }
            for l in 0..len {
                out[base + l * inner] /= sum;
            }
        }
    }
    out
}

/// Backward of softmax: dx = s * (g - sum(g * s)) along `axis`.
pub fn softmax_backward(grad: &[f64], sm: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let len = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; grad.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = 0.0;
            for l in 0..len {
                let p = base + l * inner;
                dot += grad[p] * sm[p];
            }
            for l in 0..len {
                let p = base + l * inner;
                out[p] = sm[p] * (grad[p] - dot);
            }
        }
    }
    out
}
