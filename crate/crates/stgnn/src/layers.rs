//! Spatial feature extraction layers.
//!
//! All layer forwards accept inputs of shape `[..., n, d]` — leading axes
//! (batch, time) ride along unchanged, the node axis is second to last.
//! Neighbor-restricted attention keeps the exact softmax denominator by
//! filling non-neighbor logits with -1e9 before a dense softmax: those
//! entries underflow to exactly zero probability.

use std::cell::Cell;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{NeighborSets, NormalizedAdjacency};
use crate::tensor::{Mask, Tensor};

pub const MASK_FILL: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(&self, x: &Tensor) -> Tensor {
        match self {
            Activation::Sigmoid => x.sigmoid(),
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x.clone(),
        }
    }

    pub fn scalar(&self, v: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Activation> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Data(format!("unknown activation '{other}'"))),
        }
    }
}

/// Glorot-uniform weight matrix [fan_in, fan_out].
pub fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::param(data, &[fan_in, fan_out]).expect("glorot shape")
}

/// `x @ w (+ b)` over the last axis of `x`; leading axes are preserved.
pub fn affine(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let ndim = x.ndim();
    if ndim == 0 {
        return Err(Error::shape("affine", "input must have at least 1 axis".to_string()));
    }
    let d = x.shape()[ndim - 1];
    let rows: usize = x.shape()[..ndim - 1].iter().product();
    let flat = x.reshape(&[rows, d])?;
    let y = flat.matmul(w)?;
    let mut shape = x.shape()[..ndim - 1].to_vec();
    shape.push(w.shape()[1]);
    let y = y.reshape(&shape)?;
    match b {
        Some(b) => y.add(b),
        None => Ok(y),
    }
}

/// Fully-connected layer with activation (the shared output/projection head).
#[derive(Debug, Clone)]
pub struct FcLayer {
    pub w: Tensor,
    pub b: Tensor,
    pub activation: Activation,
}

impl FcLayer {
    pub fn new(rng: &mut impl Rng, d_in: usize, d_out: usize, activation: Activation) -> FcLayer {
        FcLayer {
            w: glorot(rng, d_in, d_out),
            b: Tensor::param(vec![0.0; d_out], &[d_out]).expect("bias"),
            activation,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        fc_forward(&self.w, &self.b, x, self.activation)
    }

    pub fn params_into(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

pub fn fc_forward(w: &Tensor, b: &Tensor, x: &Tensor, activation: Activation) -> Result<Tensor> {
    Ok(activation.apply(&affine(x, w, Some(b))?))
}

/// Graph convolution: `activation(A_hat @ x @ W)`.
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub w: Tensor,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn new(rng: &mut impl Rng, d_in: usize, d_out: usize, activation: Activation) -> GcnLayer {
        GcnLayer { w: glorot(rng, d_in, d_out), activation }
    }

    pub fn forward(&self, x: &Tensor, a_hat: &NormalizedAdjacency) -> Result<Tensor> {
        gcn_forward(self, x, a_hat)
    }

    pub fn params_into(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
    }
}

pub fn gcn_forward(layer: &GcnLayer, x: &Tensor, a_hat: &NormalizedAdjacency) -> Result<Tensor> {
    let agg = crate::graph::spmm(a_hat, x)?;
    let projected = affine(&agg, &layer.w, None)?;
    Ok(layer.activation.apply(&projected))
}

/// Multi-head graph attention over neighbor sets (incoming plus self).
/// Heads concatenate to `heads * head_dim` output features.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub heads: usize,
    pub head_dim: usize,
    /// Per-head feature projection [d_in, head_dim].
    pub w: Vec<Tensor>,
    /// Per-head attention vector [2 * head_dim]; first half scores the
    /// target node, second half the source.
    pub a: Vec<Tensor>,
    pub attention_slope: f64,
    pub activation: Activation,
}

impl GatLayer {
    pub fn new(
        rng: &mut impl Rng,
        d_in: usize,
        heads: usize,
        head_dim: usize,
        attention_slope: f64,
        activation: Activation,
    ) -> GatLayer {
        let w = (0..heads).map(|_| glorot(rng, d_in, head_dim)).collect();
        let a = (0..heads)
            .map(|_| Tensor::param(vec![0.0; 2 * head_dim], &[2 * head_dim]).expect("attn vec"))
            .collect();
        GatLayer { heads, head_dim, w, a, attention_slope, activation }
    }

    pub fn out_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn forward(&self, x: &Tensor, nbrs: &NeighborSets, mask: &Mask) -> Result<Tensor> {
        gat_forward(self, x, nbrs, mask)
    }

    pub fn params_into(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for k in 0..self.heads {
            out.push((format!("{prefix}.h{k}.w"), self.w[k].clone()));
            out.push((format!("{prefix}.h{k}.a"), self.a[k].clone()));
        }
    }

    /// Attention logits for one head: `[..., n, n]` before masking.
    fn head_logits(&self, x: &Tensor, k: usize) -> Result<(Tensor, Tensor)> {
        let z = affine(x, &self.w[k], None)?;
        let a_col = self.a[k].reshape(&[2 * self.head_dim, 1])?;
        let a_self = a_col.slice(0, 0, self.head_dim)?;
        let a_peer = a_col.slice(0, self.head_dim, 2 * self.head_dim)?;
        let s_self = affine(&z, &a_self, None)?; // [..., n, 1]
        let s_peer = affine(&z, &a_peer, None)?; // [..., n, 1]
        let ndim = s_peer.ndim();
        let mut perm: Vec<usize> = (0..ndim).collect();
        perm.swap(ndim - 2, ndim - 1);
        let s_peer_row = s_peer.permute(&perm)?; // [..., 1, n]
        let logits = s_self.add(&s_peer_row)?.leaky_relu(self.attention_slope);
        Ok((logits, z))
    }
}

/// Row-stochastic attention weights for one head, neighbors only: entry
/// `(j, alpha_ij)` exists exactly for `j` in the neighbor set of `i`.
#[derive(Debug, Clone)]
pub struct AttentionScores {
    pub per_node: Vec<Vec<(usize, f64)>>,
}

pub fn gat_attention_scores(
    layer: &GatLayer,
    x: &Tensor,
    nbrs: &NeighborSets,
    k: usize,
) -> Result<AttentionScores> {
    if k >= layer.heads {
        return Err(Error::shape("gat", format!("head {k} out of range for {} heads", layer.heads)));
    }
    if x.ndim() != 2 {
        return Err(Error::shape("gat", format!("scores need [n, d] input, got {:?}", x.shape())));
    }
    let n = x.shape()[0];
    if n != nbrs.n() {
        return Err(Error::shape("gat", format!("{n} rows vs {} neighbor sets", nbrs.n())));
    }
    let (logits, _) = layer.head_logits(x, k)?;
    let alpha = logits.masked_fill(&nbrs.non_neighbor_mask(), MASK_FILL)?.softmax(1)?;
    let dense = alpha.to_vec();
    let per_node = (0..n)
        .map(|i| nbrs.of(i).iter().map(|&j| (j, dense[i * n + j])).collect())
        .collect();
    Ok(AttentionScores { per_node })
}

pub fn gat_forward(layer: &GatLayer, x: &Tensor, nbrs: &NeighborSets, mask: &Mask) -> Result<Tensor> {
    let ndim = x.ndim();
    if ndim < 2 {
        return Err(Error::shape("gat", format!("need [..., n, d] input, got {:?}", x.shape())));
    }
    let n = x.shape()[ndim - 2];
    if n != nbrs.n() {
        return Err(Error::shape("gat", format!("{n} node rows vs {} neighbor sets", nbrs.n())));
    }
    let lead: usize = x.shape()[..ndim - 2].iter().product();
    let mut head_outputs = Vec::with_capacity(layer.heads);
    for k in 0..layer.heads {
        let (logits, z) = layer.head_logits(x, k)?;
        let alpha = logits.masked_fill(mask, MASK_FILL)?.softmax(ndim - 1)?;
        let alpha3 = alpha.reshape(&[lead, n, n])?;
        let z3 = z.reshape(&[lead, n, layer.head_dim])?;
        let msg = alpha3.bmm(&z3)?;
        let mut shape = x.shape()[..ndim - 2].to_vec();
        shape.extend([n, layer.head_dim]);
        head_outputs.push(layer.activation.apply(&msg.reshape(&shape)?));
    }
    record_gat_scores(nbrs.total_size() as u64, layer.heads as u64, lead as u64);
    let refs: Vec<&Tensor> = head_outputs.iter().collect();
    Tensor::concat_last(&refs)
}

/// All-pairs scaled dot-product attention over the node axis (no mask).
#[derive(Debug, Clone)]
pub struct FullSpatialAttention {
    pub heads: usize,
    pub head_dim: usize,
    /// Per-head projections [dim, head_dim] where dim = heads * head_dim.
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    /// Output projection [heads * head_dim, dim].
    pub wo: Tensor,
}

impl FullSpatialAttention {
    pub fn new(rng: &mut impl Rng, heads: usize, head_dim: usize) -> FullSpatialAttention {
        let dim = heads * head_dim;
        FullSpatialAttention {
            heads,
            head_dim,
            wq: (0..heads).map(|_| glorot(rng, dim, head_dim)).collect(),
            wk: (0..heads).map(|_| glorot(rng, dim, head_dim)).collect(),
            wv: (0..heads).map(|_| glorot(rng, dim, head_dim)).collect(),
            wo: glorot(rng, dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        full_spatial_attention_forward(self, x)
    }

    pub fn params_into(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for k in 0..self.heads {
            out.push((format!("{prefix}.h{k}.wq"), self.wq[k].clone()));
            out.push((format!("{prefix}.h{k}.wk"), self.wk[k].clone()));
            out.push((format!("{prefix}.h{k}.wv"), self.wv[k].clone()));
        }
        out.push((format!("{prefix}.wo"), self.wo.clone()));
    }
}

pub fn full_spatial_attention_forward(layer: &FullSpatialAttention, x: &Tensor) -> Result<Tensor> {
    let ndim = x.ndim();
    if ndim < 2 {
        return Err(Error::shape("full-attn", format!("need [..., n, D], got {:?}", x.shape())));
    }
    let dim = layer.dim();
    let n = x.shape()[ndim - 2];
    if x.shape()[ndim - 1] != dim {
        return Err(Error::shape(
            "full-attn",
            format!("feature dim {} != heads*head_dim {}", x.shape()[ndim - 1], dim),
        ));
    }
    let lead: usize = x.shape()[..ndim - 2].iter().product();
    let scale = 1.0 / (layer.head_dim as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(layer.heads);
    for k in 0..layer.heads {
        let q = affine(x, &layer.wq[k], None)?.reshape(&[lead, n, layer.head_dim])?;
        let kk = affine(x, &layer.wk[k], None)?.reshape(&[lead, n, layer.head_dim])?;
        let v = affine(x, &layer.wv[k], None)?.reshape(&[lead, n, layer.head_dim])?;
        let kt = kk.permute(&[0, 2, 1])?;
        let scores = q.bmm(&kt)?.scale(scale);
        let alpha = scores.softmax(2)?;
        head_outputs.push(alpha.bmm(&v)?);
    }
    record_full_scores((n * n) as u64, layer.heads as u64, lead as u64);
    let refs: Vec<&Tensor> = head_outputs.iter().collect();
    let merged = Tensor::concat_last(&refs)?;
    let out = affine(&merged, &layer.wo, None)?;
    let mut shape = x.shape()[..ndim - 2].to_vec();
    shape.extend([n, dim]);
    out.reshape(&shape)
}

// ── attention-score instrumentation ─────────────────────────────────────

thread_local! {
    static FULL_TOTAL: Cell<u64> = const { Cell::new(0) };
    static FULL_LAST_PER_HEAD: Cell<u64> = const { Cell::new(0) };
    static GAT_TOTAL: Cell<u64> = const { Cell::new(0) };
    static GAT_LAST_PER_HEAD: Cell<u64> = const { Cell::new(0) };
}

fn record_full_scores(per_head: u64, heads: u64, reps: u64) {
    FULL_LAST_PER_HEAD.with(|c| c.set(per_head));
    FULL_TOTAL.with(|c| c.set(c.get() + per_head * heads * reps));
}

fn record_gat_scores(per_head: u64, heads: u64, reps: u64) {
    GAT_LAST_PER_HEAD.with(|c| c.set(per_head));
    GAT_TOTAL.with(|c| c.set(c.get() + per_head * heads * reps));
}

/// Attention scores counted since the last reset, on this thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreCounts {
    /// Cumulative all-pairs scores across heads and batch positions.
    pub full_total: u64,
    /// Scores one full-attention head computed in the most recent call.
    pub full_last_per_head: u64,
    pub gat_total: u64,
    /// Scores one GAT head computed in the most recent call (`sum_i |N_i|`).
    pub gat_last_per_head: u64,
}

pub fn reset_score_counts() {
    FULL_TOTAL.with(|c| c.set(0));
    FULL_LAST_PER_HEAD.with(|c| c.set(0));
    GAT_TOTAL.with(|c| c.set(0));
    GAT_LAST_PER_HEAD.with(|c| c.set(0));
}

pub fn score_counts() -> ScoreCounts {
    ScoreCounts {
        full_total: FULL_TOTAL.with(Cell::get),
        full_last_per_head: FULL_LAST_PER_HEAD.with(Cell::get),
        gat_total: GAT_TOTAL.with(Cell::get),
        gat_last_per_head: GAT_LAST_PER_HEAD.with(Cell::get),
    }
}

#[cfg(test)]
mod tests;
