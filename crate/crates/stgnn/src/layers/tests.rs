use super::*;
use crate::graph::{neighbor_sets, normalize_adjacency, Edge, Graph};
use crate::tensor::check::grad_check_params;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn graph_of(n: usize, edges: &[(usize, usize, f64)]) -> Graph {
    let ids = (0..n).map(|i| format!("s{i}")).collect();
    Graph::new(ids, edges.iter().map(|&(s, d, w)| Edge { src: s, dst: d, weight: w }).collect())
        .unwrap()
}

fn random_vec(r: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| r.random_range(-scale..scale)).collect()
}

/// Give every parameter (including zero-initialized attention vectors) a
/// generic nonzero value so finite differences sit away from kinks.
fn randomize(params: &[(String, Tensor)], r: &mut ChaCha8Rng) {
    for (_, p) in params {
        p.with_data_mut(|d| {
            for v in d.iter_mut() {
                *v = r.random_range(-0.5..0.5);
            }
        });
    }
}

// ── scalar oracles: literal per-coordinate evaluation ───────────────────

fn oracle_gcn(a_hat: &[f64], x: &[f64], w: &[f64], n: usize, d: usize, h: usize, act: Activation) -> Vec<f64> {
    let mut ax = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..n {
            for c in 0..d {
                ax[i * d + c] += a_hat[i * n + j] * x[j * d + c];
            }
        }
    }
    let mut out = vec![0.0; n * h];
    for i in 0..n {
        for o in 0..h {
            let mut s = 0.0;
            for c in 0..d {
                s += ax[i * d + c] * w[c * h + o];
            }
            out[i * h + o] = act.scalar(s);
        }
    }
    out
}

struct GatOracleHead<'a> {
    w: &'a [f64],
    a: &'a [f64],
}

/// Eq. (2)/(3) evaluated with raw exponentials over the neighbor set.
fn oracle_gat(
    x: &[f64],
    heads: &[GatOracleHead<'_>],
    nbrs: &NeighborSets,
    n: usize,
    d: usize,
    hd: usize,
    slope: f64,
    act: Activation,
) -> Vec<f64> {
    let leaky = |v: f64| if v > 0.0 { v } else { slope * v };
    let k_count = heads.len();
    let mut out = vec![0.0; n * k_count * hd];
    for (k, head) in heads.iter().enumerate() {
        let mut z = vec![0.0; n * hd];
        for i in 0..n {
            for o in 0..hd {
                let mut s = 0.0;
                for c in 0..d {
                    s += x[i * d + c] * head.w[c * hd + o];
                }
                z[i * hd + o] = s;
            }
        }
        for i in 0..n {
            let set = nbrs.of(i);
            let logits: Vec<f64> = set
                .iter()
                .map(|&j| {
                    let mut e = 0.0;
                    for t in 0..hd {
                        e += head.a[t] * z[i * hd + t] + head.a[hd + t] * z[j * hd + t];
                    }
                    leaky(e)
                })
                .collect();
            let denom: f64 = logits.iter().map(|&e| e.exp()).sum();
            let mut agg = vec![0.0; hd];
            for (&j, &e) in set.iter().zip(&logits) {
                let alpha = e.exp() / denom;
                for t in 0..hd {
                    agg[t] += alpha * z[j * hd + t];
                }
            }
            for t in 0..hd {
                out[i * k_count * hd + k * hd + t] = act.scalar(agg[t]);
            }
        }
    }
    out
}

fn oracle_full_attn(
    x: &[f64],
    layer: &FullSpatialAttention,
    n: usize,
) -> Vec<f64> {
    let dim = layer.dim();
    let hd = layer.head_dim;
    let mut merged = vec![0.0; n * dim];
    for k in 0..layer.heads {
        let wq = layer.wq[k].to_vec();
        let wk = layer.wk[k].to_vec();
        let wv = layer.wv[k].to_vec();
        let project = |w: &[f64]| {
            let mut p = vec![0.0; n * hd];
            for i in 0..n {
                for o in 0..hd {
                    let mut s = 0.0;
                    for c in 0..dim {
                        s += x[i * dim + c] * w[c * hd + o];
                    }
                    p[i * hd + o] = s;
                }
            }
            p
        };
        let (q, kk, v) = (project(&wq), project(&wk), project(&wv));
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| {
                    let mut s = 0.0;
                    for t in 0..hd {
                        s += q[i * hd + t] * kk[j * hd + t];
                    }
                    s / (hd as f64).sqrt()
                })
                .collect();
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = scores.iter().map(|&s| (s - m).exp()).sum();
            for j in 0..n {
                let alpha = (scores[j] - m).exp() / denom;
                for t in 0..hd {
                    merged[i * dim + k * hd + t] += alpha * v[j * hd + t];
                }
            }
        }
    }
    let wo = layer.wo.to_vec();
    let mut out = vec![0.0; n * dim];
    for i in 0..n {
        for o in 0..dim {
            let mut s = 0.0;
            for c in 0..dim {
                s += merged[i * dim + c] * wo[c * dim + o];
            }
            out[i * dim + o] = s;
        }
    }
    out
}

fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what}[{i}]: {x} vs {y}");
    }
}

// ── GCN ──────────────────────────────────────────────────────────────────

#[test]
fn gcn_identity_case() {
    let g = graph_of(3, &[]);
    let a_hat = normalize_adjacency(&g);
    let layer = GcnLayer {
        w: Tensor::param(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap(),
        activation: Activation::Identity,
    };
    let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]).unwrap();
    assert_eq!(layer.forward(&x, &a_hat).unwrap().to_vec(), x.to_vec());
}

#[test]
fn gcn_zero_graph_relu_keeps_linear_map() {
    let g = graph_of(2, &[]);
    let a_hat = normalize_adjacency(&g);
    let w = Tensor::param(vec![0.3, 0.7, 0.2, 0.5], &[2, 2]).unwrap();
    let layer = GcnLayer { w: w.clone(), activation: Activation::Relu };
    let x = Tensor::new(vec![1.0, 0.5, 2.0, 0.0], &[2, 2]).unwrap();
    let got = layer.forward(&x, &a_hat).unwrap().to_vec();
    let want = x.matmul(&w).unwrap().to_vec();
    assert_close(&got, &want, 0.0, "gcn relu");
}

#[test]
fn gcn_matches_scalar_oracle_on_path_graph() {
    let mut r = rng(21);
    let g = graph_of(3, &[(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]);
    let a_hat = normalize_adjacency(&g);
    let (d, h) = (3, 4);
    let layer = GcnLayer {
        w: Tensor::param(random_vec(&mut r, d * h, 0.8), &[d, h]).unwrap(),
        activation: Activation::Sigmoid,
    };
    let x = Tensor::new(random_vec(&mut r, 3 * d, 1.0), &[3, d]).unwrap();
    let got = layer.forward(&x, &a_hat).unwrap().to_vec();
    let want = oracle_gcn(&a_hat.to_dense(), &x.to_vec(), &layer.w.to_vec(), 3, d, h, Activation::Sigmoid);
    assert_close(&got, &want, 1e-12, "gcn oracle");
}

#[test]
fn gcn_identity_configuration_is_linear() {
    let mut r = rng(22);
    let g = graph_of(4, &[]);
    let a_hat = normalize_adjacency(&g);
    let layer = GcnLayer {
        w: Tensor::param(random_vec(&mut r, 4 * 3, 1.0), &[4, 3]).unwrap(),
        activation: Activation::Identity,
    };
    let x = Tensor::new(random_vec(&mut r, 16, 1.0), &[4, 4]).unwrap();
    let y = Tensor::new(random_vec(&mut r, 16, 1.0), &[4, 4]).unwrap();
    let sum = x.add(&y).unwrap();
    let lhs = layer.forward(&sum, &a_hat).unwrap().to_vec();
    let fx = layer.forward(&x, &a_hat).unwrap();
    let fy = layer.forward(&y, &a_hat).unwrap();
    let rhs = fx.add(&fy).unwrap().to_vec();
    assert_close(&lhs, &rhs, 1e-12, "gcn linearity");
}

// ── GAT ──────────────────────────────────────────────────────────────────

#[test]
fn gat_singleton_neighborhood_scores_one() {
    let mut r = rng(31);
    let g = graph_of(3, &[]);
    let nbrs = neighbor_sets(&g);
    let mut layer = GatLayer::new(&mut r, 2, 2, 3, 0.2, Activation::Identity);
    for a in &mut layer.a {
        a.with_data_mut(|d| d.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64));
    }
    let x = Tensor::new(random_vec(&mut r, 6, 1.0), &[3, 2]).unwrap();
    let scores = gat_attention_scores(&layer, &x, &nbrs, 0).unwrap();
    for (i, row) in scores.per_node.iter().enumerate() {
        assert_eq!(row.len(), 1);
        assert_eq!(row[0].0, i);
        assert!((row[0].1 - 1.0).abs() < 1e-15);
    }
}

#[test]
fn gat_identical_features_uniform_scores() {
    let mut r = rng(32);
    let g = graph_of(3, &[(0, 1, 1.0), (1, 0, 1.0), (0, 2, 1.0), (2, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)]);
    let nbrs = neighbor_sets(&g);
    let layer = GatLayer::new(&mut r, 2, 1, 4, 0.2, Activation::Identity);
    let x = Tensor::new(vec![0.4, -0.7, 0.4, -0.7, 0.4, -0.7], &[3, 2]).unwrap();
    let scores = gat_attention_scores(&layer, &x, &nbrs, 0).unwrap();
    for row in &scores.per_node {
        for &(_, alpha) in row {
            assert!((alpha - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}

#[test]
fn gat_scores_match_scalar_oracle_and_sum_to_one() {
    let mut r = rng(33);
    let g = graph_of(3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]);
    let nbrs = neighbor_sets(&g);
    let (d, heads, hd) = (2, 2, 3);
    let layer = {
        let mut l = GatLayer::new(&mut r, d, heads, hd, 0.2, Activation::Identity);
        for a in &mut l.a {
            a.set_data(&random_vec(&mut r, 2 * hd, 0.4)).unwrap();
        }
        l
    };
    let x = Tensor::new(random_vec(&mut r, 3 * d, 0.8), &[3, d]).unwrap();
    for k in 0..heads {
        let scores = gat_attention_scores(&layer, &x, &nbrs, k).unwrap();
        let w = layer.w[k].to_vec();
        let a = layer.a[k].to_vec();
        let xv = x.to_vec();
        for i in 0..3 {
            let set = nbrs.of(i);
            let z = |node: usize| -> Vec<f64> {
                (0..hd)
                    .map(|o| (0..d).map(|c| xv[node * d + c] * w[c * hd + o]).sum())
                    .collect()
            };
            let zi = z(i);
            let logits: Vec<f64> = set
                .iter()
                .map(|&j| {
                    let zj = z(j);
                    let e: f64 = (0..hd).map(|t| a[t] * zi[t] + a[hd + t] * zj[t]).sum();
                    if e > 0.0 {
                        e
                    } else {
                        0.2 * e
                    }
                })
                .collect();
            let denom: f64 = logits.iter().map(|&e| e.exp()).sum();
            let mut total = 0.0;
            for ((&j, &(jj, alpha)), &e) in set.iter().zip(&scores.per_node[i]).zip(&logits) {
                assert_eq!(j, jj);
                assert!((alpha - e.exp() / denom).abs() < 1e-12, "alpha oracle mismatch");
                total += alpha;
            }
            assert!((total - 1.0).abs() < 1e-9, "row sum {total}");
        }
    }
}

#[test]
fn gat_forward_single_node_identity() {
    let mut r = rng(34);
    let g = graph_of(1, &[]);
    let nbrs = neighbor_sets(&g);
    let layer = GatLayer::new(&mut r, 3, 1, 2, 0.2, Activation::Identity);
    let x = Tensor::new(vec![0.5, -1.0, 2.0], &[1, 3]).unwrap();
    let got = gat_forward(&layer, &x, &nbrs, &nbrs.non_neighbor_mask()).unwrap().to_vec();
    let want = x.matmul(&layer.w[0]).unwrap().to_vec();
    assert_close(&got, &want, 1e-12, "gat n=1");
}

#[test]
fn gat_forward_edgeless_two_heads() {
    let mut r = rng(35);
    let g = graph_of(3, &[]);
    let nbrs = neighbor_sets(&g);
    let layer = GatLayer::new(&mut r, 2, 2, 1, 0.2, Activation::Sigmoid);
    let x = Tensor::new(random_vec(&mut r, 6, 1.0), &[3, 2]).unwrap();
    let got = gat_forward(&layer, &x, &nbrs, &nbrs.non_neighbor_mask()).unwrap().to_vec();
    let w0 = layer.w[0].to_vec();
    let w1 = layer.w[1].to_vec();
    let xv = x.to_vec();
    for i in 0..3 {
        let h0: f64 = (0..2).map(|c| xv[i * 2 + c] * w0[c]).sum();
        let h1: f64 = (0..2).map(|c| xv[i * 2 + c] * w1[c]).sum();
        assert!((got[i * 2] - Activation::Sigmoid.scalar(h0)).abs() < 1e-12);
        assert!((got[i * 2 + 1] - Activation::Sigmoid.scalar(h1)).abs() < 1e-12);
    }
}

#[test]
fn gat_forward_matches_scalar_oracle() {
    let mut r = rng(36);
    let g = graph_of(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0), (1, 0, 1.0)]);
    let nbrs = neighbor_sets(&g);
    let (d, heads, hd) = (3, 2, 2);
    let mut layer = GatLayer::new(&mut r, d, heads, hd, 0.2, Activation::Tanh);
    for a in &mut layer.a {
        a.set_data(&random_vec(&mut r, 2 * hd, 0.5)).unwrap();
    }
    let x = Tensor::new(random_vec(&mut r, 4 * d, 0.8), &[4, d]).unwrap();
    let got = gat_forward(&layer, &x, &nbrs, &nbrs.non_neighbor_mask()).unwrap().to_vec();
    let w_data: Vec<Vec<f64>> = layer.w.iter().map(Tensor::to_vec).collect();
    let a_data: Vec<Vec<f64>> = layer.a.iter().map(Tensor::to_vec).collect();
    let heads_oracle: Vec<GatOracleHead> = (0..heads)
        .map(|k| GatOracleHead { w: &w_data[k], a: &a_data[k] })
        .collect();
    let want = oracle_gat(&x.to_vec(), &heads_oracle, &nbrs, 4, d, hd, 0.2, Activation::Tanh);
    assert_close(&got, &want, 1e-12, "gat oracle");
}

#[test]
fn gat_batched_leading_dims_match_per_slice() {
    let mut r = rng(37);
    let g = graph_of(3, &[(0, 1, 1.0), (1, 0, 1.0), (2, 0, 1.0)]);
    let nbrs = neighbor_sets(&g);
    let mask = nbrs.non_neighbor_mask();
    let mut layer = GatLayer::new(&mut r, 2, 2, 2, 0.2, Activation::Sigmoid);
    for a in &mut layer.a {
        a.set_data(&random_vec(&mut r, 4, 0.5)).unwrap();
    }
    let x = Tensor::new(random_vec(&mut r, 2 * 3 * 2, 1.0), &[2, 3, 2]).unwrap();
    let batched = gat_forward(&layer, &x, &nbrs, &mask).unwrap();
    assert_eq!(batched.shape(), &[2, 3, 4]);
    for s in 0..2 {
        let slice = x.slice(0, s, s + 1).unwrap().reshape(&[3, 2]).unwrap();
        let single = gat_forward(&layer, &slice, &nbrs, &mask).unwrap().to_vec();
        let got = batched.slice(0, s, s + 1).unwrap().to_vec();
        assert_close(&got, &single, 1e-12, "gat batch slice");
    }
}

// ── full spatial attention ───────────────────────────────────────────────

#[test]
fn full_attn_single_node() {
    let mut r = rng(41);
    let layer = FullSpatialAttention::new(&mut r, 2, 2);
    let x = Tensor::new(random_vec(&mut r, 4, 1.0), &[1, 4]).unwrap();
    let got = layer.forward(&x).unwrap().to_vec();
    // softmax over one key is 1: output = concat_k(x Wv_k) Wo
    let v0 = affine(&x, &layer.wv[0], None).unwrap();
    let v1 = affine(&x, &layer.wv[1], None).unwrap();
    let want = affine(&Tensor::concat_last(&[&v0, &v1]).unwrap(), &layer.wo, None).unwrap().to_vec();
    assert_close(&got, &want, 1e-12, "full-attn n=1");
}

#[test]
fn full_attn_identical_rows_identical_outputs() {
    let mut r = rng(42);
    let layer = FullSpatialAttention::new(&mut r, 2, 3);
    let row = random_vec(&mut r, 6, 1.0);
    let mut data = Vec::new();
    for _ in 0..4 {
        data.extend_from_slice(&row);
    }
    let x = Tensor::new(data, &[4, 6]).unwrap();
    let out = layer.forward(&x).unwrap().to_vec();
    for i in 1..4 {
        assert_close(&out[..6], &out[i * 6..(i + 1) * 6], 1e-12, "row equality");
    }
}

#[test]
fn full_attn_matches_scalar_oracle() {
    let mut r = rng(43);
    let layer = FullSpatialAttention::new(&mut r, 2, 2);
    let x = Tensor::new(random_vec(&mut r, 3 * 4, 0.7), &[3, 4]).unwrap();
    let got = layer.forward(&x).unwrap().to_vec();
    let want = oracle_full_attn(&x.to_vec(), &layer, 3);
    assert_close(&got, &want, 1e-12, "full-attn oracle");
}

#[test]
fn full_attn_score_counter_is_n_squared_per_head() {
    let mut r = rng(44);
    let layer = FullSpatialAttention::new(&mut r, 3, 2);
    for n in [1usize, 7, 50] {
        let x = Tensor::new(random_vec(&mut r, n * 6, 1.0), &[n, 6]).unwrap();
        reset_score_counts();
        layer.forward(&x).unwrap();
        let counts = score_counts();
        assert_eq!(counts.full_last_per_head, (n * n) as u64);
        assert_eq!(counts.full_total, (n * n * 3) as u64);
    }
}

#[test]
fn gat_score_counter_counts_neighbor_sets() {
    let mut r = rng(45);
    let g = graph_of(4, &[(0, 1, 1.0), (2, 1, 1.0), (3, 2, 1.0)]);
    let nbrs = neighbor_sets(&g);
    let layer = GatLayer::new(&mut r, 2, 2, 2, 0.2, Activation::Identity);
    let x = Tensor::new(random_vec(&mut r, 8, 1.0), &[4, 2]).unwrap();
    reset_score_counts();
    gat_forward(&layer, &x, &nbrs, &nbrs.non_neighbor_mask()).unwrap();
    let counts = score_counts();
    let expect = nbrs.total_size() as u64; // 4 self + 3 edges = 7
    assert_eq!(expect, 7);
    assert_eq!(counts.gat_last_per_head, expect);
    assert_eq!(counts.gat_total, expect * 2);
}

// ── fully connected ─────────────────────────────────────────────────────

#[test]
fn fc_identity_and_bias_cases() {
    let w = Tensor::param(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
    let b = Tensor::param(vec![0.0, 0.0], &[2]).unwrap();
    let x = Tensor::new(vec![3.0, -1.0, 0.5, 2.0], &[2, 2]).unwrap();
    let y = fc_forward(&w, &b, &x, Activation::Identity).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());

    let b2 = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
    let zero = Tensor::zeros(&[3, 2]);
    let y2 = fc_forward(&w, &b2, &zero, Activation::Tanh).unwrap().to_vec();
    for row in y2.chunks(2) {
        assert!((row[0] - 1.0f64.tanh()).abs() < 1e-15);
        assert!((row[1] - 2.0f64.tanh()).abs() < 1e-15);
    }
}

#[test]
fn fc_matches_scalar_oracle() {
    let mut r = rng(51);
    let (d, h) = (3, 2);
    let w = Tensor::param(random_vec(&mut r, d * h, 1.0), &[d, h]).unwrap();
    let b = Tensor::param(random_vec(&mut r, h, 1.0), &[h]).unwrap();
    let x = Tensor::new(random_vec(&mut r, 4 * d, 1.0), &[4, d]).unwrap();
    let got = fc_forward(&w, &b, &x, Activation::Sigmoid).unwrap().to_vec();
    let (wv, bv, xv) = (w.to_vec(), b.to_vec(), x.to_vec());
    for i in 0..4 {
        for o in 0..h {
            let mut s = bv[o];
            for c in 0..d {
                s += xv[i * d + c] * wv[c * h + o];
            }
            assert!((got[i * h + o] - Activation::Sigmoid.scalar(s)).abs() < 1e-12);
        }
    }
}

// ── permutation equivariance ────────────────────────────────────────────

#[test]
fn gcn_and_gat_are_permutation_equivariant() {
    let mut r = rng(61);
    let n = 5;
    let edges = [(0, 1, 0.9), (1, 2, 0.8), (2, 3, 0.7), (3, 4, 0.6), (4, 0, 0.5), (1, 4, 0.4)];
    let g = graph_of(n, &edges);
    let perm = [2usize, 0, 4, 1, 3]; // old index -> new index
    let permuted_edges: Vec<(usize, usize, f64)> =
        edges.iter().map(|&(s, d, w)| (perm[s], perm[d], w)).collect();
    let gp = graph_of(n, &permuted_edges);

    let d = 3;
    let x = Tensor::new(random_vec(&mut r, n * d, 1.0), &[n, d]).unwrap();
    let mut xp_data = vec![0.0; n * d];
    let xv = x.to_vec();
    for i in 0..n {
        xp_data[perm[i] * d..(perm[i] + 1) * d].copy_from_slice(&xv[i * d..(i + 1) * d]);
    }
    let xp = Tensor::new(xp_data, &[n, d]).unwrap();

    let gcn = GcnLayer {
        w: Tensor::param(random_vec(&mut r, d * 4, 1.0), &[d, 4]).unwrap(),
        activation: Activation::Tanh,
    };
    let out = gcn.forward(&x, &normalize_adjacency(&g)).unwrap().to_vec();
    let out_p = gcn.forward(&xp, &normalize_adjacency(&gp)).unwrap().to_vec();
    for i in 0..n {
        assert_close(&out[i * 4..(i + 1) * 4], &out_p[perm[i] * 4..(perm[i] + 1) * 4], 1e-12, "gcn perm");
    }

    let mut gat = GatLayer::new(&mut r, d, 2, 2, 0.2, Activation::Sigmoid);
    for a in &mut gat.a {
        a.set_data(&random_vec(&mut r, 4, 0.5)).unwrap();
    }
    let nb = neighbor_sets(&g);
    let nbp = neighbor_sets(&gp);
    let got = gat_forward(&gat, &x, &nb, &nb.non_neighbor_mask()).unwrap().to_vec();
    let got_p = gat_forward(&gat, &xp, &nbp, &nbp.non_neighbor_mask()).unwrap().to_vec();
    for i in 0..n {
        assert_close(&got[i * 4..(i + 1) * 4], &got_p[perm[i] * 4..(perm[i] + 1) * 4], 1e-12, "gat perm");
    }
}

// ── gradients ───────────────────────────────────────────────────────────

#[test]
fn layer_gradients_match_finite_differences() {
    let mut r = rng(71);
    let n = 5;
    let g = graph_of(n, &[(0, 1, 0.8), (1, 2, 0.6), (2, 3, 0.9), (3, 4, 0.5), (4, 0, 0.7), (2, 0, 0.4)]);
    let a_hat = normalize_adjacency(&g);
    let nbrs = neighbor_sets(&g);
    let mask = nbrs.non_neighbor_mask();
    let d = 3;
    let x = Tensor::param(random_vec(&mut r, n * d, 1.0), &[n, d]).unwrap();

    // GCN
    let gcn = GcnLayer::new(&mut r, d, 4, Activation::Sigmoid);
    let mut params = vec![("x".to_string(), x.clone())];
    gcn.params_into("gcn", &mut params);
    let report = grad_check_params(
        || Ok(gcn.forward(&x, &a_hat)?.tanh().sum_all()),
        &params,
        1e-5,
    )
    .unwrap();
    for (name, err) in report {
        assert!(err <= 1e-5, "gcn {name}: {err}");
    }

    // GAT
    let gat = GatLayer::new(&mut r, d, 2, 2, 0.2, Activation::Sigmoid);
    let mut params = vec![("x".to_string(), x.clone())];
    gat.params_into("gat", &mut params);
    randomize(&params[1..], &mut r);
    let report = grad_check_params(
        || Ok(gat_forward(&gat, &x, &nbrs, &mask)?.sum_all()),
        &params,
        1e-5,
    )
    .unwrap();
    for (name, err) in report {
        assert!(err <= 1e-5, "gat {name}: {err}");
    }

    // full attention
    let full = FullSpatialAttention::new(&mut r, 2, 2);
    let xf = Tensor::param(random_vec(&mut r, n * 4, 1.0), &[n, 4]).unwrap();
    let mut params = vec![("x".to_string(), xf.clone())];
    full.params_into("attn", &mut params);
    let report = grad_check_params(
        || Ok(full.forward(&xf)?.tanh().sum_all()),
        &params,
        1e-5,
    )
    .unwrap();
    for (name, err) in report {
        assert!(err <= 1e-5, "full-attn {name}: {err}");
    }

    // fc
    let fc = FcLayer::new(&mut r, d, 2, Activation::Tanh);
    let mut params = vec![("x".to_string(), x.clone())];
    fc.params_into("fc", &mut params);
    let report = grad_check_params(|| Ok(fc.forward(&x)?.sum_all()), &params, 1e-5).unwrap();
    for (name, err) in report {
        assert!(err <= 1e-5, "fc {name}: {err}");
    }
}
