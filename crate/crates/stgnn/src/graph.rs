//! Road-network graphs: Gaussian-kernel adjacency construction from sensor
//! distances, symmetric normalization with self-loops, neighbor sets for
//! attention, and the sparse-dense product used by graph convolution.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Mask, SparseMatrix, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// Directed weighted graph over named nodes. Adjacency convention:
/// `A[src][dst] = weight`.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    node_ids: Vec<String>,
    edges: Vec<Edge>,
}

impl Graph {
    pub fn new(node_ids: Vec<String>, edges: Vec<Edge>) -> Result<Graph> {
        let n = node_ids.len();
        let mut seen: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for e in &edges {
            if e.src >= n || e.dst >= n {
                return Err(Error::Graph(format!(
                    "edge ({}, {}) out of range for {} nodes",
                    e.src, e.dst, n
                )));
            }
            if !(0.0..=1.0).contains(&e.weight) || !e.weight.is_finite() {
                return Err(Error::Graph(format!(
                    "edge ({}, {}) weight {} outside [0, 1]",
                    e.src, e.dst, e.weight
                )));
            }
            seen.push((e.src, e.dst));
        }
        seen.sort_unstable();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Graph(format!("duplicate edge ({}, {})", w[0].0, w[0].1)));
        }
        Ok(Graph { n, node_ids, edges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|s| s == id)
    }

    /// Whether every edge has a matching reverse edge of equal weight.
    pub fn is_symmetric(&self) -> bool {
        let mut set: Vec<(usize, usize, u64)> =
            self.edges.iter().map(|e| (e.src, e.dst, e.weight.to_bits())).collect();
        set.sort_unstable();
        self.edges
            .iter()
            .all(|e| set.binary_search(&(e.dst, e.src, e.weight.to_bits())).is_ok())
    }
}

/// Population standard deviation of a distance list, used as the Gaussian
/// kernel bandwidth when none is given. All-equal distances are rejected
/// (a zero bandwidth makes the kernel degenerate).
pub fn sigma_from_distances(distances: &[f64]) -> Result<f64> {
    if distances.len() < 2 || distances.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::Graph(
            "need at least two distinct distances to derive sigma".into(),
        ));
    }
    let n = distances.len() as f64;
    let mean = distances.iter().sum::<f64>() / n;
    let var = distances.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    Ok(var.sqrt())
}

/// Thresholded Gaussian kernel: `A_ij = exp(-d_ij^2 / sigma^2)` when that
/// value reaches `epsilon`, else the edge is dropped entirely. Node ids are
/// inferred from the entries and sorted lexicographically.
pub fn build_adjacency_from_distances(
    entries: &[(String, String, f64)],
    sigma: f64,
    epsilon: f64,
) -> Result<Graph> {
    if !(sigma > 0.0) {
        return Err(Error::Graph(format!("sigma must be positive, got {sigma}")));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::Graph(format!("epsilon must be in [0, 1), got {epsilon}")));
    }
    let mut ids: Vec<&str> = Vec::with_capacity(entries.len() * 2);
    for (src, dst, d) in entries {
        if !(*d >= 0.0) || !d.is_finite() {
            return Err(Error::Graph(format!("negative or non-finite distance {d} for ({src}, {dst})")));
        }
        ids.push(src);
        ids.push(dst);
    }
    ids.sort_unstable();
    ids.dedup();
    let node_ids: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    let index = |id: &str| node_ids.binary_search_by(|probe| probe.as_str().cmp(id)).unwrap();

    let mut edges = Vec::new();
    for (src, dst, d) in entries {
        let w = (-(d * d) / (sigma * sigma)).exp();
        if w >= epsilon {
            edges.push(Edge { src: index(src), dst: index(dst), weight: w });
        }
    }
    Graph::new(node_ids, edges)
}

/// `D^{-1/2} (I + A) D^{-1/2}` with `D` the row sums of `I + A`.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    n: usize,
    mat: Arc<SparseMatrix>,
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &Arc<SparseMatrix> {
        &self.mat
    }

    pub fn to_dense(&self) -> Vec<f64> {
        self.mat.to_dense()
    }
}

pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    let n = g.n();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(g.edge_count() + n);
    let mut diag = vec![1.0f64; n];
    for e in g.edges() {
        if e.src == e.dst {
            diag[e.src] += e.weight;
        } else {
            triplets.push((e.src, e.dst, e.weight));
        }
    }
    for (i, &v) in diag.iter().enumerate() {
        triplets.push((i, i, v));
    }
    // row sums of I + A; every diagonal is >= 1, so the rescale is total
    let mut deg = vec![0.0f64; n];
    for &(r, _, v) in &triplets {
        deg[r] += v;
    }
    for t in &mut triplets {
        t.2 /= (deg[t.0] * deg[t.1]).sqrt();
    }
    let mat = SparseMatrix::from_triplets(n, n, &triplets)
        .expect("validated graph yields valid triplets");
    NormalizedAdjacency { n, mat: Arc::new(mat) }
}

/// Per-node incoming neighbors plus self, sorted ascending.
#[derive(Debug, Clone)]
pub struct NeighborSets {
    sets: Vec<Vec<usize>>,
}

impl NeighborSets {
    pub fn n(&self) -> usize {
        self.sets.len()
    }

    pub fn of(&self, i: usize) -> &[usize] {
        &self.sets[i]
    }

    /// Sum of set sizes: the number of attention scores one GAT head computes.
    pub fn total_size(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    /// `[n, n]` mask, `true` at (i, j) when j is NOT a neighbor of i.
    pub fn non_neighbor_mask(&self) -> Mask {
        let n = self.n();
        let mut fill = vec![true; n * n];
        for (i, set) in self.sets.iter().enumerate() {
            for &j in set {
                fill[i * n + j] = false;
            }
        }
        Mask::new(&[n, n], fill).expect("square mask")
    }
}

pub fn neighbor_sets(g: &Graph) -> NeighborSets {
    let mut sets: Vec<Vec<usize>> = (0..g.n()).map(|i| vec![i]).collect();
    for e in g.edges() {
        if e.weight > 0.0 && e.src != e.dst {
            sets[e.dst].push(e.src);
        }
    }
    for set in &mut sets {
        set.sort_unstable();
        set.dedup();
    }
    NeighborSets { sets }
}

/// Differentiable product `A_hat * x` over the node axis of `x`
/// ([..., n, d] -> [..., n, d]).
pub fn spmm(m: &NormalizedAdjacency, x: &Tensor) -> Result<Tensor> {
    Tensor::spmm(m.matrix(), x)
}

// ── file formats ────────────────────────────────────────────────────────
//
// Distance list: one header row, then `src_id,dst_id,distance`.
// Weight list:   one header row, then `src_id,dst_id,weight`.

fn parse_rows(path: &Path, value_name: &str) -> Result<Vec<(String, String, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    };
    if header.split(',').count() != 3 {
        return Err(Error::Data(format!(
            "{}: header must have 3 columns (src_id,dst_id,{value_name})",
            path.display()
        )));
    }
    for (idx, line) in lines {
        let row = idx + 1; // 1-based, counting the header
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(src), Some(dst), Some(val), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::Data(format!("{}: row {row}: expected 3 columns", path.display())));
        };
        let value: f64 = val.trim().parse().map_err(|_| {
            Error::Data(format!("{}: row {row}: unparsable {value_name} '{val}'", path.display()))
        })?;
        rows.push((src.trim().to_string(), dst.trim().to_string(), value));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

pub fn load_distance_csv(path: &Path) -> Result<Vec<(String, String, f64)>> {
    parse_rows(path, "distance")
}

/// Load a precomputed `src_id,dst_id,weight` adjacency.
pub fn load_weight_csv(path: &Path) -> Result<Graph> {
    let rows = parse_rows(path, "weight")?;
    let mut ids: Vec<&str> = rows.iter().flat_map(|(s, d, _)| [s.as_str(), d.as_str()]).collect();
    ids.sort_unstable();
    ids.dedup();
    let node_ids: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    let index = |id: &str| node_ids.binary_search_by(|probe| probe.as_str().cmp(id)).unwrap();
    let edges: Vec<Edge> = rows
        .iter()
        .filter(|(_, _, w)| *w != 0.0)
        .map(|(s, d, w)| Edge { src: index(s), dst: index(d), weight: *w })
        .collect();
    Graph::new(node_ids, edges)
}

/// Write the adjacency as `src_id,dst_id,weight` rows (floats round-trip).
pub fn save_weight_csv(g: &Graph, path: &Path) -> Result<()> {
    let mut out = String::from("src_id,dst_id,weight\n");
    for e in g.edges() {
        out.push_str(&format!("{},{},{}\n", g.node_ids()[e.src], g.node_ids()[e.dst], e.weight));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// How an adjacency was constructed; recorded alongside prepare output.
#[derive(Debug, Clone)]
pub struct AdjacencyBuildInfo {
    pub sigma: f64,
    pub epsilon: f64,
    pub entries_seen: usize,
    pub edges_kept: usize,
    pub symmetric: bool,
}

/// Build a graph from a distance-list file, deriving sigma from the
/// distances unless one is supplied.
pub fn graph_from_distance_file(
    path: &Path,
    sigma: Option<f64>,
    epsilon: f64,
) -> Result<(Graph, AdjacencyBuildInfo)> {
    let rows = load_distance_csv(path)?;
    let sigma = match sigma {
        Some(s) => s,
        None => sigma_from_distances(&rows.iter().map(|r| r.2).collect::<Vec<_>>())?,
    };
    let g = build_adjacency_from_distances(&rows, sigma, epsilon)?;
    let info = AdjacencyBuildInfo {
        sigma,
        epsilon,
        entries_seen: rows.len(),
        edges_kept: g.edge_count(),
        symmetric: g.is_symmetric(),
    };
    Ok((g, info))
}
