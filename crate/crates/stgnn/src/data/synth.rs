//! Synthetic traffic generator for desk-scale runs.
//!
//! Each node gets a daily speed profile: a per-node base level around
//! 60 km/h, a diurnal sinusoid, morning and evening rush-hour dips, and a
//! couple of recurring congestion events. Events propagate to downstream
//! graph neighbors with a one-slot lag at reduced depth, white noise goes
//! on top, and values clip to [0, 120]. Everything is a pure function of
//! the seed, so identical seeds give identical datasets.

use chrono::NaiveDateTime;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{SeriesDataset, SeriesKind};
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph};

pub const SLOTS_PER_DAY: usize = 288;
const RESOLUTION_MINUTES: u32 = 5;
/// Fraction of an event's depth that reaches a downstream neighbor.
const PROPAGATION: f64 = 0.6;

/// A recurring daily congestion event: a Gaussian dip in speed centered at
/// `slot`, repeated every day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthEvent {
    pub node: usize,
    pub slot: usize,
    pub depth: f64,
    pub width_slots: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub n_nodes: usize,
    pub n_days: usize,
    pub seed: u64,
    pub noise_std: f64,
    /// Extra events injected on top of the generated ones (scenario
    /// testing); they propagate like any other event.
    pub injected_events: Vec<SynthEvent>,
}

impl SynthOptions {
    pub fn new(n_nodes: usize, n_days: usize, seed: u64, noise_std: f64) -> SynthOptions {
        SynthOptions { n_nodes, n_days, seed, noise_std, injected_events: Vec::new() }
    }
}

struct NodeProfile {
    base: f64,
    amp: f64,
    phase: f64,
    am_center: f64,
    am_depth: f64,
    am_width: f64,
    pm_center: f64,
    pm_depth: f64,
    pm_width: f64,
}

/// Circular Gaussian bump on the daily slot wheel.
fn bump(slot: f64, center: f64, width: f64) -> f64 {
    let raw = (slot - center).abs();
    let d = raw.min(SLOTS_PER_DAY as f64 - raw);
    (-(d * d) / (width * width)).exp()
}

fn node_profile(rng: &mut ChaCha8Rng) -> NodeProfile {
    NodeProfile {
        base: 60.0 + rng.random_range(-15.0..15.0),
        amp: rng.random_range(5.0..12.0),
        phase: rng.random_range(-12.0..12.0),
        am_center: 102.0 + rng.random_range(-8.0..8.0), // around 08:30
        am_depth: rng.random_range(28.0..40.0),
        am_width: rng.random_range(16.0..22.0),
        pm_center: 216.0 + rng.random_range(-8.0..8.0), // around 18:00
        pm_depth: rng.random_range(32.0..46.0),
        pm_width: rng.random_range(18.0..26.0),
    }
}

fn node_events(rng: &mut ChaCha8Rng, node: usize) -> Vec<SynthEvent> {
    let count = rng.random_range(1..=2);
    (0..count)
        .map(|_| SynthEvent {
            node,
            slot: rng.random_range(0..SLOTS_PER_DAY),
            depth: rng.random_range(8.0..18.0),
            width_slots: rng.random_range(2.5..6.0),
        })
        .collect()
}

/// Sum of event dips at a node for a given slot (no propagation).
fn event_component(events: &[SynthEvent], node: usize, slot: f64) -> f64 {
    events
        .iter()
        .filter(|e| e.node == node)
        .map(|e| e.depth * bump(slot, e.slot as f64, e.width_slots))
        .sum()
}

pub fn synth_generate(opts: &SynthOptions, graph: &Graph) -> Result<SeriesDataset> {
    if graph.n() != opts.n_nodes {
        return Err(Error::Data(format!(
            "graph has {} nodes, generator asked for {}",
            graph.n(),
            opts.n_nodes
        )));
    }
    if opts.n_nodes == 0 || opts.n_days == 0 {
        return Err(Error::Data("need at least one node and one day".into()));
    }
    let n = opts.n_nodes;
    let t_len = opts.n_days * SLOTS_PER_DAY;

    // Per-node signal is derived from (seed, node) so graph structure only
    // affects propagation, never the node's own profile.
    let mut profiles = Vec::with_capacity(n);
    let mut events: Vec<SynthEvent> = Vec::new();
    for node in 0..n {
        let mut node_rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(node as u64 + 1)));
        profiles.push(node_profile(&mut node_rng));
        events.extend(node_events(&mut node_rng, node));
    }
    events.extend_from_slice(&opts.injected_events);
    for e in &opts.injected_events {
        if e.node >= n {
            return Err(Error::Data(format!("injected event node {} out of range", e.node)));
        }
    }

    // incoming neighbors: sources whose events reach each node
    let mut upstream: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in graph.edges() {
        if e.src != e.dst {
            upstream[e.dst].push(e.src);
        }
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x2545f4914f6cdd1d).wrapping_add(17));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let start = NaiveDateTime::parse_from_str("2024-01-01T00:00:00", "%Y-%m-%dT%H:%M:%S").unwrap();
    let timestamps: Vec<NaiveDateTime> =
        (0..t_len).map(|t| start + chrono::Duration::minutes(t as i64 * RESOLUTION_MINUTES as i64)).collect();

    let mut values = vec![0.0f64; t_len * n];
    for t in 0..t_len {
        let slot = (t % SLOTS_PER_DAY) as f64;
        // events from one slot earlier, wrapping across days
        let prev_slot = ((t + SLOTS_PER_DAY - 1) % SLOTS_PER_DAY) as f64;
        for node in 0..n {
            let p = &profiles[node];
            let diurnal = p.amp * (2.0 * std::f64::consts::PI * (slot + p.phase) / SLOTS_PER_DAY as f64).sin();
            let rush = p.am_depth * bump(slot, p.am_center, p.am_width)
                + p.pm_depth * bump(slot, p.pm_center, p.pm_width);
            let own = event_component(&events, node, slot);
            let propagated: f64 = upstream[node]
                .iter()
                .map(|&u| PROPAGATION * event_component(&events, u, prev_slot))
                .sum();
            let noise = if opts.noise_std > 0.0 {
                opts.noise_std * normal.sample(&mut noise_rng)
            } else {
                0.0
            };
            let v = p.base + diurnal - rush - own - propagated + noise;
            values[t * n + node] = v.clamp(0.0, 120.0);
        }
    }

    let node_ids = (0..n).map(|i| format!("synth{i:03}")).collect();
    SeriesDataset::new(values, node_ids, timestamps, SeriesKind::Speed, RESOLUTION_MINUTES)
}

/// Random connected graph: a random spanning tree plus extra edges, all
/// symmetric with unit weight.
pub fn random_connected_graph(n: usize, extra_edges: usize, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::Graph("graph needs at least one node".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        pairs.push((u, v));
    }
    let mut attempts = 0;
    while pairs.len() < (n - 1) + extra_edges && attempts < extra_edges * 20 {
        attempts += 1;
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let (u, v) = (a.min(b), a.max(b));
        if u != v && !pairs.contains(&(u, v)) {
            pairs.push((u, v));
        }
    }
    let mut edges = Vec::with_capacity(pairs.len() * 2);
    for (u, v) in pairs {
        edges.push(Edge { src: u, dst: v, weight: 1.0 });
        edges.push(Edge { src: v, dst: u, weight: 1.0 });
    }
    Graph::new((0..n).map(|i| format!("synth{i:03}")).collect(), edges)
}
