//! Subscription (watch) networks between services.
//!
//! Edges are directed: `a -> b` means `a` follows `b`'s policy version.
//! Adjacency is stored in compressed sparse rows with each out-list sorted,
//! plus a mirrored reverse index of watchers.

use std::fmt;
use std::io::{self, Write};
use std::ops::Range;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("degree {k} must satisfy 0 < k < n (n = {n})")]
    BadDegree { n: usize, k: usize },
    #[error("rewiring probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error("node {0} subscribes to itself")]
    SelfEdge(usize),
    #[error("node {node} subscribes to {target} twice")]
    DuplicateEdge { node: usize, target: usize },
    #[error("node {node} subscribes to {target}, which is outside 0..{n}")]
    TargetOutOfRange {
        node: usize,
        target: usize,
        n: usize,
    },
    #[error("graph of {0} nodes does not fit 32-bit ids")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    Regular,
    Random,
    WattsStrogatz,
    BarabasiAlbert,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 4] = [
        TopologyKind::Regular,
        TopologyKind::Random,
        TopologyKind::WattsStrogatz,
        TopologyKind::BarabasiAlbert,
    ];
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TopologyKind::Regular => "Regular",
            TopologyKind::Random => "Random",
            TopologyKind::WattsStrogatz => "WattsStrogatz",
            TopologyKind::BarabasiAlbert => "BarabasiAlbert",
        })
    }
}

impl FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TopologyKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| {
                format!("unknown topology `{s}` (expected Regular, Random, WattsStrogatz or BarabasiAlbert)")
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubscriptionGraph {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    rev_offsets: Vec<usize>,
    watchers: Vec<u32>,
}

impl SubscriptionGraph {
    /// Builds a graph from per-node watch lists, validating them.
    pub fn from_adjacency(lists: Vec<Vec<u32>>) -> Result<Self, GraphError> {
        let n = lists.len();
        check_size(n)?;
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        offsets.push(0);
        for (node, mut list) in lists.into_iter().enumerate() {
            list.sort_unstable();
            for (i, &t) in list.iter().enumerate() {
                let t = t as usize;
                if t >= n {
                    return Err(GraphError::TargetOutOfRange { node, target: t, n });
                }
                if t == node {
                    return Err(GraphError::SelfEdge(node));
                }
                if i > 0 && list[i - 1] as usize == t {
                    return Err(GraphError::DuplicateEdge { node, target: t });
                }
            }
            targets.extend_from_slice(&list);
            offsets.push(targets.len());
        }
        Ok(Self::from_csr(offsets, targets))
    }

    /// Assumes out-lists are valid; sorts them and builds the reverse index.
    fn from_csr(offsets: Vec<usize>, mut targets: Vec<u32>) -> Self {
        let n = offsets.len() - 1;
        for w in offsets.windows(2) {
            targets[w[0]..w[1]].sort_unstable();
        }
        let mut rev_offsets = vec![0usize; n + 1];
        for &t in &targets {
            rev_offsets[t as usize + 1] += 1;
        }
        for i in 0..n {
            rev_offsets[i + 1] += rev_offsets[i];
        }
        let mut cursor = rev_offsets.clone();
        let mut watchers = vec![0u32; targets.len()];
        // Sources are visited in increasing order, so each watcher list ends up sorted.
        for src in 0..n {
            for &t in &targets[offsets[src]..offsets[src + 1]] {
                let slot = &mut cursor[t as usize];
                watchers[*slot] = src as u32;
                *slot += 1;
            }
        }
        SubscriptionGraph {
            offsets,
            targets,
            rev_offsets,
            watchers,
        }
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    /// Services watched by `node`, ascending.
    pub fn watched(&self, node: usize) -> &[u32] {
        &self.targets[self.edge_range(node)]
    }

    /// Services watching `node`, ascending.
    pub fn watchers(&self, node: usize) -> &[u32] {
        &self.watchers[self.rev_offsets[node]..self.rev_offsets[node + 1]]
    }

    /// Position of `node`'s out-edges in the flat edge array. Per-edge state
    /// (such as a service's view) can be stored in a parallel array.
    pub fn edge_range(&self, node: usize) -> Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    /// Flat array of all edge targets, grouped by source.
    pub fn targets(&self) -> &[u32] {
        &self.targets
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.rev_offsets[node + 1] - self.rev_offsets[node]
    }

    pub fn mean_out_degree(&self) -> f64 {
        self.edge_count() as f64 / self.n() as f64
    }

    pub fn max_in_degree(&self) -> usize {
        (0..self.n()).map(|i| self.in_degree(i)).max().unwrap_or(0)
    }

    pub fn out_degree_variance(&self) -> f64 {
        let mean = self.mean_out_degree();
        (0..self.n())
            .map(|i| (self.out_degree(i) as f64 - mean).powi(2))
            .sum::<f64>()
            / self.n() as f64
    }

    /// Writes one `src,dst` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> io::Result<()> {
        for src in 0..self.n() {
            for &dst in self.watched(src) {
                writeln!(out, "{src},{dst}")?;
            }
        }
        Ok(())
    }

    /// Approximate heap footprint in bytes.
    pub fn heap_bytes(&self) -> usize {
        (self.offsets.capacity() + self.rev_offsets.capacity()) * std::mem::size_of::<usize>()
            + (self.targets.capacity() + self.watchers.capacity()) * std::mem::size_of::<u32>()
    }
}

fn check_size(n: usize) -> Result<(), GraphError> {
    if n > u32::MAX as usize {
        Err(GraphError::TooLarge(n))
    } else {
        Ok(())
    }
}

fn check_degree(n: usize, k: usize) -> Result<(), GraphError> {
    check_size(n)?;
    if k == 0 || k >= n {
        Err(GraphError::BadDegree { n, k })
    } else {
        Ok(())
    }
}

/// Generates a graph of the given family with target degree `k`.
pub fn generate<R: Rng + ?Sized>(
    kind: TopologyKind,
    n: usize,
    k: usize,
    beta: f64,
    rng: &mut R,
) -> Result<SubscriptionGraph, GraphError> {
    match kind {
        TopologyKind::Regular => gen_regular(n, k),
        TopologyKind::Random => gen_random(n, k, rng),
        TopologyKind::WattsStrogatz => gen_watts_strogatz(n, k, beta, rng),
        TopologyKind::BarabasiAlbert => gen_barabasi_albert(n, k, rng),
    }
}

fn ring_lattice(n: usize, k: usize) -> (Vec<usize>, Vec<u32>) {
    let mut targets = Vec::with_capacity(n * k);
    for i in 0..n {
        targets.extend((1..=k).map(|d| ((i + d) % n) as u32));
    }
    ((0..=n).map(|i| i * k).collect(), targets)
}

/// Ring lattice: node `i` watches `i+1 ..= i+k` (mod n).
pub fn gen_regular(n: usize, k: usize) -> Result<SubscriptionGraph, GraphError> {
    check_degree(n, k)?;
    let (offsets, targets) = ring_lattice(n, k);
    Ok(SubscriptionGraph::from_csr(offsets, targets))
}

/// Each node watches `k` distinct others chosen uniformly.
pub fn gen_random<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<SubscriptionGraph, GraphError> {
    check_degree(n, k)?;
    let mut targets = Vec::with_capacity(n * k);
    for i in 0..n {
        targets.extend(
            index::sample(rng, n - 1, k)
                .into_iter()
                .map(|v| if v >= i { v + 1 } else { v } as u32),
        );
    }
    Ok(SubscriptionGraph::from_csr(
        (0..=n).map(|i| i * k).collect(),
        targets,
    ))
}

/// Small-world graph: a ring lattice whose edges are each rewired with
/// probability `beta`.
pub fn gen_watts_strogatz<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    beta: f64,
    rng: &mut R,
) -> Result<SubscriptionGraph, GraphError> {
    gen_watts_strogatz_counted(n, k, beta, rng).map(|(g, _)| g)
}

/// As [`gen_watts_strogatz`], also returning how many edges were rewired.
pub fn gen_watts_strogatz_counted<R: Rng + ?Sized>(
    n: usize,
    k: usize,
    beta: f64,
    rng: &mut R,
) -> Result<(SubscriptionGraph, usize), GraphError> {
    check_degree(n, k)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(GraphError::BadProbability(beta));
    }
    let (offsets, mut targets) = ring_lattice(n, k);
    let mut rewired = 0;
    // Node i's members are stamped with i + 1.
    let mut stamp = vec![0u32; n];
    // A node that already watches everyone else has nowhere to rewire to.
    let can_rewire = k < n - 1;
    for i in 0..n {
        let mark = i as u32 + 1;
        stamp[i] = mark;
        let range = offsets[i]..offsets[i + 1];
        for &t in &targets[range.clone()] {
            stamp[t as usize] = mark;
        }
        for e in range {
            if !rng.random_bool(beta) || !can_rewire {
                continue;
            }
            let new = loop {
                let c = rng.random_range(0..n);
                if stamp[c] != mark {
                    break c;
                }
            };
            let old = targets[e] as usize;
            stamp[old] = 0;
            stamp[new] = mark;
            targets[e] = new as u32;
            rewired += 1;
        }
    }
    Ok((SubscriptionGraph::from_csr(offsets, targets), rewired))
}

/// Preferential attachment. The first `m + 1` nodes form a clique; every
/// later node watches `m` distinct earlier nodes chosen with probability
/// proportional to their current total (in + out) degree.
pub fn gen_barabasi_albert<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<SubscriptionGraph, GraphError> {
    check_degree(n, m)?;
    let seeds = m + 1;
    let mut targets: Vec<u32> = Vec::with_capacity(n * m);
    for i in 0..seeds {
        targets.extend((0..seeds).filter(|&j| j != i).map(|j| j as u32));
    }
    let mut stamp = vec![0u32; n];
    for v in seeds..n {
        let mark = v as u32 + 1;
        // Every node so far has exactly m out-edges, so the source of edge e
        // is e / m. Endpoint e < E is a target, E + e is the source of e.
        let edges = targets.len();
        let mut picked = 0;
        while picked < m {
            let endpoint = rng.random_range(0..2 * edges);
            let u = if endpoint < edges {
                targets[endpoint] as usize
            } else {
                (endpoint - edges) / m
            };
            if stamp[u] != mark {
                stamp[u] = mark;
                targets.push(u as u32);
                picked += 1;
            }
        }
    }
    Ok(SubscriptionGraph::from_csr(
        (0..=n).map(|i| i * m).collect(),
        targets,
    ))
}
