//! Sparse latent graph with a 4-partition into independent sets.
//!
//! Partition 0 holds the condition nodes; partitions 1..=3 are the free
//! blocks updated by block Gibbs sampling. Because each partition is an
//! independent set, all nodes of one partition are conditionally independent
//! given the others.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

pub const N_PARTITIONS: usize = 4;
pub const CONDITION: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    partition: Vec<u8>,
    members: [Vec<usize>; N_PARTITIONS],
    offsets: Vec<usize>,
    /// `(neighbor, edge index)` pairs grouped by node.
    neighbors: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NodeOutOfRange { edge: (usize, usize) },
    SelfLoop { node: usize },
    DuplicateEdge { edge: (usize, usize) },
    SamePartition { edge: (usize, usize), partition: u8 },
    BadLabel { node: usize, label: u8 },
    PartitionLength { expected: usize, got: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NodeOutOfRange { edge } => write!(f, "edge {edge:?} references a missing node"),
            Violation::SelfLoop { node } => write!(f, "self-loop on node {node}"),
            Violation::DuplicateEdge { edge } => write!(f, "duplicate edge {edge:?}"),
            Violation::SamePartition { edge, partition } => {
                write!(f, "edge {edge:?} lies inside partition {partition}")
            }
            Violation::BadLabel { node, label } => {
                write!(f, "node {node} has partition label {label} outside 0..4")
            }
            Violation::PartitionLength { expected, got } => {
                write!(f, "partition vector has {got} entries for {expected} nodes")
            }
        }
    }
}

/// Checks every topology invariant on raw parts. An empty list means valid.
pub fn validate_parts(n_nodes: usize, edges: &[(usize, usize)], partition: &[u8]) -> Vec<Violation> {
    let mut out = Vec::new();
    if partition.len() != n_nodes {
        out.push(Violation::PartitionLength {
            expected: n_nodes,
            got: partition.len(),
        });
    }
    for (node, &label) in partition.iter().enumerate() {
        if label as usize >= N_PARTITIONS {
            out.push(Violation::BadLabel { node, label });
        }
    }
    let mut seen = HashSet::new();
    for &(i, j) in edges {
        if i >= n_nodes || j >= n_nodes {
            out.push(Violation::NodeOutOfRange { edge: (i, j) });
            continue;
        }
        if i == j {
            out.push(Violation::SelfLoop { node: i });
            continue;
        }
        if !seen.insert((i.min(j), i.max(j))) {
            out.push(Violation::DuplicateEdge { edge: (i, j) });
        }
        if let (Some(&pi), Some(&pj)) = (partition.get(i), partition.get(j)) {
            if pi == pj {
                out.push(Violation::SamePartition {
                    edge: (i, j),
                    partition: pi,
                });
            }
        }
    }
    out
}

impl Topology {
    /// Builds a validated topology. Edges are stored as `(min, max)` pairs in
    /// sorted order.
    pub fn new(n_nodes: usize, edges: Vec<(usize, usize)>, partition: Vec<u8>) -> Result<Self> {
        let violations = validate_parts(n_nodes, &edges, &partition);
        if let Some(first) = violations.first() {
            return Err(Error::Topology(format!(
                "{} violation(s), first: {first}",
                violations.len()
            )));
        }
        let mut edges: Vec<(usize, usize)> =
            edges.into_iter().map(|(i, j)| (i.min(j), i.max(j))).collect();
        edges.sort_unstable();

        let mut members: [Vec<usize>; N_PARTITIONS] = Default::default();
        for (node, &p) in partition.iter().enumerate() {
            members[p as usize].push(node);
        }
        let mut degree = vec![0usize; n_nodes];
        for &(i, j) in &edges {
            degree[i] += 1;
            degree[j] += 1;
        }
        let mut offsets = vec![0usize; n_nodes + 1];
        for i in 0..n_nodes {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let mut neighbors = vec![(0usize, 0usize); offsets[n_nodes]];
        for (e, &(i, j)) in edges.iter().enumerate() {
            neighbors[fill[i]] = (j, e);
            fill[i] += 1;
            neighbors[fill[j]] = (i, e);
            fill[j] += 1;
        }
        Ok(Self {
            n_nodes,
            edges,
            partition,
            members,
            offsets,
            neighbors,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn partition(&self) -> &[u8] {
        &self.partition
    }

    /// Node ids of partition `k` in ascending order.
    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    pub fn partition_sizes(&self) -> [usize; N_PARTITIONS] {
        [
            self.members[0].len(),
            self.members[1].len(),
            self.members[2].len(),
            self.members[3].len(),
        ]
    }

    /// Nodes outside the condition partition, ascending.
    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes)
            .filter(|&i| self.partition[i] != CONDITION)
            .collect()
    }

    #[inline]
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.neighbors[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Edge index of `(i, j)` if present.
    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.edges.binary_search(&(i.min(j), i.max(j))).ok()
    }

    /// Order in which latent vectors list nodes: partition 0, then 1, 2, 3,
    /// each ascending.
    pub fn latent_order(&self) -> Vec<usize> {
        self.members.iter().flatten().copied().collect()
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_parts(self.n_nodes, &self.edges, &self.partition)
    }

    /// Edge-list text with a `# nodes` line and a `# partition` block.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("# nodes {}\n", self.n_nodes));
        for &(i, j) in &self.edges {
            s.push_str(&format!("{i} {j}\n"));
        }
        s.push_str("# partition\n");
        for (i, p) in self.partition.iter().enumerate() {
            s.push_str(&format!("{i} {p}\n"));
        }
        s
    }

    /// First 16 hex digits of the SHA-256 of [`Topology::to_edge_list`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_edge_list().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn export(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_edge_list())?;
        Ok(())
    }
}

/// Quadripartite stand-in for a hardware connectivity graph.
///
/// Nodes are numbered partition by partition. For every ordered pair of
/// partitions `(p, q)`, node `i` of `p` is aligned to position
/// `round((i + 1/2) |q| / |p| - 1/2)` of `q`, the node whose relative
/// position matches its own, and draws neighbors at random among the
/// nodes of `q` within `locality_window` positions of it, until it has
/// `degree_bound` neighbors in `q` or the window is exhausted. No node ever
/// exceeds `degree_bound` neighbors in any single other partition.
pub fn build_quadripartite(
    sizes: [usize; N_PARTITIONS],
    degree_bound: usize,
    locality_window: usize,
    seed: u64,
) -> Result<Topology> {
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config(format!("partition sizes must be >= 1, got {sizes:?}")));
    }
    if degree_bound == 0 {
        return Err(Error::Config("degree_bound must be >= 1".into()));
    }
    let mut start = [0usize; N_PARTITIONS];
    for k in 1..N_PARTITIONS {
        start[k] = start[k - 1] + sizes[k - 1];
    }
    let n_nodes: usize = sizes.iter().sum();
    let mut partition = Vec::with_capacity(n_nodes);
    for (k, &s) in sizes.iter().enumerate() {
        partition.extend(std::iter::repeat(k as u8).take(s));
    }

    let mut rng = rng::seeded(seed);
    let mut edges = HashSet::new();
    // count[node][q] = neighbors of `node` inside partition q
    let mut count = vec![[0usize; N_PARTITIONS]; n_nodes];

    let window = |i: usize, from: usize, to: usize| {
        let center = ((i as f64 + 0.5) * sizes[to] as f64 / sizes[from] as f64 - 0.5)
            .round()
            .max(0.0) as usize;
        let lo = center.saturating_sub(locality_window);
        let hi = (center + locality_window).min(sizes[to] - 1);
        (lo.min(sizes[to] - 1), hi)
    };

    for p in 0..N_PARTITIONS {
        for q in (p + 1)..N_PARTITIONS {
            for (from, to) in [(p, q), (q, p)] {
                for i in 0..sizes[from] {
                    let a = start[from] + i;
                    let (lo, hi) = window(i, from, to);
                    let mut candidates: Vec<usize> = (lo..=hi).collect();
                    candidates.shuffle(&mut rng);
                    for j in candidates {
                        if count[a][to] >= degree_bound {
                            break;
                        }
                        let b = start[to] + j;
                        if count[b][from] >= degree_bound {
                            continue;
                        }
                        if edges.insert((a.min(b), a.max(b))) {
                            count[a][to] += 1;
                            count[b][from] += 1;
                        }
                    }
                }
            }
        }
    }
    let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
    edges.sort_unstable();
    Topology::new(n_nodes, edges, partition)
}

/// Parsed edge-list file.
#[derive(Debug, Default)]
struct EdgeListFile {
    n_nodes: Option<usize>,
    edges: Vec<(usize, usize)>,
    partition: Vec<(usize, u8)>,
}

fn parse_edge_list(text: &str) -> Result<EdgeListFile> {
    let mut out = EdgeListFile::default();
    let mut in_partition = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let words: Vec<&str> = comment.split_whitespace().collect();
            match words.as_slice() {
                [w] if w.eq_ignore_ascii_case("partition") => in_partition = true,
                [w, n] if w.eq_ignore_ascii_case("nodes") => {
                    out.n_nodes = Some(n.parse().map_err(|_| {
                        Error::Format(format!("line {}: bad node count {n:?}", lineno + 1))
                    })?);
                }
                _ => {}
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Format(format!("line {}: expected two integers, got {raw:?}", lineno + 1));
        if fields.len() != 2 {
            return Err(bad());
        }
        let a: usize = fields[0].parse().map_err(|_| bad())?;
        if in_partition {
            let p: u8 = fields[1].parse().map_err(|_| bad())?;
            out.partition.push((a, p));
        } else {
            let b: usize = fields[1].parse().map_err(|_| bad())?;
            out.edges.push((a, b));
        }
    }
    Ok(out)
}

/// Loads an edge list. Without a supplied partition, one is computed by
/// DSATUR coloring and must use at most four colors.
pub fn import_topology(path: impl AsRef<Path>, partition_supplied: bool) -> Result<Topology> {
    let text = fs::read_to_string(path)?;
    topology_from_edge_list(&text, partition_supplied)
}

pub fn topology_from_edge_list(text: &str, partition_supplied: bool) -> Result<Topology> {
    let file = parse_edge_list(text)?;
    let max_edge = file.edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0);
    let max_part = file.partition.iter().map(|&(i, _)| i + 1).max().unwrap_or(0);
    let n_nodes = file.n_nodes.unwrap_or(0).max(max_edge).max(max_part);

    let partition = if partition_supplied {
        if file.partition.is_empty() {
            return Err(Error::Format("partition block missing".into()));
        }
        let mut partition = vec![u8::MAX; n_nodes];
        for &(i, p) in &file.partition {
            if partition[i] != u8::MAX {
                return Err(Error::Format(format!("node {i} assigned twice in partition block")));
            }
            partition[i] = p;
        }
        if let Some(i) = partition.iter().position(|&p| p == u8::MAX) {
            return Err(Error::Format(format!("node {i} missing from partition block")));
        }
        partition
    } else {
        dsatur_partition(n_nodes, &file.edges)?
    };
    Topology::new(n_nodes, file.edges, partition)
}

/// DSATUR greedy coloring with lowest-index tie-breaking, restricted to four
/// colors. Fails on the first node that would need a fifth.
pub fn dsatur_partition(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Vec<u8>> {
    let mut adj = vec![Vec::new(); n_nodes];
    for &(i, j) in edges {
        if i >= n_nodes || j >= n_nodes {
            return Err(Error::Format(format!("edge ({i}, {j}) out of range")));
        }
        if i == j {
            return Err(Error::Topology(format!("self-loop on node {i}")));
        }
        adj[i].push(j);
        adj[j].push(i);
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let mut color: Vec<Option<u8>> = vec![None; n_nodes];
    // bit k set: a neighbor already has color k
    let mut seen = vec![0u32; n_nodes];
    for _ in 0..n_nodes {
        let node = (0..n_nodes)
            .filter(|&v| color[v].is_none())
            .max_by(|&a, &b| {
                let key = |v: usize| (seen[v].count_ones(), adj[v].len());
                key(a).cmp(&key(b)).then(b.cmp(&a))
            })
            .expect("uncolored node remains");
        let c = (0..32u32).find(|c| seen[node] & (1 << c) == 0).unwrap() as u8;
        if c as usize >= N_PARTITIONS {
            return Err(Error::Topology(format!(
                "node {node} cannot be colored with {N_PARTITIONS} colors"
            )));
        }
        color[node] = Some(c);
        for &w in &adj[node] {
            seen[w] |= 1 << c;
        }
    }
    Ok(color.into_iter().map(|c| c.unwrap()).collect())
}
