//! Peer graphs: ring, star, planar grid and custom adjacency over nodes
//! `0..n`.
//!
//! Labeling is fixed so configs are reproducible: ring edges are
//! `i -- (i + 1) mod n`, the star hub is node 0 unless overridden, and grid
//! nodes are numbered row-major without wrap-around.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TopologyKind {
    Ring,
    Star {
        #[serde(default)]
        hub: usize,
    },
    Grid {
        rows: usize,
        cols: usize,
    },
    Custom,
}

impl TopologyKind {
    pub fn name(&self) -> &'static str {
        match self {
            TopologyKind::Ring => "ring",
            TopologyKind::Star { .. } => "star",
            TopologyKind::Grid { .. } => "grid",
            TopologyKind::Custom => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologySpec {
    #[serde(flatten)]
    pub kind: TopologyKind,
    pub n: usize,
    /// Undirected edges as supplied. Generated kinds may omit them in config
    /// files; see [`TopologySpec::normalized`].
    #[serde(default)]
    pub edges: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    Empty,
    SelfLoop { node: usize },
    DuplicateEdge { a: usize, b: usize },
    NodeOutOfRange { a: usize, b: usize },
    Disconnected { components: usize },
    DegreeMismatch { node: usize, expected: usize, actual: usize },
    ShapeMismatch { detail: String },
}

impl TopologySpec {
    pub fn ring(n: usize) -> Result<Self, TopologyError> {
        if n < 3 {
            return Err(TopologyError::InvalidParameter(format!("ring needs n >= 3, got {n}")));
        }
        let edges = (0..n).map(|i| ordered(i, (i + 1) % n)).collect();
        Ok(TopologySpec { kind: TopologyKind::Ring, n, edges })
    }

    pub fn star(n: usize, hub: usize) -> Result<Self, TopologyError> {
        if n < 2 {
            return Err(TopologyError::InvalidParameter(format!("star needs n >= 2, got {n}")));
        }
        if hub >= n {
            return Err(TopologyError::InvalidParameter(format!("hub {hub} not in 0..{n}")));
        }
        let edges = (0..n).filter(|&i| i != hub).map(|i| ordered(hub, i)).collect();
        Ok(TopologySpec { kind: TopologyKind::Star { hub }, n, edges })
    }

    pub fn grid(rows: usize, cols: usize) -> Result<Self, TopologyError> {
        if rows == 0 || cols == 0 {
            return Err(TopologyError::InvalidParameter("grid dimensions must be positive".into()));
        }
        Ok(TopologySpec { kind: TopologyKind::Grid { rows, cols }, n: rows * cols, edges: grid_edges(rows, cols) })
    }

    pub fn custom(n: usize, edges: Vec<[usize; 2]>) -> Self {
        TopologySpec { kind: TopologyKind::Custom, n, edges }
    }

    /// Builds the topology described by `kind` over `n` nodes.
    pub fn generate(kind: &TopologyKind, n: usize) -> Result<Self, TopologyError> {
        match *kind {
            TopologyKind::Ring => Self::ring(n),
            TopologyKind::Star { hub } => Self::star(n, hub),
            TopologyKind::Grid { rows, cols } => {
                if rows * cols != n {
                    return Err(TopologyError::InvalidParameter(format!("grid {rows}x{cols} does not hold {n} nodes")));
                }
                Self::grid(rows, cols)
            }
            TopologyKind::Custom => {
                Err(TopologyError::InvalidParameter("custom topologies are supplied, not generated".into()))
            }
        }
    }

    /// Fills in edges for a generated kind loaded without them.
    pub fn normalized(self) -> Result<Self, TopologyError> {
        if self.kind != TopologyKind::Custom && self.edges.is_empty() {
            Self::generate(&self.kind, self.n)
        } else {
            Ok(self)
        }
    }

    /// Deduplicated edges with the smaller endpoint first, self-loops removed.
    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().filter(|[a, b]| a != b).map(|&[a, b]| (a.min(b), a.max(b))).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edge_set().contains(&(a.min(b), a.max(b)))
    }

    /// Sorted neighbor lists; out-of-range endpoints are ignored.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for (a, b) in self.edge_set() {
            if a < self.n && b < self.n {
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency().get(node).map_or(0, Vec::len)
    }

    /// Every way the spec fails to be a well-formed topology of its kind.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.n == 0 {
            out.push(Violation::Empty);
            return out;
        }
        let mut seen = BTreeSet::new();
        for &[a, b] in &self.edges {
            if a >= self.n || b >= self.n {
                out.push(Violation::NodeOutOfRange { a, b });
            } else if a == b {
                out.push(Violation::SelfLoop { node: a });
            } else if !seen.insert((a.min(b), a.max(b))) {
                out.push(Violation::DuplicateEdge { a: a.min(b), b: a.max(b) });
            }
        }
        let components = self.component_count();
        if components > 1 {
            out.push(Violation::Disconnected { components });
        }
        let adj = self.adjacency();
        match self.kind {
            TopologyKind::Ring => {
                if self.n < 3 {
                    out.push(Violation::ShapeMismatch { detail: "ring needs at least 3 nodes".into() });
                }
                for (node, list) in adj.iter().enumerate() {
                    if list.len() != 2 {
                        out.push(Violation::DegreeMismatch { node, expected: 2, actual: list.len() });
                    }
                }
            }
            TopologyKind::Star { hub } => {
                if hub >= self.n {
                    out.push(Violation::ShapeMismatch { detail: format!("hub {hub} out of range") });
                } else {
                    for (node, list) in adj.iter().enumerate() {
                        let expected = if node == hub { self.n - 1 } else { 1 };
                        // with two nodes hub and leaf are indistinguishable
                        let expected = if self.n == 2 { 1 } else { expected };
                        if list.len() != expected {
                            out.push(Violation::DegreeMismatch { node, expected, actual: list.len() });
                        }
                    }
                }
            }
            TopologyKind::Grid { rows, cols } => {
                if rows * cols != self.n {
                    out.push(Violation::ShapeMismatch {
                        detail: format!("grid {rows}x{cols} does not hold {} nodes", self.n),
                    });
                } else {
                    let expected: BTreeSet<_> = grid_edges(rows, cols).into_iter().map(|[a, b]| (a, b)).collect();
                    if expected != self.edge_set() {
                        out.push(Violation::ShapeMismatch {
                            detail: "edges differ from the 4-neighborhood grid".into(),
                        });
                    }
                }
            }
            TopologyKind::Custom => {}
        }
        out
    }

    fn component_count(&self) -> usize {
        let adj = self.adjacency();
        let mut seen = vec![false; self.n];
        let mut components = 0;
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        components
    }

    /// Hop distances from `source` by breadth-first search; `None` where
    /// unreachable.
    pub fn distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let adj = self.adjacency();
        let mut dist = vec![None; self.n];
        if source >= self.n {
            return dist;
        }
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued nodes have a distance");
            for &v in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Mean hop distance over unordered pairs of distinct nodes.
    pub fn average_shortest_path<S: Scalar>(&self) -> Result<S, TopologyError> {
        if self.n < 2 {
            return Ok(S::zero());
        }
        let mut total: u64 = 0;
        for source in 0..self.n {
            for d in self.distances_from(source).into_iter().skip(source + 1) {
                let d = d.ok_or_else(|| {
                    TopologyError::InvalidParameter("average path length of a disconnected graph".into())
                })?;
                total += d as u64;
            }
        }
        let pairs = (self.n * (self.n - 1) / 2) as u64;
        Ok(S::from_ratio(total, pairs))
    }
}

fn ordered(a: usize, b: usize) -> [usize; 2] {
    [a.min(b), a.max(b)]
}

fn grid_edges(rows: usize, cols: usize) -> Vec<[usize; 2]> {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if c + 1 < cols {
                edges.push([i, i + 1]);
            }
            if r + 1 < rows {
                edges.push([i, i + cols]);
            }
        }
    }
    edges
}
