//! Undirected communication graphs, generators and diameter.
//!
//! Agents are indexed `0..n` internally; edge-list exports use 1-based ids.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;

/// Resampling budget for connected Erdős–Rényi draws.
pub const ER_MAX_TRIES: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("graph is disconnected: node {unreachable} is unreachable from node 1")]
    Disconnected { unreachable: usize },
    #[error("no connected G({n}, {p}) sample in {tries} tries")]
    RetriesExhausted { n: usize, p: f64, tries: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    Path,
    Cycle,
    Complete,
    /// `rows × (n / rows)` lattice; `rows` defaults to the largest divisor of `n` not above `√n`.
    Grid {
        rows: Option<usize>,
    },
    ErdosRenyi {
        p: f64,
    },
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphKind::Path => f.write_str("path"),
            GraphKind::Cycle => f.write_str("cycle"),
            GraphKind::Complete => f.write_str("complete"),
            GraphKind::Grid { .. } => f.write_str("grid"),
            GraphKind::ErdosRenyi { p } => write!(f, "erdos_renyi({p})"),
        }
    }
}

/// Simple undirected graph with sorted neighbor lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    adjacency: Vec<Vec<usize>>,
    edges: BTreeSet<(usize, usize)>,
}

impl Network {
    /// Build from 0-based edges. Duplicate edges collapse; self-loops and
    /// out-of-range endpoints are rejected. Connectivity is not required here,
    /// see [`Network::ensure_connected`].
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Network, GraphError> {
        if n == 0 {
            return Err(GraphError::Invalid(
                "a network needs at least one node".into(),
            ));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::Invalid(format!(
                    "edge ({}, {}) outside 1..={n}",
                    a + 1,
                    b + 1
                )));
            }
            if a == b {
                return Err(GraphError::Invalid(format!("self-loop at node {}", a + 1)));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &set {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Network {
            adjacency,
            edges: set,
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    /// Edges as 0-based `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn bfs(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued nodes have a distance");
            for &w in &self.adjacency[u] {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.bfs(0).iter().all(Option::is_some)
    }

    pub fn ensure_connected(&self) -> Result<(), GraphError> {
        match self.bfs(0).iter().position(Option::is_none) {
            Some(u) => Err(GraphError::Disconnected { unreachable: u + 1 }),
            None => Ok(()),
        }
    }

    /// Relabel nodes: node `i` becomes `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Network, GraphError> {
        let mut seen = vec![false; self.n()];
        if perm.len() != self.n()
            || perm
                .iter()
                .any(|&p| p >= self.n() || std::mem::replace(&mut seen[p], true))
        {
            return Err(GraphError::Invalid(
                "relabeling must be a permutation".into(),
            ));
        }
        Network::from_edges(self.n(), self.edges().map(|(a, b)| (perm[a], perm[b])))
    }

    /// Edge list as CSV, one `i,j` row per edge with 1-based ids.
    pub fn write_edge_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j")?;
        for (a, b) in self.edges() {
            writeln!(out, "{},{}", a + 1, b + 1)?;
        }
        Ok(())
    }
}

/// Exact diameter by BFS from every node.
pub fn diameter(g: &Network) -> Result<usize, GraphError> {
    let mut best = 0;
    for s in 0..g.n() {
        for (u, d) in g.bfs(s).into_iter().enumerate() {
            match d {
                Some(d) => best = best.max(d),
                None => return Err(GraphError::Disconnected { unreachable: u + 1 }),
            }
        }
    }
    Ok(best)
}

fn grid_rows(n: usize) -> usize {
    (1..=n)
        .take_while(|r| r * r <= n)
        .filter(|r| n.is_multiple_of(*r))
        .last()
        .unwrap_or(1)
}

/// Generate a connected network. Only Erdős–Rényi uses `seed`.
pub fn generate(kind: GraphKind, n: usize, seed: u64) -> Result<Network, GraphError> {
    if n == 0 {
        return Err(GraphError::Invalid("n must be at least 1".into()));
    }
    let g = match kind {
        GraphKind::Path => Network::from_edges(n, (1..n).map(|i| (i - 1, i)))?,
        GraphKind::Cycle => {
            if n < 3 {
                return Err(GraphError::Invalid(format!(
                    "a cycle needs n >= 3, got {n}"
                )));
            }
            Network::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)))?
        }
        GraphKind::Complete => {
            Network::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))?
        }
        GraphKind::Grid { rows } => {
            let rows = rows.unwrap_or_else(|| grid_rows(n));
            if rows == 0 || !n.is_multiple_of(rows) {
                return Err(GraphError::Invalid(format!(
                    "grid rows {rows} must divide n = {n}"
                )));
            }
            let cols = n / rows;
            let mut edges = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let id = r * cols + c;
                    if c + 1 < cols {
                        edges.push((id, id + 1));
                    }
                    if r + 1 < rows {
                        edges.push((id, id + cols));
                    }
                }
            }
            Network::from_edges(n, edges)?
        }
        GraphKind::ErdosRenyi { p } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(GraphError::Invalid(format!(
                    "edge probability {p} must be in [0, 1]"
                )));
            }
            let mut rng = seeding::rng_for(seed, "erdos_renyi", 0);
            let mut found = None;
            for _ in 0..ER_MAX_TRIES {
                let mut edges = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.random_bool(p) {
                            edges.push((i, j));
                        }
                    }
                }
                let g = Network::from_edges(n, edges)?;
                if g.is_connected() {
                    found = Some(g);
                    break;
                }
            }
            found.ok_or(GraphError::RetriesExhausted {
                n,
                p,
                tries: ER_MAX_TRIES,
            })?
        }
    };
    debug_assert!(g.is_connected());
    Ok(g)
}
