//! Undirected simple graphs over contiguous integer node IDs, edge-list I/O,
//! and the structural helpers every other module builds on.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("node {node} is not valid in a graph with {n} nodes")]
    InvalidNodeSet { node: usize, n: usize },
    #[error("node set must not be empty")]
    EmptyNodeSet,
}

/// Undirected simple graph. Edges are stored canonically as `(min, max)` in
/// sorted order, alongside per-node sorted neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    /// Build a graph from arbitrary pairs. Self-loops are dropped and
    /// duplicates (in either orientation) collapse to one edge.
    ///
    /// Panics if an endpoint is `>= n`.
    pub fn from_edges<I>(n: usize, pairs: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let set: BTreeSet<(usize, usize)> = pairs
            .into_iter()
            .filter(|&(u, v)| u != v)
            .map(|(u, v)| {
                assert!(u < n && v < n, "edge ({u}, {v}) out of range for n = {n}");
                (u.min(v), u.max(v))
            })
            .collect();
        Self::from_canonical(n, set.into_iter().collect())
    }

    /// `edges` must already be canonical, sorted and duplicate-free.
    fn from_canonical(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in &edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Graph { n, edges, adj }
    }

    pub fn empty(n: usize) -> Self {
        Self::from_canonical(n, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(Vec::len).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u != v && u < self.n && v < self.n && self.adj[u].binary_search(&v).is_ok()
    }
}

/// Sorted set of distinct node IDs drawn from a parent graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeSet(Vec<usize>);

impl NodeSet {
    /// Sorts and deduplicates `members`.
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        NodeSet(members)
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

/// Counters reported by the edge-list loader.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub self_loops_dropped: usize,
    /// Lines whose pair was already present, in either orientation.
    pub duplicates_collapsed: usize,
    /// The subset of collapsed lines that were the reverse of an earlier
    /// line; nonzero for directed inputs that got symmetrized.
    pub reversed_duplicates: usize,
}

/// Result of loading an edge list.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: Graph,
    /// `labels[i]` is the token that node `i` carried in the input file.
    pub labels: Vec<u64>,
    pub report: LoadReport,
}

/// Parse an edge list: one `u v` pair per line, `#` comments, blank lines
/// ignored, optional first line `n=<int>`. Node IDs are used as-is, so
/// `n = max(1 + max id, declared n)`.
pub fn load_edge_list(text: &str) -> Result<LoadedGraph, GraphError> {
    load_edge_list_with(text, false)
}

/// Like [`load_edge_list`]; with `relabel` the distinct IDs seen are mapped
/// onto `0..n` in increasing order (a declared `n=` header is then ignored).
pub fn load_edge_list_with(text: &str, relabel: bool) -> Result<LoadedGraph, GraphError> {
    let mut declared_n: Option<usize> = None;
    let mut raw: Vec<(u64, u64)> = Vec::new();
    let mut saw_content = false;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_content {
            saw_content = true;
            if let Some(rest) = line.strip_prefix("n=") {
                let n = rest.trim().parse::<usize>().map_err(|_| GraphError::Parse {
                    line: lineno,
                    msg: format!("bad node-count header {line:?}"),
                })?;
                declared_n = Some(n);
                continue;
            }
        }
        let mut toks = line.split_whitespace();
        let (Some(a), Some(b), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(GraphError::Parse {
                line: lineno,
                msg: format!("expected two tokens, got {line:?}"),
            });
        };
        raw.push((parse_id(a, lineno)?, parse_id(b, lineno)?));
    }

    let labels: Vec<u64> = if relabel {
        raw.iter()
            .flat_map(|&(u, v)| [u, v])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        let max_seen = raw.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0) as usize;
        let n = max_seen.max(declared_n.unwrap_or(0));
        (0..n as u64).collect()
    };
    let index: BTreeMap<u64, usize> = if relabel {
        labels.iter().enumerate().map(|(i, &l)| (l, i)).collect()
    } else {
        BTreeMap::new()
    };
    let map = |x: u64| if relabel { index[&x] } else { x as usize };

    let mut report = LoadReport::default();
    let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut oriented: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (u, v) in raw {
        let (u, v) = (map(u), map(v));
        if u == v {
            report.self_loops_dropped += 1;
            continue;
        }
        if !seen.insert((u.min(v), u.max(v))) {
            report.duplicates_collapsed += 1;
            if !oriented.contains(&(u, v)) {
                report.reversed_duplicates += 1;
            }
        }
        oriented.insert((u, v));
    }

    let graph = Graph::from_canonical(labels.len(), seen.into_iter().collect());
    Ok(LoadedGraph { graph, labels, report })
}

fn parse_id(tok: &str, line: usize) -> Result<u64, GraphError> {
    if tok.starts_with('-') && tok[1..].parse::<u64>().is_ok() {
        return Err(GraphError::Parse { line, msg: format!("negative node id {tok}") });
    }
    tok.parse::<u64>()
        .map_err(|_| GraphError::Parse { line, msg: format!("malformed node id {tok:?}") })
}

/// Serialize in the edge-list format, with an `n=` header so isolated
/// trailing nodes survive a round trip.
pub fn write_edge_list(g: &Graph) -> String {
    let mut out = String::with_capacity(16 + g.num_edges() * 12);
    let _ = writeln!(out, "n={}", g.n());
    for &(u, v) in g.edges() {
        let _ = writeln!(out, "{u} {v}");
    }
    out
}

/// Subgraph induced by `s`, relabeled `0..|s|` in `s`'s sorted order.
/// Returns the local graph and `id_map` (local index -> parent ID).
pub fn induced_subgraph(g: &Graph, s: &NodeSet) -> Result<(Graph, Vec<usize>), GraphError> {
    if s.is_empty() {
        return Err(GraphError::EmptyNodeSet);
    }
    if let Some(&bad) = s.members().iter().find(|&&v| v >= g.n()) {
        return Err(GraphError::InvalidNodeSet { node: bad, n: g.n() });
    }
    let ids = s.members();
    let mut edges = Vec::new();
    for (i, &u) in ids.iter().enumerate() {
        for &v in g.neighbors(u) {
            if v <= u {
                continue;
            }
            if let Ok(j) = ids.binary_search(&v) {
                edges.push((i, j));
            }
        }
    }
    edges.sort_unstable();
    Ok((Graph::from_canonical(ids.len(), edges), ids.to_vec()))
}

/// Connected components of the subgraph induced by `nodes` (which need not be
/// sorted). Each component is sorted; components are ordered by their
/// smallest member.
pub fn components_within(g: &Graph, nodes: &[usize]) -> Vec<Vec<usize>> {
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut seen = vec![false; sorted.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..sorted.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            let u = sorted[i];
            comp.push(u);
            for &v in g.neighbors(u) {
                if let Ok(j) = sorted.binary_search(&v) {
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Largest component within `nodes`; ties go to the component with the
/// smallest minimum node ID.
pub fn largest_component_within(g: &Graph, nodes: &[usize]) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::new();
    for comp in components_within(g, nodes) {
        // components arrive in increasing-min order, so strict > keeps the tie-break
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

/// Node set of a maximum-cardinality connected component of `g`.
pub fn largest_connected_component(g: &Graph) -> NodeSet {
    let all: Vec<usize> = (0..g.n()).collect();
    NodeSet(largest_component_within(g, &all))
}

/// `(nodes with degree >= 1, edge count)`.
pub fn graph_summary(g: &Graph) -> (usize, usize) {
    let active = (0..g.n()).filter(|&v| g.degree(v) > 0).count();
    (active, g.num_edges())
}
