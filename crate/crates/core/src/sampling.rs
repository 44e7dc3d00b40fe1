//! Training-corpus construction: uniform node subsets, random-walk induced
//! subgraphs and pruned 2-hop ego networks.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{induced_subgraph, largest_component_within, Graph, NodeSet};
use crate::rng::substream;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("corpus line {line}: {msg}")]
    Format { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Unif,
    Rw,
    Ego,
}

impl Scheme {
    fn tag(self) -> &'static str {
        match self {
            Scheme::Unif => "unif",
            Scheme::Rw => "rw",
            Scheme::Ego => "ego",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scheme {
    type Err = SamplingError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "unif" | "uniform" => Ok(Scheme::Unif),
            "rw" | "random-walk" => Ok(Scheme::Rw),
            "ego" => Ok(Scheme::Ego),
            other => Err(SamplingError::InvalidParameter(format!("unknown scheme {other:?}"))),
        }
    }
}

/// A node-induced subgraph whose local node `i` carries the parent ID
/// `id_map[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubgraphSample {
    pub local: Graph,
    pub id_map: Vec<usize>,
    pub n_parent: usize,
}

impl SubgraphSample {
    pub fn from_nodes(g: &Graph, nodes: Vec<usize>) -> Self {
        let (local, id_map) =
            induced_subgraph(g, &NodeSet::new(nodes)).expect("sampled nodes are valid in parent");
        SubgraphSample { local, id_map, n_parent: g.n() }
    }

    pub fn size(&self) -> usize {
        self.id_map.len()
    }

    /// Edges expressed in parent IDs.
    pub fn parent_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.local.edges().iter().map(|&(i, j)| {
            let (a, b) = (self.id_map[i], self.id_map[j]);
            (a.min(b), a.max(b))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleCorpus {
    pub samples: Vec<SubgraphSample>,
    pub scheme: Scheme,
    pub k: usize,
    pub d: usize,
    pub n_parent: usize,
}

/// Summary written next to a serialized corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub scheme: Scheme,
    pub k: usize,
    pub d: usize,
    pub n_parent: usize,
    pub samples: usize,
    /// `size -> number of samples with that many nodes`.
    pub size_histogram: BTreeMap<usize, usize>,
    /// Present pairs over all local pairs, pooled across the corpus.
    pub edge_density: f64,
    pub samples_without_edges: usize,
}

impl SampleCorpus {
    pub fn stats(&self) -> CorpusStats {
        let mut size_histogram = BTreeMap::new();
        let (mut present, mut pairs, mut empty) = (0usize, 0usize, 0usize);
        for s in &self.samples {
            *size_histogram.entry(s.size()).or_insert(0) += 1;
            present += s.local.num_edges();
            pairs += s.size() * s.size().saturating_sub(1) / 2;
            empty += usize::from(s.local.num_edges() == 0);
        }
        CorpusStats {
            scheme: self.scheme,
            k: self.k,
            d: self.d,
            n_parent: self.n_parent,
            samples: self.samples.len(),
            size_histogram,
            edge_density: if pairs == 0 { 0.0 } else { present as f64 / pairs as f64 },
            samples_without_edges: empty,
        }
    }

    /// JSON-lines, one `{"ids": [...], "edges": [[i, j], ...]}` per sample.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let line = serde_json::json!({
                "ids": s.id_map,
                "edges": s.local.edges().iter().map(|&(i, j)| [i, j]).collect::<Vec<_>>(),
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(
        text: &str,
        n_parent: usize,
        scheme: Scheme,
        k: usize,
        d: usize,
    ) -> Result<Self, SamplingError> {
        #[derive(Deserialize)]
        struct Line {
            ids: Vec<usize>,
            edges: Vec<[usize; 2]>,
        }
        let mut samples = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let rec: Line = serde_json::from_str(raw)
                .map_err(|e| SamplingError::Format { line, msg: e.to_string() })?;
            let size = rec.ids.len();
            let mut sorted = rec.ids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != size || sorted.last().is_some_and(|&m| m >= n_parent) {
                return Err(SamplingError::Format {
                    line,
                    msg: format!("ids must be distinct and below {n_parent}"),
                });
            }
            if rec.edges.iter().any(|&[i, j]| i >= size || j >= size || i == j) {
                return Err(SamplingError::Format { line, msg: "edge index out of range".into() });
            }
            let local = Graph::from_edges(size, rec.edges.iter().map(|&[i, j]| (i, j)));
            samples.push(SubgraphSample { local, id_map: rec.ids, n_parent });
        }
        if samples.is_empty() {
            return Err(SamplingError::Format { line: 0, msg: "empty corpus".into() });
        }
        Ok(SampleCorpus { samples, scheme, k, d, n_parent })
    }
}

/// Uniform-scheme sample count `ceil(C (n/k)^2 ln n ln(1/delta))`, at least 1.
pub fn required_sample_count(n: usize, k: usize, delta: f64, c: f64) -> Result<usize, SamplingError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SamplingError::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if k == 0 || k > n {
        return Err(SamplingError::InvalidParameter(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    let ratio = n as f64 / k as f64;
    let raw = c * ratio * ratio * (n as f64).ln() * (1.0 / delta).ln();
    Ok((raw.ceil() as usize).max(1))
}

pub fn sample_uniform(g: &Graph, k: usize, count: usize, seed: u64) -> Result<SampleCorpus, SamplingError> {
    if k == 0 || k > g.n() {
        return Err(SamplingError::InvalidParameter(format!("need 1 <= k <= n, got k={k}, n={}", g.n())));
    }
    if count == 0 {
        return Err(SamplingError::InvalidParameter("count must be positive".into()));
    }
    let samples = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, "unif", &[i as u64]);
            let nodes = rand::seq::index::sample(&mut rng, g.n(), k).into_vec();
            SubgraphSample::from_nodes(g, nodes)
        })
        .collect();
    Ok(SampleCorpus { samples, scheme: Scheme::Unif, k, d: 0, n_parent: g.n() })
}

/// Distinct nodes visited by a `steps`-edge simple random walk from `start`.
pub fn random_walk_nodes<R: Rng>(g: &Graph, start: usize, steps: usize, rng: &mut R) -> Vec<usize> {
    let mut visited = vec![start];
    let mut cur = start;
    for _ in 0..steps {
        let nbrs = g.neighbors(cur);
        if nbrs.is_empty() {
            break;
        }
        cur = nbrs[rng.gen_range(0..nbrs.len())];
        visited.push(cur);
    }
    visited.sort_unstable();
    visited.dedup();
    visited
}

pub fn sample_random_walk(g: &Graph, k: usize, d: usize, seed: u64) -> Result<SampleCorpus, SamplingError> {
    if k == 0 || d == 0 {
        return Err(SamplingError::InvalidParameter("k and d must be positive".into()));
    }
    let samples = per_node_reps(g.n(), d, |v, rep| {
        let mut rng = substream(seed, "rw", &[v as u64, rep as u64]);
        SubgraphSample::from_nodes(g, random_walk_nodes(g, v, k, &mut rng))
    });
    Ok(shuffled(SampleCorpus { samples, scheme: Scheme::Rw, k, d, n_parent: g.n() }, seed))
}

/// Closed 2-hop neighborhood of `v`, sorted.
pub fn two_hop_neighborhood(g: &Graph, v: usize) -> Vec<usize> {
    let mut out = vec![v];
    for &u in g.neighbors(v) {
        out.push(u);
        out.extend_from_slice(g.neighbors(u));
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Pruned ego network: halve at random and keep the largest component until
/// at most `k` nodes remain.
pub fn ego_nodes<R: Rng>(g: &Graph, v: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut nodes = two_hop_neighborhood(g, v);
    while nodes.len() > k {
        let drop = nodes.len() / 2;
        nodes.shuffle(rng);
        nodes.truncate(nodes.len() - drop);
        nodes = largest_component_within(g, &nodes);
    }
    nodes
}

pub fn sample_ego(g: &Graph, k: usize, d: usize, seed: u64) -> Result<SampleCorpus, SamplingError> {
    if k == 0 || d == 0 {
        return Err(SamplingError::InvalidParameter("k and d must be positive".into()));
    }
    let samples = per_node_reps(g.n(), d, |v, rep| {
        let mut rng = substream(seed, "ego", &[v as u64, rep as u64]);
        SubgraphSample::from_nodes(g, ego_nodes(g, v, k, &mut rng))
    });
    Ok(shuffled(SampleCorpus { samples, scheme: Scheme::Ego, k, d, n_parent: g.n() }, seed))
}

fn per_node_reps<F>(n: usize, d: usize, f: F) -> Vec<SubgraphSample>
where
    F: Fn(usize, usize) -> SubgraphSample + Sync,
{
    (0..n * d).into_par_iter().map(|i| f(i / d, i % d)).collect()
}

fn shuffled(mut corpus: SampleCorpus, seed: u64) -> SampleCorpus {
    let mut rng = substream(seed, "shuffle", &[]);
    corpus.samples.shuffle(&mut rng);
    corpus
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub scheme: Scheme,
    pub k: usize,
    /// Samples per node for the RW and Ego schemes.
    pub d: usize,
    /// Fixed Unif corpus size; when unset the coverage rule is used.
    pub count: Option<usize>,
    pub delta: f64,
    /// Constant in the coverage rule.
    pub coverage_constant: f64,
    /// Upper bound applied to the coverage-rule count.
    pub unif_cap: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            scheme: Scheme::Rw,
            k: 20,
            d: 5,
            count: None,
            delta: 0.05,
            coverage_constant: 1.0,
            unif_cap: 10_000,
        }
    }
}

/// Dispatch to the configured sampler, then shuffle the corpus.
pub fn build_corpus(g: &Graph, cfg: &SamplingConfig, seed: u64) -> Result<SampleCorpus, SamplingError> {
    let corpus = match cfg.scheme {
        Scheme::Unif => {
            let count = match cfg.count {
                Some(c) => c,
                None => required_sample_count(g.n(), cfg.k, cfg.delta, cfg.coverage_constant)?
                    .min(cfg.unif_cap),
            };
            sample_uniform(g, cfg.k, count, seed)?
        }
        Scheme::Rw => sample_random_walk(g, cfg.k, cfg.d, seed)?,
        Scheme::Ego => sample_ego(g, cfg.k, cfg.d, seed)?,
    };
    Ok(shuffled(corpus, seed))
}
