//! Subgraph generation by reverse diffusion and edge-union assembly.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::{predict, DenoiserParams};
use crate::diffusion::{pairs, reverse_step, DiffusionError, NoiseSchedule, NoisySample, StateKind};
use crate::graph::Graph;
use crate::rng::{substream, Rng};
use crate::sampling::SubgraphSample;
use crate::scalar::Scalar;

/// Consecutive zero-gain subgraphs tolerated before giving up.
pub const STALL_LIMIT: usize = 50;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(
        "assembly stalled: {limit} consecutive subgraphs added no edge \
         ({edges} of {target} target edges after {subgraphs} subgraphs)"
    )]
    StalledAssembly { limit: usize, edges: usize, target: usize, subgraphs: usize },
    #[error("invalid assembly request: {0}")]
    Invalid(String),
}

/// Run the reverse chain from the prior down to `t = 0` and return the
/// raw final states (node IDs may repeat).
pub fn generate_states<F: Scalar>(
    params: &DenoiserParams<F>,
    sched: &NoiseSchedule<F>,
    k: usize,
    rng: &mut Rng,
) -> Result<NoisySample, DiffusionError> {
    assert_eq!(params.dims().n, sched.num_node_states(), "model and schedule disagree on n");
    let x = (0..k).map(|_| sched.draw_prior(StateKind::Node, rng)).collect();
    let e = pairs(k).map(|_| sched.draw_prior(StateKind::Edge, rng) as u8).collect();
    let mut g = NoisySample { t: sched.steps(), x, e };
    while g.t > 0 {
        let pred = predict(params, &g, sched);
        g = reverse_step(&g, &pred, sched, rng)?;
    }
    Ok(g)
}

/// Decode final states: repeated IDs collapse into one node, their edges
/// coalesce, and pairs that become self-loops are dropped.
pub fn decode_states(states: &NoisySample, n_parent: usize) -> SubgraphSample {
    let ids: Vec<usize> = states.x.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let local = |id: usize| ids.binary_search(&id).expect("id present");
    let edges = pairs(states.k())
        .zip(&states.e)
        .filter(|&(_, &s)| s == 1)
        .map(|((i, j), _)| (local(states.x[i]), local(states.x[j])));
    SubgraphSample { local: Graph::from_edges(ids.len(), edges), id_map: ids, n_parent }
}

/// One generated subgraph of (up to) `k` nodes, seeded by `seed`.
pub fn generate_subgraph<F: Scalar>(
    params: &DenoiserParams<F>,
    sched: &NoiseSchedule<F>,
    k: usize,
    seed: u64,
) -> Result<SubgraphSample, DiffusionError> {
    let mut rng = substream(seed, "generate", &[]);
    let states = generate_states(params, sched, k, &mut rng)?;
    Ok(decode_states(&states, params.dims().n))
}

/// Anything that can produce the `index`-th subgraph of a run.
pub trait SubgraphSource: Sync {
    fn n_parent(&self) -> usize;
    /// Largest subgraph size produced; bounds the final overshoot.
    fn max_size(&self) -> usize;
    fn subgraph(&self, index: u64) -> Result<SubgraphSample, AssemblyError>;
}

/// The trained diffusion model as a subgraph source.
pub struct DiffusionSource<'a, F: Scalar> {
    pub params: &'a DenoiserParams<F>,
    pub sched: &'a NoiseSchedule<F>,
    pub k: usize,
    pub seed: u64,
}

impl<F: Scalar> SubgraphSource for DiffusionSource<'_, F> {
    fn n_parent(&self) -> usize {
        self.params.dims().n
    }

    fn max_size(&self) -> usize {
        self.k
    }

    fn subgraph(&self, index: u64) -> Result<SubgraphSample, AssemblyError> {
        let mut rng = substream(self.seed, "assemble", &[index]);
        let states = generate_states(self.params, self.sched, self.k, &mut rng)?;
        Ok(decode_states(&states, self.n_parent()))
    }
}

/// Growing synthetic graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthAccumulator {
    pub n: usize,
    pub edge_set: BTreeSet<(usize, usize)>,
    pub subgraphs_used: usize,
    /// Edges beyond the target after the final insertion.
    pub overshoot: usize,
}

impl SynthAccumulator {
    pub fn new(n: usize) -> Self {
        SynthAccumulator { n, edge_set: BTreeSet::new(), subgraphs_used: 0, overshoot: 0 }
    }

    /// Insert every edge of `s` under its original IDs; returns the gain.
    pub fn insert(&mut self, s: &SubgraphSample) -> usize {
        self.subgraphs_used += 1;
        let before = self.edge_set.len();
        for (u, v) in s.parent_edges() {
            if u != v {
                assert!(u < self.n && v < self.n, "edge ({u}, {v}) outside [0, {})", self.n);
                self.edge_set.insert((u.min(v), u.max(v)));
            }
        }
        self.edge_set.len() - before
    }

    pub fn edges(&self) -> usize {
        self.edge_set.len()
    }

    pub fn graph(&self) -> Graph {
        Graph::from_edges(self.n, self.edge_set.iter().copied())
    }
}

/// Summary written next to an assembled graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyReport {
    pub subgraphs_used: usize,
    pub overshoot: usize,
    pub edges: usize,
    pub nodes_non_isolated: usize,
}

impl AssemblyReport {
    pub fn new(acc: &SynthAccumulator) -> Self {
        let g = acc.graph();
        AssemblyReport {
            subgraphs_used: acc.subgraphs_used,
            overshoot: acc.overshoot,
            edges: acc.edges(),
            nodes_non_isolated: crate::graph::graph_summary(&g).0,
        }
    }
}

/// Subgraphs generated per parallel round; insertion stays in index order,
/// so the result does not depend on this.
fn chunk_size() -> usize {
    4 * rayon::current_num_threads().max(1)
}

/// Union subgraphs from `source` until every threshold (ascending) has been
/// reached. `on_cross` sees the accumulator each time one or more
/// thresholds are first met, with the number of thresholds met so far.
fn run_assembly<S: SubgraphSource + ?Sized>(
    source: &S,
    thresholds: &[usize],
    mut on_cross: impl FnMut(&SynthAccumulator, usize),
) -> Result<SynthAccumulator, AssemblyError> {
    let target = *thresholds.last().expect("at least one threshold");
    let mut acc = SynthAccumulator::new(source.n_parent());
    let mut next = 0;
    let mut idle = 0;
    let mut index = 0u64;
    while next < thresholds.len() {
        let chunk = chunk_size() as u64;
        let batch: Vec<Result<SubgraphSample, AssemblyError>> =
            (index..index + chunk).into_par_iter().map(|i| source.subgraph(i)).collect();
        index += chunk;
        for s in batch {
            let gained = acc.insert(&s?);
            idle = if gained == 0 { idle + 1 } else { 0 };
            let before = next;
            while next < thresholds.len() && acc.edges() >= thresholds[next] {
                next += 1;
            }
            if next > before {
                on_cross(&acc, next);
            }
            if next == thresholds.len() {
                acc.overshoot = acc.edges() - target;
                return Ok(acc);
            }
            if idle >= STALL_LIMIT {
                return Err(AssemblyError::StalledAssembly {
                    limit: STALL_LIMIT,
                    edges: acc.edges(),
                    target,
                    subgraphs: acc.subgraphs_used,
                });
            }
        }
    }
    unreachable!("loop returns once the last threshold is met")
}

/// Union generated subgraphs until the edge count first reaches
/// `target_edges`; the last subgraph is inserted in full.
pub fn assemble<S: SubgraphSource + ?Sized>(
    source: &S,
    target_edges: usize,
) -> Result<(Graph, SynthAccumulator), AssemblyError> {
    if target_edges == 0 {
        return Err(AssemblyError::Invalid("target_edges must be at least 1".into()));
    }
    let acc = run_assembly(source, &[target_edges], |_, _| {})?;
    Ok((acc.graph(), acc))
}

/// Convenience wrapper for assembling from a trained model.
pub fn assemble_model<F: Scalar>(
    params: &DenoiserParams<F>,
    sched: &NoiseSchedule<F>,
    target_edges: usize,
    k: usize,
    seed: u64,
) -> Result<(Graph, SynthAccumulator), AssemblyError> {
    assemble(&DiffusionSource { params, sched, k, seed }, target_edges)
}

/// One snapshot of a progressive run.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub fraction: f64,
    pub threshold: usize,
    pub subgraphs_used: usize,
    pub overshoot: usize,
    pub graph: Graph,
}

/// Threshold for a fraction of the real edge count; never below 1.
pub fn fraction_threshold(fraction: f64, real_edges: usize) -> usize {
    ((fraction * real_edges as f64).ceil() as usize).max(1)
}

/// A single assembly run with a snapshot the first time each
/// `fraction * real_edges` threshold is reached.
pub fn progressive_assemble<S: SubgraphSource + ?Sized>(
    source: &S,
    fractions: &[f64],
    real_edges: usize,
) -> Result<Vec<Snapshot>, AssemblyError> {
    if fractions.is_empty() {
        return Err(AssemblyError::Invalid("no fractions".into()));
    }
    if fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) || fractions.windows(2).any(|w| w[0] > w[1]) {
        return Err(AssemblyError::Invalid("fractions must be sorted and in (0, 1]".into()));
    }
    if real_edges == 0 {
        return Err(AssemblyError::Invalid("real edge count must be positive".into()));
    }
    let thresholds: Vec<usize> = fractions.iter().map(|&f| fraction_threshold(f, real_edges)).collect();
    let mut snaps = Vec::with_capacity(fractions.len());
    run_assembly(source, &thresholds, |acc, met| {
        let graph = acc.graph();
        while snaps.len() < met {
            let i = snaps.len();
            snaps.push(Snapshot {
                fraction: fractions[i],
                threshold: thresholds[i],
                subgraphs_used: acc.subgraphs_used,
                overshoot: acc.edges() - thresholds[i],
                graph: graph.clone(),
            });
        }
    })?;
    Ok(snaps)
}
