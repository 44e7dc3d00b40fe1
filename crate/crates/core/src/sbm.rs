//! Stochastic block model graphs, used as a controlled fixture.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmConfig {
    /// Block sizes; nodes are numbered block by block.
    pub blocks: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
}

impl SbmConfig {
    pub fn equal(blocks: usize, size: usize, p_in: f64, p_out: f64) -> Self {
        SbmConfig { blocks: vec![size; blocks], p_in, p_out }
    }

    pub fn n(&self) -> usize {
        self.blocks.iter().sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if self.blocks.is_empty() {
            return Err("no blocks".into());
        }
        Ok(())
    }

    /// Expected edge count.
    pub fn expected_edges(&self) -> f64 {
        let n = self.n() as f64;
        let within: f64 = self.blocks.iter().map(|&b| (b * b.saturating_sub(1) / 2) as f64).sum();
        let across = n * (n - 1.0) / 2.0 - within;
        within * self.p_in + across * self.p_out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbmGraph {
    pub graph: Graph,
    /// Block index of every node.
    pub block: Vec<usize>,
}

/// Every pair is an independent Bernoulli draw; row `u` uses its own
/// substream so rows can be drawn in parallel.
pub fn sbm_graph(cfg: &SbmConfig, seed: u64) -> SbmGraph {
    let block: Vec<usize> = cfg.blocks.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat(b).take(s)).collect();
    let n = block.len();
    let rows: Vec<Vec<(usize, usize)>> = (0..n)
        .into_par_iter()
        .map(|u| {
            let mut rng = substream(seed, "sbm", &[u as u64]);
            (u + 1..n)
                .filter(|&v| {
                    let p = if block[u] == block[v] { cfg.p_in } else { cfg.p_out };
                    rng.gen::<f64>() < p
                })
                .map(|v| (u, v))
                .collect()
        })
        .collect();
    SbmGraph { graph: Graph::from_edges(n, rows.into_iter().flatten()), block }
}
