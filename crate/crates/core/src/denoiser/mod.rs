//! The trainable denoiser: maps a noisy labeled subgraph and its step to
//! per-node distributions over parent IDs and per-pair distributions over
//! {absent, present}.
//!
//! Parameters live in one flat vector partitioned into named blocks, so the
//! gradient, the optimizer state and the checkpoint all share one layout.

mod model;
mod train;

pub use model::{grad, loss, predict, Gradient};
pub use train::{loss_csv, train, Adam, TrainConfig, TrainError, TrainOutcome};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::ScheduleFile;
use crate::rng::substream;
use crate::scalar::Scalar;

/// Architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Number of node-ID states (parent node count).
    pub n: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Sinusoidal timestep features (even).
    pub time_features: usize,
}

impl Dims {
    pub fn new(n: usize, hidden: usize, layers: usize) -> Self {
        Dims { n, hidden, layers, time_features: 12 }
    }
}

/// Offsets of the weight blocks of one message-passing round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerBlocks {
    pub w_self: usize,
    pub w_nbr: usize,
    pub w_glob: usize,
    pub bias: usize,
}

/// Offsets of every block in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub node_embed: usize,
    pub time_w: usize,
    pub time_b: usize,
    pub layers: Vec<LayerBlocks>,
    pub node_w: usize,
    pub node_b: usize,
    pub edge_src: usize,
    pub edge_dst: usize,
    pub edge_prod: usize,
    pub edge_state: usize,
    pub edge_bias: usize,
    pub edge_out_w: usize,
    pub edge_out_b: usize,
    /// `(name, rows, cols, offset)` in storage order.
    pub blocks: Vec<(String, usize, usize, usize)>,
    pub total: usize,
}

impl Layout {
    pub fn new(d: &Dims) -> Self {
        let (n, h, f) = (d.n, d.hidden, d.time_features);
        let mut blocks = Vec::new();
        let mut total = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            let off = total;
            blocks.push((name, rows, cols, off));
            total += rows * cols;
            off
        };
        let node_embed = push("node_embed".into(), n, h);
        let time_w = push("time_w".into(), h, f);
        let time_b = push("time_b".into(), h, 1);
        let layers = (0..d.layers)
            .map(|l| LayerBlocks {
                w_self: push(format!("layer{l}.w_self"), h, h),
                w_nbr: push(format!("layer{l}.w_nbr"), h, h),
                w_glob: push(format!("layer{l}.w_glob"), h, h),
                bias: push(format!("layer{l}.bias"), h, 1),
            })
            .collect();
        let node_w = push("node_head.w".into(), n, h);
        let node_b = push("node_head.b".into(), n, 1);
        let edge_src = push("edge.w_src".into(), h, h);
        let edge_dst = push("edge.w_dst".into(), h, h);
        let edge_prod = push("edge.w_prod".into(), h, h);
        let edge_state = push("edge.w_state".into(), h, 1);
        let edge_bias = push("edge.bias".into(), h, 1);
        let edge_out_w = push("edge_head.w".into(), 2, h);
        let edge_out_b = push("edge_head.b".into(), 2, 1);
        Layout {
            node_embed,
            time_w,
            time_b,
            layers,
            node_w,
            node_b,
            edge_src,
            edge_dst,
            edge_prod,
            edge_state,
            edge_bias,
            edge_out_w,
            edge_out_b,
            blocks,
            total,
        }
    }

    /// Blocks of the two output heads.
    pub fn head_ranges(&self, d: &Dims) -> [std::ops::Range<usize>; 2] {
        [self.node_w..self.node_b + d.n, self.edge_out_w..self.edge_out_b + 2]
    }
}

/// Denoiser weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams<F: Scalar> {
    dims: Dims,
    pub(crate) layout: Layout,
    pub(crate) data: Vec<F>,
}

impl<F: Scalar> DenoiserParams<F> {
    pub fn zeros(dims: Dims) -> Self {
        assert!(dims.n > 0 && dims.hidden > 0 && dims.time_features % 2 == 0);
        let layout = Layout::new(&dims);
        let data = vec![F::zero(); layout.total];
        DenoiserParams { dims, layout, data }
    }

    /// Uniform fan-in scaled initialization with zeroed output heads, so a
    /// fresh model predicts uniform distributions.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut p = Self::zeros(dims);
        let mut rng = substream(seed, "init", &[]);
        let blocks = p.layout.blocks.clone();
        let heads = p.layout.head_ranges(&dims);
        for (name, rows, cols, off) in blocks {
            if heads.iter().any(|r| r.contains(&off)) {
                continue;
            }
            let bound = if name == "node_embed" || name == "edge.w_state" {
                1.0
            } else if cols == 1 {
                0.0
            } else {
                (1.0 / cols as f64).sqrt()
            };
            for v in &mut p.data[off..off + rows * cols] {
                *v = F::of(rng.gen_range(-1.0..=1.0) * bound);
            }
        }
        p
    }

    /// Every entry drawn uniformly from `[-scale, scale]`; heads included.
    pub fn random(dims: Dims, scale: f64, seed: u64) -> Self {
        let mut p = Self::zeros(dims);
        let mut rng = substream(seed, "random-params", &[]);
        for v in &mut p.data {
            *v = F::of(rng.gen_range(-scale..=scale));
        }
        p
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(name, values)` for every block, in storage order.
    pub fn blocks(&self) -> impl Iterator<Item = (&str, &[F])> {
        self.layout
            .blocks
            .iter()
            .map(move |(name, r, c, off)| (name.as_str(), &self.data[*off..off + r * c]))
    }

    /// Zero both output heads.
    pub fn zero_heads(&mut self) {
        for r in self.layout.head_ranges(&self.dims) {
            self.data[r].iter_mut().for_each(|v| *v = F::zero());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("block {name:?}: {msg}")]
    Block { name: String, msg: String },
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDump {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// JSON tensor dump of a trained denoiser with its noise schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub dims: Dims,
    pub blocks: Vec<BlockDump>,
    pub schedule: Option<ScheduleFile>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new<F: Scalar>(params: &DenoiserParams<F>, schedule: Option<ScheduleFile>) -> Self {
        let blocks = params
            .layout
            .blocks
            .iter()
            .map(|(name, r, c, off)| BlockDump {
                name: name.clone(),
                shape: [*r, *c],
                data: params.data[*off..off + r * c].iter().map(|v| v.f64()).collect(),
            })
            .collect();
        Checkpoint { version: CHECKPOINT_VERSION, dims: params.dims, blocks, schedule }
    }

    pub fn params<F: Scalar>(&self) -> Result<DenoiserParams<F>, CheckpointError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(self.version));
        }
        let mut p = DenoiserParams::<F>::zeros(self.dims);
        if self.blocks.len() != p.layout.blocks.len() {
            return Err(CheckpointError::Block { name: "*".into(), msg: "block count mismatch".into() });
        }
        for (dump, (name, r, c, off)) in self.blocks.iter().zip(&p.layout.blocks.clone()) {
            if &dump.name != name || dump.shape != [*r, *c] || dump.data.len() != r * c {
                return Err(CheckpointError::Block { name: dump.name.clone(), msg: "name or shape mismatch".into() });
            }
            for (dst, &src) in p.data[*off..off + r * c].iter_mut().zip(&dump.data) {
                *dst = F::of(src);
            }
        }
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        Ok(serde_json::from_str(text)?)
    }
}
