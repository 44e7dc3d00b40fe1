//! Single-graph generation by subgraph sampling and discrete denoising
//! diffusion.
//!
//! The pipeline turns one observed graph into a corpus of node-ID-labeled
//! subgraphs ([`sampling`]), learns a denoiser for a marginal-preserving
//! discrete diffusion over those subgraphs ([`diffusion`], [`denoiser`]),
//! then generates subgraphs and unions their edges into one synthetic graph
//! ([`assembler`]). [`metrics`] and [`linkpred`] evaluate the result.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common `f64` instantiation.

pub mod graph;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod diffusion;
pub mod denoiser;
pub mod assembler;
pub mod metrics;
pub mod linkpred;
pub mod sbm;
pub mod pipeline;

pub use graph::{Graph, NodeSet};
pub use scalar::Scalar;

pub type NoiseSchedule = diffusion::NoiseSchedule<f64>;
pub type NoiseSchedule32 = diffusion::NoiseSchedule<f32>;
pub type DenoiserParams = denoiser::DenoiserParams<f64>;
pub type DenoiserParams32 = denoiser::DenoiserParams<f32>;
