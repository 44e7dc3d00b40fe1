//! Link-prediction utility test: fit a shallow embedding model on one graph
//! and rank held edges of another against non-edges.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::Adam;
use crate::graph::Graph;
use crate::rng::substream;
use crate::scalar::Scalar;

/// Rejection draws allowed per negative-sampling call.
pub const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum LinkPredError {
    #[error("could not find {wanted} non-edges after {MAX_REJECTIONS} rejections (found {found})")]
    NegativeSamplingExhausted { wanted: usize, found: usize },
    #[error("invalid link-prediction request: {0}")]
    Invalid(String),
    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSet {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    pub seed: u64,
}

/// `count` distinct non-edges of `g`, uniform over the complement, as
/// canonical `(u, v)` with `u < v`.
fn sample_non_edges<R: Rng>(g: &Graph, count: usize, rng: &mut R) -> Result<Vec<(usize, usize)>, LinkPredError> {
    let n = g.n();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut rejections = 0;
    while out.len() < count {
        if n < 2 || rejections >= MAX_REJECTIONS {
            return Err(LinkPredError::NegativeSamplingExhausted { wanted: count, found: out.len() });
        }
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        let pair = (u.min(v), u.max(v));
        if u == v || g.has_edge(u, v) || !seen.insert(pair) {
            rejections += 1;
            continue;
        }
        out.push(pair);
    }
    Ok(out)
}

/// Held positives: a uniform `ceil(fraction * |E|)` subset of real edges;
/// negatives: as many uniform non-edges.
pub fn build_eval_set(real: &Graph, fraction: f64, seed: u64) -> Result<EvalSet, LinkPredError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(LinkPredError::Invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    let count = (fraction * real.num_edges() as f64).ceil() as usize;
    let mut rng = substream(seed, "eval-set", &[]);
    let mut positives = real.edges().to_vec();
    positives.shuffle(&mut rng);
    positives.truncate(count);
    positives.sort_unstable();
    let negatives = sample_non_edges(real, count, &mut rng)?;
    Ok(EvalSet { positives, negatives, seed })
}

/// Dot-product logistic scorer `σ(z_u · z_v + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel<F: Scalar> {
    pub n: usize,
    pub h: usize,
    pub z: Vec<F>,
    pub bias: F,
}

impl<F: Scalar> EmbeddingModel<F> {
    /// Entries uniform in `[-scale, scale]`, bias zero.
    pub fn random(n: usize, h: usize, scale: f64, seed: u64) -> Self {
        let mut rng = substream(seed, "embedding-init", &[]);
        let z = (0..n * h).map(|_| F::of(rng.gen_range(-scale..=scale))).collect();
        EmbeddingModel { n, h, z, bias: F::zero() }
    }

    fn row(&self, v: usize) -> &[F] {
        &self.z[v * self.h..(v + 1) * self.h]
    }

    pub fn logit(&self, u: usize, v: usize) -> F {
        self.row(u).iter().zip(self.row(v)).fold(self.bias, |acc, (&a, &b)| acc + a * b)
    }

    pub fn score(&self, u: usize, v: usize) -> F {
        F::one() / (F::one() + (-self.logit(u, v)).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkPredConfig {
    pub h: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Half-width of the uniform initialization.
    pub init_scale: f64,
}

impl Default for LinkPredConfig {
    fn default() -> Self {
        LinkPredConfig { h: 16, epochs: 200, lr: 0.05, init_scale: 0.1 }
    }
}

#[derive(Debug, Clone)]
pub struct LinkPredOutcome<F: Scalar> {
    pub model: EmbeddingModel<F>,
    /// Mean logistic loss per epoch, before that epoch's update.
    pub loss_trace: Vec<f64>,
}

/// `ln(1 + e^x)` without overflow.
fn softplus<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Full-batch logistic regression on the graph's edges against freshly
/// drawn non-edges each epoch, optimized with Adam.
pub fn train_link_predictor<F: Scalar>(
    synthetic: &Graph,
    cfg: &LinkPredConfig,
    seed: u64,
) -> Result<LinkPredOutcome<F>, LinkPredError> {
    if synthetic.num_edges() == 0 {
        return Err(LinkPredError::Invalid("training graph has no edges".into()));
    }
    if cfg.h == 0 || !(cfg.lr > 0.0) {
        return Err(LinkPredError::Invalid("h and lr must be positive".into()));
    }
    let (n, h) = (synthetic.n(), cfg.h);
    let mut model = EmbeddingModel::<F>::random(n, h, cfg.init_scale, seed);
    let mut opt = Adam::<F>::new(n * h + 1, cfg.lr);
    let mut flat = vec![F::zero(); n * h + 1];
    let mut grad = vec![F::zero(); n * h + 1];
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = substream(seed, "linkpred-neg", &[epoch as u64]);
        let negatives = sample_non_edges(synthetic, synthetic.num_edges(), &mut rng)?;
        let examples = synthetic.edges().iter().map(|&e| (e, F::one())).chain(negatives.into_iter().map(|e| (e, F::zero())));
        let total = F::of_usize(2 * synthetic.num_edges());
        grad.iter_mut().for_each(|g| *g = F::zero());
        let mut loss = F::zero();
        for ((u, v), y) in examples {
            let x = model.logit(u, v);
            // -y ln σ(x) - (1 - y) ln(1 - σ(x))
            loss = loss + softplus(x) - y * x;
            let p = F::one() / (F::one() + (-x).exp());
            let d = (p - y) / total;
            for c in 0..h {
                grad[u * h + c] = grad[u * h + c] + d * model.z[v * h + c];
                grad[v * h + c] = grad[v * h + c] + d * model.z[u * h + c];
            }
            grad[n * h] = grad[n * h] + d;
        }
        let loss = (loss / total).f64();
        if !loss.is_finite() {
            return Err(LinkPredError::NonFiniteLoss(epoch));
        }
        loss_trace.push(loss);
        flat[..n * h].copy_from_slice(&model.z);
        flat[n * h] = model.bias;
        opt.step(&mut flat, &grad);
        model.z.copy_from_slice(&flat[..n * h]);
        model.bias = flat[n * h];
    }
    Ok(LinkPredOutcome { model, loss_trace })
}

/// Area under the ROC curve, with ties counted one half, by midranks.
pub fn auc_from_scores(pos: &[f64], neg: &[f64]) -> f64 {
    assert!(!pos.is_empty() && !neg.is_empty(), "AUC needs both classes");
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the rank sum of positives stays integral with midranks
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let twice_mid = (i + 1 + j) as u128; // ranks i+1 ..= j
        let positives = all[i..j].iter().filter(|x| x.1).count() as u128;
        twice_rank_sum += twice_mid * positives;
        i = j;
    }
    let (p, q) = (pos.len() as u128, neg.len() as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    twice_u as f64 / (2 * p * q) as f64
}

/// Average precision, `Σ (R_k - R_{k-1}) P_k` over distinct score
/// thresholds in decreasing order.
pub fn average_precision(pos: &[f64], neg: &[f64]) -> f64 {
    assert!(!pos.is_empty(), "AP needs positives");
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total = pos.len() as f64;
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let before = tp;
        while j < all.len() && all[j].0 == all[i].0 {
            tp += usize::from(all[j].1);
            j += 1;
        }
        seen += j - i;
        ap += (tp - before) as f64 / total * (tp as f64 / seen as f64);
        i = j;
    }
    ap
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkPredScores {
    pub auc: f64,
    pub ap: f64,
}

pub fn evaluate<F: Scalar>(model: &EmbeddingModel<F>, eval: &EvalSet) -> LinkPredScores {
    let score = |&(u, v): &(usize, usize)| model.logit(u, v).f64();
    let pos: Vec<f64> = eval.positives.iter().map(score).collect();
    let neg: Vec<f64> = eval.negatives.iter().map(score).collect();
    LinkPredScores { auc: auc_from_scores(&pos, &neg), ap: average_precision(&pos, &neg) }
}

/// Results record for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPredResult {
    pub method: String,
    pub dataset: String,
    pub auc: f64,
    pub ap: f64,
    pub seed: u64,
}
