use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{grad, DenoiserParams, Dims};
use crate::diffusion::{forward_noise, NoiseSchedule, NoisySample};
use crate::rng::substream;
use crate::sampling::{SampleCorpus, SubgraphSample};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss {loss} at step {step} (batch mean; t values {ts:?})")]
    NonFiniteLoss { step: usize, loss: f64, ts: Vec<usize> },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub hidden: usize,
    pub layers: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 5000, batch: 16, learning_rate: 3e-4, lambda: 5.0, hidden: 32, layers: 2, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.batch == 0 {
            return bad("batch must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if self.hidden == 0 || self.layers == 0 {
            return bad("hidden and layers must be positive");
        }
        Ok(())
    }
}

/// Adam moments, no weight decay.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    m: Vec<F>,
    v: Vec<F>,
    t: i32,
}

impl<F: Scalar> Adam<F> {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr: F::of(lr),
            beta1: F::of(0.9),
            beta2: F::of(0.999),
            eps: F::of(1e-8),
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [F], grad: &[F]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = F::one() - self.beta1.powi(self.t);
        let c2 = F::one() - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (F::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (F::one() - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] = params[i] - self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F: Scalar> {
    pub params: DenoiserParams<F>,
    /// Mean batch loss before each update.
    pub loss_trace: Vec<f64>,
}

/// Draw one training batch for `step`: corpus indices uniform with
/// replacement, `t` uniform in `[1, T]`, then forward noise.
fn draw_batch<'a, F: Scalar>(
    corpus: &'a SampleCorpus,
    sched: &NoiseSchedule<F>,
    cfg: &TrainConfig,
    step: usize,
) -> Vec<(NoisySample, &'a SubgraphSample)> {
    let mut rng = substream(cfg.seed, "train-batch", &[step as u64]);
    (0..cfg.batch)
        .map(|_| {
            let s = &corpus.samples[rng.gen_range(0..corpus.samples.len())];
            let t = rng.gen_range(1..=sched.steps());
            (forward_noise(s, t, sched, &mut rng), s)
        })
        .collect()
}

/// Fit a denoiser to the corpus. Deterministic for a given config.
pub fn train<F: Scalar>(
    corpus: &SampleCorpus,
    sched: &NoiseSchedule<F>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>, TrainError> {
    cfg.validate()?;
    if corpus.samples.is_empty() {
        return Err(TrainError::InvalidConfig("empty corpus".into()));
    }
    if sched.num_node_states() != corpus.n_parent {
        return Err(TrainError::InvalidConfig(format!(
            "schedule has {} node states, corpus parent has {} nodes",
            sched.num_node_states(),
            corpus.n_parent
        )));
    }
    let dims = Dims::new(corpus.n_parent, cfg.hidden, cfg.layers);
    let mut params = DenoiserParams::<F>::init(dims, cfg.seed);
    let mut opt = Adam::<F>::new(params.len(), cfg.learning_rate);
    let lambda = F::of(cfg.lambda);
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = draw_batch(corpus, sched, cfg, step);
        let (loss, g) = grad(&params, &batch, sched, lambda);
        let loss = loss.f64();
        if !loss.is_finite() || !g.is_finite() {
            return Err(TrainError::NonFiniteLoss { step, loss, ts: batch.iter().map(|(n, _)| n.t).collect() });
        }
        loss_trace.push(loss);
        opt.step(&mut params.data, &g.data);
    }
    Ok(TrainOutcome { params, loss_trace })
}

/// Loss trace as `step,loss` CSV.
pub fn loss_csv(trace: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}
