//! Discrete marginal-preserving diffusion over node-ID and edge states.
//!
//! Every transition matrix has the form `Q = a I + (1 - a) 1 m^T` for a
//! retention coefficient `a` and a target marginal `m`, so products of them
//! stay in that family (`a` multiplies) and applying one to a distribution
//! costs `O(S)`. Matrices are never materialized.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::{SampleCorpus, SubgraphSample};
use crate::scalar::Scalar;

/// Step count used when none is configured.
pub const DEFAULT_STEPS: usize = 500;
/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("posterior has no support at t = {t} (noisy state {state})")]
    DegeneratePosterior { t: usize, state: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// Which state space a categorical lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    Node,
    Edge,
}

/// Cumulative table for O(log S) draws from a fixed marginal.
#[derive(Debug, Clone, PartialEq)]
struct Cumulative(Vec<f64>);

impl Cumulative {
    fn new<F: Scalar>(m: &[F]) -> Self {
        let mut acc = 0.0;
        Cumulative(
            m.iter()
                .map(|p| {
                    acc += p.f64();
                    acc
                })
                .collect(),
        )
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.0.last().unwrap_or(&0.0);
        let u = rng.gen::<f64>() * total;
        let idx = self.0.partition_point(|&c| c <= u);
        // never land on a zero-mass trailing entry
        idx.min(self.0.len() - 1)
    }
}

/// Retention coefficients, their cumulative products, and the target
/// marginals for node and edge states.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<F: Scalar> {
    steps: usize,
    /// `alpha[t]` for `t = 0..=T`, with `alpha[0] = 1`.
    alpha: Vec<F>,
    /// `alpha_bar[t]` for `t = 0..=T`, with `alpha_bar[0] = 1`.
    alpha_bar: Vec<F>,
    m_x: Vec<F>,
    m_e: [F; 2],
    /// Keep node IDs clean during noising and generation.
    pub freeze_node_ids: bool,
    cum_x: Cumulative,
    cum_e: Cumulative,
}

/// Serialized form of a schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    #[serde(rename = "T")]
    pub steps: usize,
    pub alpha_bar: Vec<f64>,
    #[serde(rename = "m_X")]
    pub m_x: Vec<f64>,
    #[serde(rename = "m_E")]
    pub m_e: [f64; 2],
    #[serde(default)]
    pub freeze_node_ids: bool,
}

/// Cosine `alpha_bar_t` for `t = 0..=steps`, normalized so `alpha_bar_0 = 1`.
pub fn cosine_alpha_bar(steps: usize) -> Vec<f64> {
    let f = |t: usize| {
        let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2;
        x.cos().powi(2)
    };
    let f0 = f(0);
    (0..=steps).map(|t| f(t) / f0).collect()
}

impl<F: Scalar> NoiseSchedule<F> {
    /// Build from an explicit `alpha_bar` sequence (`alpha_bar[0]` must be 1)
    /// and marginals; marginals are renormalized.
    pub fn from_alpha_bar(alpha_bar: &[f64], m_x: &[f64], m_e: [f64; 2]) -> Result<Self, DiffusionError> {
        if alpha_bar.len() < 2 {
            return Err(DiffusionError::InvalidSchedule("need at least one step".into()));
        }
        if (alpha_bar[0] - 1.0).abs() > 1e-12 {
            return Err(DiffusionError::InvalidSchedule("alpha_bar[0] must be 1".into()));
        }
        if alpha_bar.windows(2).any(|w| !(w[1] <= w[0] && w[1] >= 0.0)) {
            return Err(DiffusionError::InvalidSchedule("alpha_bar must be non-increasing in [0, 1]".into()));
        }
        let m_x = normalized(m_x)?;
        let m_e = normalized(&m_e)?;
        let alpha: Vec<F> = std::iter::once(F::one())
            .chain(alpha_bar.windows(2).map(|w| {
                if w[0] > 0.0 {
                    F::of(w[1] / w[0])
                } else {
                    F::zero()
                }
            }))
            .collect();
        let m_x: Vec<F> = m_x.into_iter().map(F::of).collect();
        let m_e = [F::of(m_e[0]), F::of(m_e[1])];
        Ok(NoiseSchedule {
            steps: alpha_bar.len() - 1,
            alpha,
            alpha_bar: alpha_bar.iter().map(|&a| F::of(a)).collect(),
            cum_x: Cumulative::new(&m_x),
            cum_e: Cumulative::new(&m_e),
            m_x,
            m_e,
            freeze_node_ids: false,
        })
    }

    /// Cosine schedule with explicit marginals.
    pub fn cosine(steps: usize, m_x: &[f64], m_e: [f64; 2]) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::InvalidSchedule("T must be at least 1".into()));
        }
        Self::from_alpha_bar(&cosine_alpha_bar(steps), m_x, m_e)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn alpha(&self, t: usize) -> F {
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> F {
        self.alpha_bar[t]
    }

    pub fn node_marginal(&self) -> &[F] {
        &self.m_x
    }

    pub fn edge_marginal(&self) -> &[F; 2] {
        &self.m_e
    }

    pub fn num_node_states(&self) -> usize {
        self.m_x.len()
    }

    pub fn marginal(&self, kind: StateKind) -> &[F] {
        match kind {
            StateKind::Node => &self.m_x,
            StateKind::Edge => &self.m_e,
        }
    }

    pub fn draw_prior<R: Rng>(&self, kind: StateKind, rng: &mut R) -> usize {
        match kind {
            StateKind::Node => self.cum_x.draw(rng),
            StateKind::Edge => self.cum_e.draw(rng),
        }
    }

    pub fn to_file(&self) -> ScheduleFile {
        ScheduleFile {
            steps: self.steps,
            alpha_bar: self.alpha_bar.iter().map(|a| a.f64()).collect(),
            m_x: self.m_x.iter().map(|a| a.f64()).collect(),
            m_e: [self.m_e[0].f64(), self.m_e[1].f64()],
            freeze_node_ids: self.freeze_node_ids,
        }
    }

    pub fn from_file(file: &ScheduleFile) -> Result<Self, DiffusionError> {
        if file.alpha_bar.len() != file.steps + 1 {
            return Err(DiffusionError::InvalidSchedule("alpha_bar length must be T + 1".into()));
        }
        let mut s = Self::from_alpha_bar(&file.alpha_bar, &file.m_x, file.m_e)?;
        s.freeze_node_ids = file.freeze_node_ids;
        Ok(s)
    }
}

fn normalized(m: &[f64]) -> Result<Vec<f64>, DiffusionError> {
    let total: f64 = m.iter().sum();
    if m.is_empty() || m.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || total <= 0.0 {
        return Err(DiffusionError::InvalidSchedule("marginal must be non-negative with positive mass".into()));
    }
    Ok(m.iter().map(|&p| p / total).collect())
}

/// Cosine schedule whose marginals are the node-ID and edge/non-edge
/// frequencies of `corpus`.
pub fn build_schedule<F: Scalar>(steps: usize, corpus: &SampleCorpus) -> Result<NoiseSchedule<F>, DiffusionError> {
    let n = corpus.n_parent;
    let mut counts = vec![0.0f64; n];
    let (mut present, mut pairs) = (0.0f64, 0.0f64);
    for s in &corpus.samples {
        for &id in &s.id_map {
            counts[id] += 1.0;
        }
        present += s.local.num_edges() as f64;
        pairs += (s.size() * s.size().saturating_sub(1) / 2) as f64;
    }
    let m_e = if pairs > 0.0 { [(pairs - present) / pairs, present / pairs] } else { [1.0, 0.0] };
    NoiseSchedule::cosine(steps, &counts, m_e)
}

/// `dist · Q` for `Q = keep I + (1 - keep) 1 m^T`.
pub fn apply_structured<F: Scalar>(dist: &[F], keep: F, m: &[F]) -> Vec<F> {
    let mass: F = dist.iter().copied().sum();
    dist.iter()
        .zip(m)
        .map(|(&p, &mj)| keep * p + (F::one() - keep) * mj * mass)
        .collect()
}

/// One forward transition `state_dist · Q^t`.
pub fn transition_apply<F: Scalar>(state_dist: &[F], t: usize, kind: StateKind, sched: &NoiseSchedule<F>) -> Vec<F> {
    apply_structured(state_dist, sched.alpha(t), sched.marginal(kind))
}

/// Noisy graph state at step `t`. Pair states are stored for `i < j` in
/// row-major upper-triangular order (see [`pair_index`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoisySample {
    pub t: usize,
    pub x: Vec<usize>,
    pub e: Vec<u8>,
}

impl NoisySample {
    pub fn k(&self) -> usize {
        self.x.len()
    }

    /// The clean state of `sample` viewed as a step-0 noisy sample.
    pub fn clean(sample: &SubgraphSample) -> Self {
        let k = sample.size();
        let mut e = vec![0u8; num_pairs(k)];
        for &(i, j) in sample.local.edges() {
            e[pair_index(i, j, k)] = 1;
        }
        NoisySample { t: 0, x: sample.id_map.clone(), e }
    }

    pub fn edge(&self, i: usize, j: usize) -> u8 {
        let (a, b) = (i.min(j), i.max(j));
        self.e[pair_index(a, b, self.k())]
    }
}

pub fn num_pairs(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// Position of the pair `(i, j)`, `i < j < k`, in upper-triangular order.
#[inline]
pub fn pair_index(i: usize, j: usize, k: usize) -> usize {
    debug_assert!(i < j && j < k);
    i * (2 * k - i - 1) / 2 + (j - i - 1)
}

/// All pairs `(i, j)`, `i < j < k`, in [`pair_index`] order.
pub fn pairs(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..k).flat_map(move |i| (i + 1..k).map(move |j| (i, j)))
}

/// Draw `G^t ~ q(G^t | G)`: each state independently kept with probability
/// `alpha_bar_t`, otherwise redrawn from its marginal.
pub fn forward_noise<F: Scalar, R: Rng>(
    sample: &SubgraphSample,
    t: usize,
    sched: &NoiseSchedule<F>,
    rng: &mut R,
) -> NoisySample {
    assert!(t >= 1 && t <= sched.steps(), "t = {t} outside [1, {}]", sched.steps());
    let keep = sched.alpha_bar(t).f64();
    let clean = NoisySample::clean(sample);
    let x = clean
        .x
        .iter()
        .map(|&id| {
            if sched.freeze_node_ids || rng.gen::<f64>() < keep {
                id
            } else {
                sched.draw_prior(StateKind::Node, rng)
            }
        })
        .collect();
    let e = clean
        .e
        .iter()
        .map(|&s| if rng.gen::<f64>() < keep { s } else { sched.draw_prior(StateKind::Edge, rng) as u8 })
        .collect();
    NoisySample { t, x, e }
}

/// Reverse-step distribution over states at `t - 1` given the noisy state
/// and a predicted distribution over clean states, using the structured
/// closed form of `q(x^{t-1} | x, x^t)`.
pub fn posterior_with<F: Scalar>(
    x_t: usize,
    p_hat: &[F],
    alpha_t: F,
    alpha_bar_prev: F,
    alpha_bar_t: F,
    m: &[F],
    t: usize,
) -> Result<Vec<F>, DiffusionError> {
    let one = F::one();
    let mj = m[x_t];
    // w_x = p_hat(x) 1(q(x_t | x) > 0) / q(x_t | x)
    let mut w_total = F::zero();
    let w: Vec<F> = p_hat
        .iter()
        .enumerate()
        .map(|(x, &p)| {
            let reach = (one - alpha_bar_t) * mj + if x == x_t { alpha_bar_t } else { F::zero() };
            let wx = if reach > F::zero() { p / reach } else { F::zero() };
            w_total = w_total + wx;
            wx
        })
        .collect();
    let mut out: Vec<F> = w
        .iter()
        .zip(m)
        .enumerate()
        .map(|(y, (&wy, &my))| {
            let to_xt = (one - alpha_t) * mj + if y == x_t { alpha_t } else { F::zero() };
            to_xt * (alpha_bar_prev * wy + (one - alpha_bar_prev) * my * w_total)
        })
        .collect();
    let total: F = out.iter().copied().sum();
    if !(total > F::zero()) || !total.is_finite() {
        return Err(DiffusionError::DegeneratePosterior { t, state: x_t });
    }
    for v in &mut out {
        *v = *v / total;
    }
    Ok(out)
}

pub fn posterior_step<F: Scalar>(
    x_t: usize,
    p_hat: &[F],
    t: usize,
    sched: &NoiseSchedule<F>,
    kind: StateKind,
) -> Result<Vec<F>, DiffusionError> {
    assert!(t >= 1 && t <= sched.steps());
    posterior_with(
        x_t,
        p_hat,
        sched.alpha(t),
        sched.alpha_bar(t - 1),
        sched.alpha_bar(t),
        sched.marginal(kind),
        t,
    )
}

/// Denoiser output: a categorical over node IDs per node and over
/// {absent, present} per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions<F> {
    pub node: Vec<Vec<F>>,
    pub edge: Vec<[F; 2]>,
}

pub fn draw_categorical<F: Scalar, R: Rng>(p: &[F], rng: &mut R) -> usize {
    let u = rng.gen::<f64>();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &pi) in p.iter().enumerate() {
        let pi = pi.f64();
        if pi > 0.0 {
            last_nonzero = i;
        }
        acc += pi;
        if u < acc {
            return i;
        }
    }
    last_nonzero
}

/// Sample `G^{t-1}` from the product of per-node and per-pair posteriors.
pub fn reverse_step<F: Scalar, R: Rng>(
    noisy: &NoisySample,
    pred: &Predictions<F>,
    sched: &NoiseSchedule<F>,
    rng: &mut R,
) -> Result<NoisySample, DiffusionError> {
    let t = noisy.t;
    assert!(t >= 1, "reverse_step needs t >= 1");
    assert_eq!(pred.node.len(), noisy.k());
    assert_eq!(pred.edge.len(), noisy.e.len());
    let x = if sched.freeze_node_ids {
        noisy.x.clone()
    } else {
        noisy
            .x
            .iter()
            .zip(&pred.node)
            .map(|(&xt, p)| posterior_step(xt, p, t, sched, StateKind::Node).map(|q| draw_categorical(&q, rng)))
            .collect::<Result<Vec<_>, _>>()?
    };
    let e = noisy
        .e
        .iter()
        .zip(&pred.edge)
        .map(|(&et, p)| {
            posterior_step(usize::from(et), p, t, sched, StateKind::Edge).map(|q| draw_categorical(&q, rng) as u8)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NoisySample { t: t - 1, x, e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::rng::substream;
    use crate::sampling::{SampleCorpus, Scheme};

    type Sched = NoiseSchedule<f64>;

    fn triangle_sample(ids: [usize; 3], n: usize) -> SubgraphSample {
        SubgraphSample { local: Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]), id_map: ids.to_vec(), n_parent: n }
    }

    /// Dense `a I + (1 - a) 1 m^T`.
    fn dense(a: f64, m: &[f64]) -> Vec<Vec<f64>> {
        let s = m.len();
        (0..s)
            .map(|i| (0..s).map(|j| a * f64::from(u8::from(i == j)) + (1.0 - a) * m[j]).collect())
            .collect()
    }

    fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let s = a.len();
        (0..s).map(|i| (0..s).map(|j| (0..s).map(|l| a[i][l] * b[l][j]).sum()).collect()).collect()
    }

    /// Exhaustive posterior: enumerate clean x and previous y, using
    /// materialized one-step and (t-1)-step matrices and their product.
    fn brute_posterior(xt: usize, p_hat: &[f64], alpha_t: f64, abar_prev: f64, m: &[f64]) -> Vec<f64> {
        let q_step = dense(alpha_t, m);
        let q_prev = dense(abar_prev, m);
        let q_bar = matmul(&q_prev, &q_step);
        let s = m.len();
        let mut out = vec![0.0; s];
        for x in 0..s {
            if q_bar[x][xt] <= 0.0 {
                continue;
            }
            let joint: Vec<f64> = (0..s).map(|y| q_prev[x][y] * q_step[y][xt]).collect();
            let z: f64 = joint.iter().sum();
            for y in 0..s {
                out[y] += p_hat[x] * joint[y] / z;
            }
        }
        let z: f64 = out.iter().sum();
        out.iter().map(|v| v / z).collect()
    }

    #[test]
    fn schedule_contract() {
        let s = Sched::cosine(DEFAULT_STEPS, &[1.0, 1.0], [0.5, 0.5]).unwrap();
        assert_eq!(s.steps(), 500);
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bar(500) <= 1e-4);
        for t in 1..=500 {
            assert!(s.alpha_bar(t) <= s.alpha_bar(t - 1));
            assert!(s.alpha(t) > 0.0 && s.alpha(t) <= 1.0);
            assert!((s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)).abs() < 1e-15);
        }
    }

    #[test]
    fn triangle_corpus_marginals() {
        let corpus = SampleCorpus {
            samples: vec![triangle_sample([0, 2, 4], 5); 4],
            scheme: Scheme::Rw,
            k: 3,
            d: 1,
            n_parent: 5,
        };
        let s: Sched = build_schedule(100, &corpus).unwrap();
        assert_eq!(s.edge_marginal(), &[0.0, 1.0]);
        let third = 1.0 / 3.0;
        for (got, want) in s.node_marginal().iter().zip([third, 0.0, third, 0.0, third]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn schedule_file_round_trip() {
        let mut s = Sched::cosine(20, &[0.2, 0.3, 0.5], [0.9, 0.1]).unwrap();
        s.freeze_node_ids = true;
        let file = s.to_file();
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.contains("\"T\":20") && json.contains("\"m_X\"") && json.contains("\"m_E\""));
        let back = Sched::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn transition_examples() {
        let m = [0.2, 0.3, 0.5];
        let s = Sched::from_alpha_bar(&[1.0, 0.7, 0.0], &m, [0.5, 0.5]).unwrap();
        let e0 = [1.0, 0.0, 0.0];
        let got = transition_apply(&e0, 1, StateKind::Node, &s);
        let q = dense(0.7, &m);
        for j in 0..3 {
            let oracle: f64 = (0..3).map(|i| e0[i] * q[i][j]).sum();
            assert!((got[j] - oracle).abs() < 1e-15);
        }
        for (g, w) in got.iter().zip([0.76, 0.09, 0.15]) {
            assert!((g - w).abs() < 1e-12);
        }
        assert_eq!(apply_structured(&e0, 1.0, &m), e0.to_vec());
        let absorbed = apply_structured(&[0.1, 0.6, 0.3], 0.0, &m);
        for (g, w) in absorbed.iter().zip(m) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn chapman_kolmogorov() {
        let m = [0.1, 0.25, 0.4, 0.25];
        let s = Sched::cosine(50, &m, [0.5, 0.5]).unwrap();
        let mut dist = vec![0.3, 0.0, 0.6, 0.1];
        for t in 1..=37 {
            dist = transition_apply(&dist, t, StateKind::Node, &s);
            let direct = apply_structured(&[0.3, 0.0, 0.6, 0.1], s.alpha_bar(t), &m);
            for (a, b) in dist.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_noise_identity_when_no_noise() {
        let s = Sched::from_alpha_bar(&[1.0, 1.0], &[1.0; 5], [0.5, 0.5]).unwrap();
        let sample = triangle_sample([0, 2, 4], 5);
        let mut rng = substream(0, "fw", &[]);
        let noisy = forward_noise(&sample, 1, &s, &mut rng);
        assert_eq!(noisy.x, vec![0, 2, 4]);
        assert_eq!(noisy.e, vec![1, 1, 1]);
    }

    #[test]
    fn forward_noise_reaches_marginals() {
        let m = [0.1, 0.2, 0.3, 0.4];
        let s = Sched::cosine(100, &m, [0.7, 0.3]).unwrap();
        let sample = SubgraphSample { local: Graph::from_edges(2, [(0, 1)]), id_map: vec![0, 3], n_parent: 4 };
        let mut rng = substream(1, "fw", &[]);
        let draws = 100_000;
        let mut node_counts = [0usize; 4];
        let mut edge_counts = [0usize; 2];
        for _ in 0..draws {
            let noisy = forward_noise(&sample, 100, &s, &mut rng);
            node_counts[noisy.x[0]] += 1;
            edge_counts[usize::from(noisy.e[0])] += 1;
        }
        // chi-square 99% critical values: 3 dof -> 11.345, 1 dof -> 6.635
        let chi = |counts: &[usize], probs: &[f64]| -> f64 {
            counts
                .iter()
                .zip(probs)
                .map(|(&c, &p)| {
                    let e = p * draws as f64;
                    (c as f64 - e).powi(2) / e
                })
                .sum()
        };
        assert!(chi(&node_counts, &m) < 11.345);
        assert!(chi(&edge_counts, &[0.7, 0.3]) < 6.635);
    }

    #[test]
    fn forward_noise_single_edge_mixture() {
        let s = Sched::from_alpha_bar(&[1.0, 0.5], &[1.0, 1.0], [0.9, 0.1]).unwrap();
        let sample = SubgraphSample { local: Graph::from_edges(2, [(0, 1)]), id_map: vec![0, 1], n_parent: 2 };
        let mut rng = substream(2, "fw", &[]);
        let draws = 100_000;
        let present = (0..draws).filter(|_| forward_noise(&sample, 1, &s, &mut rng).e[0] == 1).count();
        let p = 0.5 + 0.5 * 0.1;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        assert!((present as f64 - p * draws as f64).abs() < 4.0 * sigma);
    }

    #[test]
    fn posterior_identity_chain() {
        let s = Sched::from_alpha_bar(&[1.0, 1.0, 1.0], &[0.2, 0.3, 0.5], [0.5, 0.5]).unwrap();
        let post = posterior_step(1, &[0.0, 1.0, 0.0], 2, &s, StateKind::Node).unwrap();
        assert_eq!(post, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn posterior_matches_enumeration() {
        let mut rng = substream(3, "post", &[]);
        for states in [2usize, 3, 4] {
            for _ in 0..100 {
                let alpha_t: f64 = rng.gen_range(0.01..1.0);
                let abar_prev: f64 = rng.gen_range(0.01..1.0);
                let mut m: Vec<f64> = (0..states).map(|_| rng.gen_range(0.01..1.0)).collect();
                let z: f64 = m.iter().sum();
                m.iter_mut().for_each(|v| *v /= z);
                let mut p: Vec<f64> = (0..states).map(|_| rng.gen_range(0.0..1.0)).collect();
                let z: f64 = p.iter().sum();
                p.iter_mut().for_each(|v| *v /= z);
                let xt = rng.gen_range(0..states);
                let got = posterior_with(xt, &p, alpha_t, abar_prev, abar_prev * alpha_t, &m, 2).unwrap();
                let want = brute_posterior(xt, &p, alpha_t, abar_prev, &m);
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() <= 1e-12, "{got:?} vs {want:?}");
                }
                assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn posterior_marginalizes_back() {
        // sum_y q(y | x, x_t) q(x_t | y) ... check q(x_t | x) = sum_y Qbar_{t-1}[x,y] Q_t[y,x_t]
        let m = [0.15, 0.35, 0.5];
        for (alpha_t, abar_prev) in [(0.3, 0.9), (0.95, 0.2), (0.5, 0.5)] {
            let q_step = dense(alpha_t, &m);
            let q_prev = dense(abar_prev, &m);
            for x in 0..3 {
                for xt in 0..3 {
                    let lhs: f64 = (0..3).map(|y| q_prev[x][y] * q_step[y][xt]).sum();
                    let rhs = dense(alpha_t * abar_prev, &m)[x][xt];
                    assert!((lhs - rhs).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn posterior_at_step_one_is_masked_prediction() {
        let s = Sched::from_alpha_bar(&[1.0, 0.4], &[0.0, 0.5, 0.5], [0.5, 0.5]).unwrap();
        // clean state 0 cannot reach x_t = 1 (m_1 > 0 though), so mask is all ones here
        let p = [0.2, 0.3, 0.5];
        let post = posterior_step(1, &p, 1, &s, StateKind::Node).unwrap();
        for (a, b) in post.iter().zip(p) {
            assert!((a - b).abs() < 1e-12);
        }
        // x_t = 0 has zero marginal mass: only clean state 0 can reach it
        let post = posterior_step(0, &[0.5, 0.25, 0.25], 1, &s, StateKind::Node).unwrap();
        assert_eq!(post, vec![1.0, 0.0, 0.0]);
        let err = posterior_step(0, &[0.0, 0.5, 0.5], 1, &s, StateKind::Node).unwrap_err();
        assert_eq!(err, DiffusionError::DegeneratePosterior { t: 1, state: 0 });
    }

    #[test]
    fn reverse_step_deterministic_and_boundary() {
        let s = Sched::cosine(4, &[0.5, 0.5], [0.5, 0.5]).unwrap();
        let noisy = NoisySample { t: 1, x: vec![0, 1], e: vec![1] };
        let pred = Predictions { node: vec![vec![1.0, 0.0], vec![0.0, 1.0]], edge: vec![[0.0, 1.0]] };
        let mut rng = substream(5, "rev", &[]);
        let out = reverse_step(&noisy, &pred, &s, &mut rng).unwrap();
        assert_eq!(out, NoisySample { t: 0, x: vec![0, 1], e: vec![1] });
    }

    #[test]
    fn reverse_step_joint_law_is_product() {
        let m = [0.3, 0.7];
        let s = Sched::cosine(10, &m, [0.6, 0.4]).unwrap();
        let noisy = NoisySample { t: 6, x: vec![0, 1], e: vec![0] };
        let pred = Predictions { node: vec![vec![0.8, 0.2], vec![0.35, 0.65]], edge: vec![[0.25, 0.75]] };
        let p0 = posterior_step(0, &pred.node[0], 6, &s, StateKind::Node).unwrap();
        let p1 = posterior_step(1, &pred.node[1], 6, &s, StateKind::Node).unwrap();
        let pe = posterior_step(0, &pred.edge[0], 6, &s, StateKind::Edge).unwrap();
        let draws = 40_000;
        let mut counts = [0usize; 8];
        for seed in 0..draws {
            let mut rng = substream(seed, "joint", &[]);
            let out = reverse_step(&noisy, &pred, &s, &mut rng).unwrap();
            assert_eq!(out.t, 5);
            counts[out.x[0] * 4 + out.x[1] * 2 + usize::from(out.e[0])] += 1;
        }
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    let p = p0[a] * p1[b] * pe[c];
                    let got = counts[a * 4 + b * 2 + c] as f64;
                    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
                    assert!((got - p * draws as f64).abs() <= 4.0 * sigma + 1.0);
                }
            }
        }
    }

    #[test]
    fn frozen_ids_are_kept() {
        let mut s = Sched::cosine(10, &[1.0; 6], [0.5, 0.5]).unwrap();
        s.freeze_node_ids = true;
        let sample = triangle_sample([1, 3, 5], 6);
        let mut rng = substream(9, "frozen", &[]);
        for t in 1..=10 {
            assert_eq!(forward_noise(&sample, t, &s, &mut rng).x, vec![1, 3, 5]);
        }
    }

    #[test]
    fn pair_indexing() {
        let k = 6;
        for (idx, (i, j)) in pairs(k).enumerate() {
            assert_eq!(pair_index(i, j, k), idx);
        }
        assert_eq!(pairs(k).count(), num_pairs(k));
    }

    #[test]
    fn prior_draws_skip_zero_mass() {
        let s = Sched::cosine(3, &[0.0, 1.0, 0.0, 1.0, 0.0], [0.0, 1.0]).unwrap();
        let mut rng = substream(4, "prior", &[]);
        for _ in 0..2000 {
            let x = s.draw_prior(StateKind::Node, &mut rng);
            assert!(x == 1 || x == 3);
            assert_eq!(s.draw_prior(StateKind::Edge, &mut rng), 1);
        }
    }
}
