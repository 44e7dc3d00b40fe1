//! Forward pass, cross-entropy loss and the hand-written reverse pass.
//!
//! Architecture, per noisy subgraph with `k` nodes:
//!
//! ```text
//! h0_i      = embed[x_i] + W_t phi(t/T) + b_t
//! a_i       = mean_{j ~ i} h_j            (over pairs currently present)
//! g         = mean_j h_j
//! h'_i      = h_i + tanh(W_s h_i + W_n a_i + W_g g + b)     (L rounds)
//! node_i    = softmax(W_o h_i + b_o)
//! u_ij      = W_src h_i + W_dst h_j + W_p (h_i * h_j) + w_e e_ij + b_e
//! edge_ij   = softmax(U (tanh u_ij + tanh u_ji) + c)
//! ```
//!
//! Every operation is either per-node, a symmetric reduction over nodes, or
//! symmetric in the pair, so the network is permutation equivariant.

use rayon::prelude::*;

use super::{DenoiserParams, Layout};
use crate::diffusion::{num_pairs, pairs, NoiseSchedule, NoisySample, Predictions};
use crate::sampling::SubgraphSample;
use crate::scalar::Scalar;

/// Gradients share the parameter layout.
pub type Gradient<F> = DenoiserParams<F>;

const PROB_FLOOR: f64 = 1e-30;

#[inline]
fn matvec_acc<F: Scalar>(w: &[F], cols: usize, x: &[F], out: &mut [F]) {
    for (row, o) in w.chunks_exact(cols).zip(out.iter_mut()) {
        let mut acc = F::zero();
        for (&a, &b) in row.iter().zip(x) {
            acc = acc + a * b;
        }
        *o = *o + acc;
    }
}

#[inline]
fn matvec_t_acc<F: Scalar>(w: &[F], cols: usize, g: &[F], out: &mut [F]) {
    for (row, &gr) in w.chunks_exact(cols).zip(g) {
        if gr == F::zero() {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(row) {
            *o = *o + a * gr;
        }
    }
}

#[inline]
fn outer_acc<F: Scalar>(dw: &mut [F], cols: usize, g: &[F], x: &[F]) {
    for (row, &gr) in dw.chunks_exact_mut(cols).zip(g) {
        if gr == F::zero() {
            continue;
        }
        for (d, &b) in row.iter_mut().zip(x) {
            *d = *d + gr * b;
        }
    }
}

#[inline]
fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut out: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: F = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v = *v / total);
    out
}

fn log_sum_exp<F: Scalar>(logits: &[F]) -> F {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<F>().ln()
}

pub(crate) fn time_features<F: Scalar>(t: usize, steps: usize, count: usize) -> Vec<F> {
    let tau = t as f64 / steps as f64;
    (0..count / 2)
        .flat_map(|j| {
            let w = std::f64::consts::FRAC_PI_2 * f64::from(1u32 << j);
            [F::of((w * tau).sin()), F::of((w * tau).cos())]
        })
        .collect()
}

/// Activations kept for the reverse pass.
struct Cache<F> {
    k: usize,
    phi: Vec<F>,
    nbrs: Vec<Vec<usize>>,
    /// `hs[l]` is the `k x h` state entering round `l`; `hs[L]` is final.
    hs: Vec<Vec<F>>,
    aggs: Vec<Vec<F>>,
    globs: Vec<Vec<F>>,
    acts: Vec<Vec<F>>,
    node_logits: Vec<F>,
    prods: Vec<F>,
    z_fwd: Vec<F>,
    z_rev: Vec<F>,
    edge_logits: Vec<[F; 2]>,
}

fn forward<F: Scalar>(p: &DenoiserParams<F>, noisy: &NoisySample, steps: usize) -> Cache<F> {
    let d = *p.dims();
    let lay: &Layout = &p.layout;
    let w = &p.data;
    let (n, h, f) = (d.n, d.hidden, d.time_features);
    let k = noisy.k();
    assert!(noisy.x.iter().all(|&x| x < n), "node state out of range");

    let phi = time_features::<F>(noisy.t, steps, f);
    let mut temb = w[lay.time_b..lay.time_b + h].to_vec();
    matvec_acc(&w[lay.time_w..lay.time_w + h * f], f, &phi, &mut temb);

    let mut h0 = vec![F::zero(); k * h];
    for (i, row) in h0.chunks_exact_mut(h).enumerate() {
        let e = &w[lay.node_embed + noisy.x[i] * h..lay.node_embed + (noisy.x[i] + 1) * h];
        for ((r, &a), &b) in row.iter_mut().zip(e).zip(&temb) {
            *r = a + b;
        }
    }

    let mut nbrs = vec![Vec::new(); k];
    for ((i, j), &s) in pairs(k).zip(&noisy.e) {
        if s == 1 {
            nbrs[i].push(j);
            nbrs[j].push(i);
        }
    }

    let kf = F::of_usize(k.max(1));
    let mut hs = vec![h0];
    let (mut aggs, mut globs, mut acts) = (Vec::new(), Vec::new(), Vec::new());
    for lb in &lay.layers {
        let cur = hs.last().expect("state");
        let mut agg = vec![F::zero(); k * h];
        for i in 0..k {
            if nbrs[i].is_empty() {
                continue;
            }
            let inv = F::one() / F::of_usize(nbrs[i].len());
            let row = &mut agg[i * h..(i + 1) * h];
            for &j in &nbrs[i] {
                for (a, &v) in row.iter_mut().zip(&cur[j * h..(j + 1) * h]) {
                    *a = *a + v * inv;
                }
            }
        }
        let mut glob = vec![F::zero(); h];
        for row in cur.chunks_exact(h) {
            add_into(&mut glob, row);
        }
        glob.iter_mut().for_each(|v| *v = *v / kf);
        let mut shared = w[lb.bias..lb.bias + h].to_vec();
        matvec_acc(&w[lb.w_glob..lb.w_glob + h * h], h, &glob, &mut shared);

        let mut act = vec![F::zero(); k * h];
        let mut next = cur.clone();
        for i in 0..k {
            let mut pre = shared.clone();
            matvec_acc(&w[lb.w_self..lb.w_self + h * h], h, &cur[i * h..(i + 1) * h], &mut pre);
            matvec_acc(&w[lb.w_nbr..lb.w_nbr + h * h], h, &agg[i * h..(i + 1) * h], &mut pre);
            for c in 0..h {
                let a = pre[c].tanh();
                act[i * h + c] = a;
                next[i * h + c] = next[i * h + c] + a;
            }
        }
        aggs.push(agg);
        globs.push(glob);
        acts.push(act);
        hs.push(next);
    }
    let hl = hs.last().expect("state");

    let mut node_logits = vec![F::zero(); k * n];
    for i in 0..k {
        let out = &mut node_logits[i * n..(i + 1) * n];
        out.copy_from_slice(&w[lay.node_b..lay.node_b + n]);
        matvec_acc(&w[lay.node_w..lay.node_w + n * h], h, &hl[i * h..(i + 1) * h], out);
    }

    let mut src = vec![F::zero(); k * h];
    let mut dst = vec![F::zero(); k * h];
    for i in 0..k {
        let hi = &hl[i * h..(i + 1) * h];
        matvec_acc(&w[lay.edge_src..lay.edge_src + h * h], h, hi, &mut src[i * h..(i + 1) * h]);
        matvec_acc(&w[lay.edge_dst..lay.edge_dst + h * h], h, hi, &mut dst[i * h..(i + 1) * h]);
    }
    let np = num_pairs(k);
    let mut prods = vec![F::zero(); np * h];
    let mut z_fwd = vec![F::zero(); np * h];
    let mut z_rev = vec![F::zero(); np * h];
    let mut edge_logits = Vec::with_capacity(np);
    let w_state = &w[lay.edge_state..lay.edge_state + h];
    let b_edge = &w[lay.edge_bias..lay.edge_bias + h];
    let u_out = &w[lay.edge_out_w..lay.edge_out_w + 2 * h];
    let c_out = &w[lay.edge_out_b..lay.edge_out_b + 2];
    let mut mixed = vec![F::zero(); h];
    for (pi, (i, j)) in pairs(k).enumerate() {
        let (hi, hj) = (&hl[i * h..(i + 1) * h], &hl[j * h..(j + 1) * h]);
        let prod = &mut prods[pi * h..(pi + 1) * h];
        for c in 0..h {
            prod[c] = hi[c] * hj[c];
        }
        let state = F::of(f64::from(noisy.e[pi]));
        for c in 0..h {
            mixed[c] = w_state[c] * state + b_edge[c];
        }
        matvec_acc(&w[lay.edge_prod..lay.edge_prod + h * h], h, prod, &mut mixed);
        let mut logits = [c_out[0], c_out[1]];
        for c in 0..h {
            let zf = (mixed[c] + src[i * h + c] + dst[j * h + c]).tanh();
            let zr = (mixed[c] + src[j * h + c] + dst[i * h + c]).tanh();
            z_fwd[pi * h + c] = zf;
            z_rev[pi * h + c] = zr;
            let s = zf + zr;
            logits[0] = logits[0] + u_out[c] * s;
            logits[1] = logits[1] + u_out[h + c] * s;
        }
        edge_logits.push(logits);
    }

    Cache { k, phi, nbrs, hs, aggs, globs, acts, node_logits, prods, z_fwd, z_rev, edge_logits }
}

/// Per-node and per-pair categorical predictions for a noisy sample.
pub fn predict<F: Scalar>(params: &DenoiserParams<F>, noisy: &NoisySample, sched: &NoiseSchedule<F>) -> Predictions<F> {
    let n = params.dims().n;
    let cache = forward(params, noisy, sched.steps());
    Predictions {
        node: cache.node_logits.chunks_exact(n).map(softmax).collect(),
        edge: cache
            .edge_logits
            .iter()
            .map(|l| {
                let p = softmax(l);
                [p[0], p[1]]
            })
            .collect(),
    }
}

/// Summed cross-entropy of node and pair predictions against `clean`,
/// with the pair term weighted by `lambda`. Probabilities are floored
/// before the log.
pub fn loss<F: Scalar>(pred: &Predictions<F>, clean: &SubgraphSample, lambda: F) -> F {
    let floor = F::of(PROB_FLOOR);
    let target = NoisySample::clean(clean);
    assert_eq!(pred.node.len(), target.x.len());
    assert_eq!(pred.edge.len(), target.e.len());
    let nodes: F = pred.node.iter().zip(&target.x).map(|(p, &x)| -p[x].max(floor).ln()).sum();
    let edges: F = pred
        .edge
        .iter()
        .zip(&target.e)
        .map(|(p, &e)| -p[usize::from(e)].max(floor).ln())
        .sum();
    nodes + lambda * edges
}

/// Loss of one sample, accumulating `scale * dloss/dparams` into `g`.
fn loss_and_grad<F: Scalar>(
    p: &DenoiserParams<F>,
    noisy: &NoisySample,
    clean: &SubgraphSample,
    steps: usize,
    lambda: F,
    scale: F,
    g: &mut [F],
) -> F {
    let d = *p.dims();
    let lay = &p.layout;
    let w = &p.data;
    let (n, h, f) = (d.n, d.hidden, d.time_features);
    let c = forward(p, noisy, steps);
    let k = c.k;
    let target = NoisySample::clean(clean);
    assert_eq!(target.x.len(), k, "clean and noisy sizes differ");
    let hl = c.hs.last().expect("state");
    let mut dh = vec![F::zero(); k * h];
    let mut total = F::zero();

    // node head
    for i in 0..k {
        let logits = &c.node_logits[i * n..(i + 1) * n];
        let y = target.x[i];
        total = total + log_sum_exp(logits) - logits[y];
        let mut dz = softmax(logits);
        dz[y] = dz[y] - F::one();
        dz.iter_mut().for_each(|v| *v = *v * scale);
        let hi = &hl[i * h..(i + 1) * h];
        outer_acc(&mut g[lay.node_w..lay.node_w + n * h], h, &dz, hi);
        add_into(&mut g[lay.node_b..lay.node_b + n], &dz);
        matvec_t_acc(&w[lay.node_w..lay.node_w + n * h], h, &dz, &mut dh[i * h..(i + 1) * h]);
    }

    // edge head
    let mut dsrc = vec![F::zero(); k * h];
    let mut ddst = vec![F::zero(); k * h];
    let mut du = vec![F::zero(); h];
    let mut dprod = vec![F::zero(); h];
    let u_out = &w[lay.edge_out_w..lay.edge_out_w + 2 * h];
    let mut edge_total = F::zero();
    for (pi, (i, j)) in pairs(k).enumerate() {
        let logits = &c.edge_logits[pi];
        let y = usize::from(target.e[pi]);
        edge_total = edge_total + log_sum_exp(logits) - logits[y];
        let mut dl = softmax(logits);
        dl[y] = dl[y] - F::one();
        let dl = [dl[0] * lambda * scale, dl[1] * lambda * scale];
        let zf = &c.z_fwd[pi * h..(pi + 1) * h];
        let zr = &c.z_rev[pi * h..(pi + 1) * h];
        {
            let gw = &mut g[lay.edge_out_w..lay.edge_out_w + 2 * h];
            for cc in 0..h {
                let s = zf[cc] + zr[cc];
                gw[cc] = gw[cc] + dl[0] * s;
                gw[h + cc] = gw[h + cc] + dl[1] * s;
            }
        }
        g[lay.edge_out_b] = g[lay.edge_out_b] + dl[0];
        g[lay.edge_out_b + 1] = g[lay.edge_out_b + 1] + dl[1];
        let state = F::of(f64::from(noisy.e[pi]));
        for cc in 0..h {
            let ds = u_out[cc] * dl[0] + u_out[h + cc] * dl[1];
            let duf = ds * (F::one() - zf[cc] * zf[cc]);
            let dur = ds * (F::one() - zr[cc] * zr[cc]);
            du[cc] = duf + dur;
            dsrc[i * h + cc] = dsrc[i * h + cc] + duf;
            ddst[j * h + cc] = ddst[j * h + cc] + duf;
            dsrc[j * h + cc] = dsrc[j * h + cc] + dur;
            ddst[i * h + cc] = ddst[i * h + cc] + dur;
            g[lay.edge_state + cc] = g[lay.edge_state + cc] + du[cc] * state;
            g[lay.edge_bias + cc] = g[lay.edge_bias + cc] + du[cc];
        }
        let prod = &c.prods[pi * h..(pi + 1) * h];
        outer_acc(&mut g[lay.edge_prod..lay.edge_prod + h * h], h, &du, prod);
        dprod.iter_mut().for_each(|v| *v = F::zero());
        matvec_t_acc(&w[lay.edge_prod..lay.edge_prod + h * h], h, &du, &mut dprod);
        for cc in 0..h {
            let (hi, hj) = (hl[i * h + cc], hl[j * h + cc]);
            dh[i * h + cc] = dh[i * h + cc] + dprod[cc] * hj;
            dh[j * h + cc] = dh[j * h + cc] + dprod[cc] * hi;
        }
    }
    total = total + lambda * edge_total;
    for i in 0..k {
        let hi = &hl[i * h..(i + 1) * h];
        let (ds, dd) = (&dsrc[i * h..(i + 1) * h], &ddst[i * h..(i + 1) * h]);
        outer_acc(&mut g[lay.edge_src..lay.edge_src + h * h], h, ds, hi);
        outer_acc(&mut g[lay.edge_dst..lay.edge_dst + h * h], h, dd, hi);
        let row = &mut dh[i * h..(i + 1) * h];
        matvec_t_acc(&w[lay.edge_src..lay.edge_src + h * h], h, ds, row);
        matvec_t_acc(&w[lay.edge_dst..lay.edge_dst + h * h], h, dd, row);
    }

    // message-passing rounds, last to first; dh holds d/d(output of round l)
    let kf = F::of_usize(k.max(1));
    for (l, lb) in lay.layers.iter().enumerate().rev() {
        let (cur, agg, glob, act) = (&c.hs[l], &c.aggs[l], &c.globs[l], &c.acts[l]);
        let mut dprev = dh.clone();
        let mut dshared = vec![F::zero(); h];
        let mut dpre = vec![F::zero(); h];
        for i in 0..k {
            for cc in 0..h {
                let a = act[i * h + cc];
                dpre[cc] = dh[i * h + cc] * (F::one() - a * a);
            }
            add_into(&mut dshared, &dpre);
            outer_acc(&mut g[lb.w_self..lb.w_self + h * h], h, &dpre, &cur[i * h..(i + 1) * h]);
            outer_acc(&mut g[lb.w_nbr..lb.w_nbr + h * h], h, &dpre, &agg[i * h..(i + 1) * h]);
            matvec_t_acc(&w[lb.w_self..lb.w_self + h * h], h, &dpre, &mut dprev[i * h..(i + 1) * h]);
            if !c.nbrs[i].is_empty() {
                let mut dagg = vec![F::zero(); h];
                matvec_t_acc(&w[lb.w_nbr..lb.w_nbr + h * h], h, &dpre, &mut dagg);
                let inv = F::one() / F::of_usize(c.nbrs[i].len());
                for &j in &c.nbrs[i] {
                    for cc in 0..h {
                        dprev[j * h + cc] = dprev[j * h + cc] + dagg[cc] * inv;
                    }
                }
            }
        }
        add_into(&mut g[lb.bias..lb.bias + h], &dshared);
        outer_acc(&mut g[lb.w_glob..lb.w_glob + h * h], h, &dshared, glob);
        let mut dglob = vec![F::zero(); h];
        matvec_t_acc(&w[lb.w_glob..lb.w_glob + h * h], h, &dshared, &mut dglob);
        for row in dprev.chunks_exact_mut(h) {
            for (r, &v) in row.iter_mut().zip(&dglob) {
                *r = *r + v / kf;
            }
        }
        dh = dprev;
    }

    // input embedding and time encoder
    let mut dtemb = vec![F::zero(); h];
    for i in 0..k {
        let row = &dh[i * h..(i + 1) * h];
        let off = lay.node_embed + noisy.x[i] * h;
        add_into(&mut g[off..off + h], row);
        add_into(&mut dtemb, row);
    }
    outer_acc(&mut g[lay.time_w..lay.time_w + h * f], f, &dtemb, &c.phi);
    add_into(&mut g[lay.time_b..lay.time_b + h], &dtemb);

    total
}

/// Mean batch loss and its exact gradient. Elements are evaluated in
/// parallel and reduced in index order.
pub fn grad<F: Scalar>(
    params: &DenoiserParams<F>,
    batch: &[(NoisySample, &SubgraphSample)],
    sched: &NoiseSchedule<F>,
    lambda: F,
) -> (F, Gradient<F>) {
    assert!(!batch.is_empty(), "empty batch");
    let scale = F::one() / F::of_usize(batch.len());
    let steps = sched.steps();
    let parts: Vec<(F, Vec<F>)> = batch
        .par_iter()
        .map(|(noisy, clean)| {
            let mut g = vec![F::zero(); params.len()];
            let l = loss_and_grad(params, noisy, clean, steps, lambda, scale, &mut g);
            (l, g)
        })
        .collect();
    let mut out = DenoiserParams::zeros(*params.dims());
    let mut total = F::zero();
    for (l, g) in parts {
        total = total + l;
        add_into(&mut out.data, &g);
    }
    (total * scale, out)
}
