//! Forward evaluation: presence scores, message-passing sweeps, Q samples.

use crate::error::{Error, Result};
use crate::linalg::{relu, Matrix};
use crate::rng;
use crate::samples::SampleSet;

use super::view::{ActionBinding, StateView};
use super::{PresenceMatrix, QEstimate, QNetParams};

/// How presence-net inputs index into the stored samples of each pair.
#[derive(Clone, Copy)]
pub(crate) enum SampleIndexer {
    /// k-th stored sample; used by the stand-alone inference operation.
    Sequential,
    /// Seed-hashed draw; used by evaluation contexts so that comparisons
    /// within one state share common random numbers.
    Hashed { seed: u64 },
}

impl SampleIndexer {
    fn index(&self, a: u32, b: u32, k: usize, len: usize) -> usize {
        match self {
            SampleIndexer::Sequential => k % len,
            SampleIndexer::Hashed { seed } => {
                (rng::mix(*seed, &[0x70, a as u64, b as u64, k as u64]) % len as u64) as usize
            }
        }
    }
}

/// Presence probabilities plus the intermediates needed to backpropagate
/// through them. `pt` is the transpose of `p` (messages into node i are
/// weighted by column i of `p`).
pub struct PresenceTape {
    pub n: usize,
    pub m: usize,
    pub uniform: bool,
    pub p: Vec<f64>,
    pub g: Vec<f64>,
    pub(crate) pt: Vec<f64>,
    /// n*n*m*3 presence-net inputs (empty unless kept for training).
    pub(crate) u: Vec<f64>,
    /// n*n*m*p_hidden hidden activations (empty unless kept for training).
    pub(crate) h: Vec<f64>,
}

impl PresenceTape {
    pub fn matrix(&self) -> PresenceMatrix {
        PresenceMatrix { n: self.n, p: self.p.clone(), g: self.g.clone() }
    }
}

/// Row-wise softmax with temperature over the off-diagonal entries.
/// Rows are shifted by their maximum first, which leaves the result
/// mathematically unchanged.
pub(crate) fn presence_softmax(g: &[f64], n: usize, tau: f64, p: &mut [f64]) {
    for i in 0..n {
        let row = &g[i * n..(i + 1) * n];
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if j != i && v > max {
                max = v;
            }
        }
        let mut sum = 0.0;
        for j in 0..n {
            if j != i {
                let e = ((row[j] - max) / tau).exp();
                p[i * n + j] = e;
                sum += e;
            } else {
                p[i * n + j] = 0.0;
            }
        }
        if sum > 0.0 {
            for j in 0..n {
                if j != i {
                    p[i * n + j] /= sum;
                }
            }
        }
    }
}

/// Row-wise presence softmax over off-diagonal entries, exposed for contract
/// checks: returns the n*n probability matrix for raw scores `g`.
pub fn softmax_rows(g: &[f64], n: usize, tau: f64) -> Vec<f64> {
    assert_eq!(g.len(), n * n);
    let mut p = vec![0.0; n * n];
    presence_softmax(g, n, tau, &mut p);
    p
}

/// Compute presence probabilities for a view. With `keep_tape`, the sampled
/// inputs and hidden activations are retained for the backward pass.
pub(crate) fn build_presence(
    view: &StateView<'_>,
    params: &QNetParams,
    indexer: SampleIndexer,
    keep_tape: bool,
) -> Result<PresenceTape> {
    let n = view.n();
    let m = params.arch.m_presence;
    let ph = params.arch.p_hidden;
    let uniform = params.arch.flags.uniform_presence;

    let mut g = vec![0.0; n * n];
    let mut p = vec![0.0; n * n];
    let mut u_tape = Vec::new();
    let mut h_tape = Vec::new();

    if uniform {
        if n > 1 {
            let w = 1.0 / (n as f64 - 1.0);
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        p[i * n + j] = w;
                    }
                }
            }
        }
    } else if n > 1 {
        if keep_tape {
            u_tape = vec![0.0; n * n * m * 3];
            h_tape = vec![0.0; n * n * m * ph];
        }
        let mut z = vec![0.0; ph];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let samples = view.tt(i, j).ok_or_else(|| {
                    Error::DimensionMismatch(format!(
                        "missing pair samples for nodes {} -> {}",
                        view.ids[i], view.ids[j]
                    ))
                })?;
                let mut acc = 0.0;
                for k in 0..m {
                    let idx = indexer.index(view.ids[i], view.ids[j], k, samples.len());
                    let u = [
                        samples.get(idx) / view.time_scale,
                        view.node_scalar[i],
                        view.node_scalar[j],
                    ];
                    params.p2.matvec(&u, &mut z);
                    let mut dot = 0.0;
                    for (c, zc) in z.iter().enumerate() {
                        let hc = relu(*zc);
                        dot += params.p1.at(0, c) * hc;
                        if keep_tape {
                            h_tape[((i * n + j) * m + k) * ph + c] = hc;
                        }
                    }
                    if keep_tape {
                        let base = ((i * n + j) * m + k) * 3;
                        u_tape[base..base + 3].copy_from_slice(&u);
                    }
                    acc += dot;
                }
                g[i * n + j] = acc / m as f64;
            }
        }
        presence_softmax(&g, n, params.arch.tau, &mut p);
    }

    let mut pt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            pt[i * n + j] = p[j * n + i];
        }
    }
    Ok(PresenceTape { n, m, uniform, p, g, pt, u: u_tape, h: h_tape })
}

/// Per-sweep intermediates of one embedding layer.
pub(crate) struct LayerTape {
    /// acts[t]: activations after sweep t (acts[0] is the zero init), n*d.
    pub acts: Vec<Vec<f64>>,
    /// msgs[t-1]: aggregated messages feeding sweep t, n*d.
    pub msgs: Vec<Vec<f64>>,
    /// pres[t-1]: pre-activations of sweep t, n*d.
    pub pres: Vec<Vec<f64>>,
}

/// Run `iters` synchronous fixed-point sweeps of one embedding layer:
/// act_i = relu(W_msg * sum_j p_ji act_j + W_in * x_i), starting from zero.
pub(crate) fn run_layer(
    pt: &[f64],
    n: usize,
    w_msg: &Matrix,
    w_in: &Matrix,
    inputs: &[f64],
    iters: usize,
    label: &str,
    want_tape: bool,
) -> Result<(Vec<f64>, Option<LayerTape>)> {
    let d = w_msg.rows;
    let in_dim = w_in.cols;
    if w_in.rows != d || w_msg.cols != d {
        return Err(Error::DimensionMismatch(format!(
            "{label}: message map {}x{}, input map {}x{}",
            w_msg.rows, w_msg.cols, w_in.rows, w_in.cols
        )));
    }
    if inputs.len() != n * in_dim {
        return Err(Error::DimensionMismatch(format!(
            "{label}: {} features for {n} nodes of width {in_dim}",
            inputs.len()
        )));
    }

    let mut tape = want_tape.then(|| LayerTape {
        acts: vec![vec![0.0; n * d]],
        msgs: Vec::with_capacity(iters),
        pres: Vec::with_capacity(iters),
    });

    let mut acts = vec![0.0; n * d];
    let mut next = vec![0.0; n * d];
    let mut msg = vec![0.0; n * d];
    for t in 1..=iters {
        msg.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            for j in 0..n {
                let coef = pt[i * n + j];
                if coef != 0.0 {
                    let src = &acts[j * d..(j + 1) * d];
                    let dst = &mut msg[i * d..(i + 1) * d];
                    for (dv, sv) in dst.iter_mut().zip(src) {
                        *dv += coef * sv;
                    }
                }
            }
        }
        for i in 0..n {
            let pre = &mut next[i * d..(i + 1) * d];
            w_msg.matvec(&msg[i * d..(i + 1) * d], pre);
            w_in.matvec_add(&inputs[i * in_dim..(i + 1) * in_dim], pre);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{label} sweep {t}")));
        }
        if let Some(tape) = tape.as_mut() {
            tape.msgs.push(msg.clone());
            tape.pres.push(next.clone());
        }
        for v in next.iter_mut() {
            *v = relu(*v);
        }
        std::mem::swap(&mut acts, &mut next);
        if let Some(tape) = tape.as_mut() {
            tape.acts.push(acts.clone());
        }
    }
    Ok((acts, tape))
}

/// One fixed-point embedding layer over a presence matrix, exposed for
/// direct use and testing. Features are per-node input vectors.
pub fn s2v_layer(
    features: &[Vec<f64>],
    p: &PresenceMatrix,
    w_in: &Matrix,
    w_msg: &Matrix,
    iters: usize,
) -> Result<Vec<Vec<f64>>> {
    if iters < 1 {
        return Err(Error::Validation("iteration count must be at least 1".into()));
    }
    let n = features.len();
    if p.n != n {
        return Err(Error::DimensionMismatch(format!(
            "presence matrix is {}x{} but there are {n} nodes",
            p.n, p.n
        )));
    }
    let in_dim = w_in.cols;
    let mut flat = vec![0.0; n * in_dim];
    for (i, f) in features.iter().enumerate() {
        if f.len() != in_dim {
            return Err(Error::DimensionMismatch(format!(
                "node {i} feature width {} vs input map width {in_dim}",
                f.len()
            )));
        }
        flat[i * in_dim..(i + 1) * in_dim].copy_from_slice(f);
    }
    let mut pt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            pt[i * n + j] = p.p[j * n + i];
        }
    }
    let d = w_msg.rows;
    let (acts, _) = run_layer(&pt, n, w_msg, w_in, &flat, iters, "embedding layer", false)?;
    Ok((0..n).map(|i| acts[i * d..(i + 1) * d].to_vec()).collect())
}

/// Intermediates of one full Q evaluation (all N samples).
pub(crate) struct SampleTape {
    pub x: Vec<f64>,
    pub layer1: Option<LayerTape>,
    pub concat: Vec<f64>,
    pub layer2: LayerTape,
    pub sum_emb: Vec<f64>,
}

pub(crate) struct ForwardTape {
    pub samples: Vec<SampleTape>,
}

/// Full sampled forward pass. `draw` produces the completion-time sample for
/// an assigned node at outer iteration l.
pub(crate) fn q_forward(
    view: &StateView<'_>,
    binding: &ActionBinding<'_>,
    presence: &PresenceTape,
    params: &QNetParams,
    draw: &mut dyn FnMut(u32, u32, usize, &SampleSet) -> f64,
    want_tape: bool,
) -> Result<(QEstimate, Option<ForwardTape>)> {
    params.validate()?;
    let n = view.n();
    let arch = &params.arch;
    if view.feat_dim != arch.feat_dim {
        return Err(Error::DimensionMismatch(format!(
            "view feature width {} vs network width {}",
            view.feat_dim, arch.feat_dim
        )));
    }
    if binding.assigned.len() != n {
        return Err(Error::DimensionMismatch("action binding size".into()));
    }
    if n == 0 {
        return Ok((
            QEstimate { value: 0.0, per_sample: vec![0.0; arch.n_samples] },
            want_tape.then(|| ForwardTape { samples: Vec::new() }),
        ));
    }

    let d = arch.d;
    let concat_dim = arch.concat_dim();
    let mut per_sample = Vec::with_capacity(arch.n_samples);
    let mut tapes = Vec::new();

    for l in 0..arch.n_samples {
        let mut x = view.base_features.clone();
        for (i, slot) in binding.assigned.iter().enumerate() {
            if let Some((robot, samples)) = slot {
                x[i * arch.feat_dim] = draw(*robot, view.ids[i], l, samples) / view.time_scale;
            }
        }

        let (emb, layer1) = if arch.flags.single_layer {
            (Vec::new(), None)
        } else {
            let (acts, tape) = run_layer(
                &presence.pt,
                n,
                &params.e3,
                &params.e4,
                &x,
                arch.t1,
                "distance layer",
                want_tape,
            )?;
            (acts, tape)
        };

        let mut concat = vec![0.0; n * concat_dim];
        for i in 0..n {
            if arch.flags.single_layer {
                concat[i * concat_dim..i * concat_dim + arch.feat_dim]
                    .copy_from_slice(&x[i * arch.feat_dim..(i + 1) * arch.feat_dim]);
            } else {
                concat[i * concat_dim..i * concat_dim + d].copy_from_slice(&emb[i * d..(i + 1) * d]);
            }
            concat[i * concat_dim + concat_dim - 1] = view.node_scalar[i];
        }

        let (value_emb, layer2) = run_layer(
            &presence.pt,
            n,
            &params.e5,
            &params.e6,
            &concat,
            arch.t2,
            "value layer",
            want_tape,
        )?;

        let mut sum_emb = vec![0.0; d];
        for i in 0..n {
            for (s, v) in sum_emb.iter_mut().zip(&value_emb[i * d..(i + 1) * d]) {
                *s += v;
            }
        }
        let q: f64 = params.e7.row(0).iter().zip(&sum_emb).map(|(a, b)| a * b).sum();
        per_sample.push(q);
        if want_tape {
            tapes.push(SampleTape { x, layer1, concat, layer2: layer2.unwrap(), sum_emb });
        }
    }

    let value = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("q estimate".into()));
    }
    Ok((
        QEstimate { value, per_sample },
        want_tape.then(|| ForwardTape { samples: tapes }),
    ))
}
