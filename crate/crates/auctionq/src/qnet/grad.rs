//! Exact gradients of the squared Bellman residual.
//!
//! The forward pass is unrolled (both embedding layers run a fixed number of
//! sweeps from a zero init), so the backward pass walks the sweeps in
//! reverse, accumulating into every weight matrix. Sampled completion times
//! are data: gradients never flow into the draws. The presence matrix is
//! differentiated through its softmax into the presence net when joint
//! training is enabled; otherwise it is treated as a fixed per-evaluation
//! input.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;
use crate::samples::SampleSet;

use super::forward::{build_presence, q_forward, LayerTape, SampleIndexer};
use super::view::{ActionBinding, StateView};
use super::QNetParams;

/// Gradients for every trainable matrix, in the shape of `QNetParams`.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub p1: Matrix,
    pub p2: Matrix,
    pub e3: Matrix,
    pub e4: Matrix,
    pub e5: Matrix,
    pub e6: Matrix,
    pub e7: Matrix,
}

impl ParamGrads {
    pub fn zeros_like(params: &QNetParams) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows, m.cols);
        ParamGrads {
            p1: z(&params.p1),
            p2: z(&params.p2),
            e3: z(&params.e3),
            e4: z(&params.e4),
            e5: z(&params.e5),
            e6: z(&params.e6),
            e7: z(&params.e7),
        }
    }

    pub fn blocks(&self) -> [(&'static str, &Matrix); 7] {
        [
            ("p1", &self.p1),
            ("p2", &self.p2),
            ("e3", &self.e3),
            ("e4", &self.e4),
            ("e5", &self.e5),
            ("e6", &self.e6),
            ("e7", &self.e7),
        ]
    }

    pub fn global_norm(&self) -> f64 {
        self.blocks().iter().map(|(_, m)| m.sq_norm()).sum::<f64>().sqrt()
    }

    /// Scale so the global norm does not exceed `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for m in [
                &mut self.p1,
                &mut self.p2,
                &mut self.e3,
                &mut self.e4,
                &mut self.e5,
                &mut self.e6,
                &mut self.e7,
            ] {
                m.scale(s);
            }
        }
    }

    /// params <- params - lr * grads
    pub fn apply_sgd(&self, params: &mut QNetParams, lr: f64) {
        params.p1.add_scaled(-lr, &self.p1);
        params.p2.add_scaled(-lr, &self.p2);
        params.e3.add_scaled(-lr, &self.e3);
        params.e4.add_scaled(-lr, &self.e4);
        params.e5.add_scaled(-lr, &self.e5);
        params.e6.add_scaled(-lr, &self.e6);
        params.e7.add_scaled(-lr, &self.e7);
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, m)| m.is_finite())
    }
}

/// One fitting example: a (state view, bound action) pair, the seed that
/// freezes its sample draws, and the regression target.
pub struct BatchItem<'a> {
    pub view: StateView<'a>,
    pub binding: ActionBinding<'a>,
    pub seed: u64,
    pub target: f64,
}

fn drawer(seed: u64) -> impl FnMut(u32, u32, usize, &SampleSet) -> f64 {
    move |robot: u32, task: u32, l: usize, set: &SampleSet| {
        let idx = rng::mix(seed, &[0xa5, robot as u64, task as u64, l as u64, 0]);
        set.get((idx % set.len() as u64) as usize)
    }
}

/// Mean squared residual over the batch, without gradients. Uses the same
/// frozen draws as `loss_and_gradients`, so finite differences of this
/// function check those gradients.
pub fn loss_only(items: &[BatchItem<'_>], params: &QNetParams) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let mut loss = 0.0;
    for item in items {
        let presence =
            build_presence(&item.view, params, SampleIndexer::Hashed { seed: item.seed }, false)?;
        let mut draw = drawer(item.seed);
        let (est, _) = q_forward(&item.view, &item.binding, &presence, params, &mut draw, false)?;
        let r = est.value - item.target;
        loss += r * r;
    }
    Ok(loss / items.len() as f64)
}

/// Mean squared residual over the batch and its exact gradients with respect
/// to every weight matrix.
pub fn loss_and_gradients(
    items: &[BatchItem<'_>],
    params: &QNetParams,
) -> Result<(f64, ParamGrads)> {
    if items.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    if items.iter().any(|it| !it.target.is_finite()) {
        return Err(Error::NonFinite("bellman target".into()));
    }
    params.validate()?;

    let mut grads = ParamGrads::zeros_like(params);
    let mut loss = 0.0;
    let b = items.len() as f64;
    let arch = params.arch;
    let d = arch.d;
    let concat_dim = if arch.flags.single_layer { arch.feat_dim + 1 } else { d + 1 };
    let track_presence = arch.flags.train_presence && !arch.flags.uniform_presence;

    for item in items {
        let n = item.view.n();
        let presence = build_presence(
            &item.view,
            params,
            SampleIndexer::Hashed { seed: item.seed },
            track_presence,
        )?;
        let mut draw = drawer(item.seed);
        let (est, tape) =
            q_forward(&item.view, &item.binding, &presence, params, &mut draw, true)?;
        let tape = tape.unwrap();

        let residual = est.value - item.target;
        loss += residual * residual / b;
        if n == 0 {
            continue;
        }
        // dL/dq_l, identical across the N samples.
        let dq = 2.0 * residual / (b * arch.n_samples as f64);
        let d_sum: Vec<f64> = params.e7.row(0).iter().map(|w| w * dq).collect();

        // dL/dp accumulated over samples and both layers, n x n row-major.
        let mut dp = vec![0.0; n * n];

        for st in &tape.samples {
            grads.e7.add_outer(dq, &[1.0], &st.sum_emb);

            // Every node's final value embedding receives d_sum.
            let mut dact = vec![0.0; n * d];
            for i in 0..n {
                dact[i * d..(i + 1) * d].copy_from_slice(&d_sum);
            }

            let mut dconcat = vec![0.0; n * concat_dim];
            backward_layer(
                &presence.pt,
                n,
                &params.e5,
                &params.e6,
                &st.layer2,
                &st.concat,
                concat_dim,
                &mut dact,
                &mut grads.e5,
                &mut grads.e6,
                &mut dconcat,
                &mut dp,
            );

            if !arch.flags.single_layer {
                // First d entries per node of the concat gradient belong to
                // the distance-layer output; the trailing scalar is data.
                let mut demb = vec![0.0; n * d];
                for i in 0..n {
                    demb[i * d..(i + 1) * d]
                        .copy_from_slice(&dconcat[i * concat_dim..i * concat_dim + d]);
                }
                let layer1 = st.layer1.as_ref().unwrap();
                let mut dx = vec![0.0; n * arch.feat_dim];
                backward_layer(
                    &presence.pt,
                    n,
                    &params.e3,
                    &params.e4,
                    layer1,
                    &st.x,
                    arch.feat_dim,
                    &mut demb,
                    &mut grads.e3,
                    &mut grads.e4,
                    &mut dx,
                    &mut dp,
                );
            }
        }

        if track_presence && n > 1 {
            backward_presence(&presence, params, &dp, &mut grads);
        }
    }

    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("loss or gradients".into()));
    }
    Ok((loss, grads))
}

/// Reverse the sweeps of one embedding layer.
///
/// `dact` enters as dL/d(activations after the final sweep) and is consumed.
/// `grad_msg`/`grad_in` accumulate the weight gradients, `dinput` the
/// gradient with respect to the per-node inputs (summed over sweeps, since
/// the input feeds every sweep), and `dp` the gradient with respect to the
/// presence entries (dp[j*n+i] pairs with the message weight p_ji).
#[allow(clippy::too_many_arguments)]
fn backward_layer(
    pt: &[f64],
    n: usize,
    w_msg: &Matrix,
    w_in: &Matrix,
    tape: &LayerTape,
    inputs: &[f64],
    in_dim: usize,
    dact: &mut [f64],
    grad_msg: &mut Matrix,
    grad_in: &mut Matrix,
    dinput: &mut [f64],
    dp: &mut [f64],
) {
    let d = w_msg.rows;
    let sweeps = tape.pres.len();
    let mut dmsg = vec![0.0; n * d];
    let mut dprev = vec![0.0; n * d];
    for t in (1..=sweeps).rev() {
        let pre = &tape.pres[t - 1];
        let msg = &tape.msgs[t - 1];
        let act_prev = &tape.acts[t - 1];

        // Through the relu: zero where the pre-activation was clamped.
        for (dv, pv) in dact.iter_mut().zip(pre.iter()) {
            if *pv <= 0.0 {
                *dv = 0.0;
            }
        }

        dmsg.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let dw_i = &dact[i * d..(i + 1) * d];
            grad_msg.add_outer(1.0, dw_i, &msg[i * d..(i + 1) * d]);
            grad_in.add_outer(1.0, dw_i, &inputs[i * in_dim..(i + 1) * in_dim]);
            w_in.t_matvec_add(dw_i, &mut dinput[i * in_dim..(i + 1) * in_dim]);
            w_msg.t_matvec_add(dw_i, &mut dmsg[i * d..(i + 1) * d]);
        }

        // Messages came from the previous sweep's activations:
        // msg_i = sum_j p_ji act_prev_j.
        if t > 1 {
            dprev.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..n {
                let dm_i = &dmsg[i * d..(i + 1) * d];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let a_j = &act_prev[j * d..(j + 1) * d];
                    let mut dot = 0.0;
                    for (mv, av) in dm_i.iter().zip(a_j) {
                        dot += mv * av;
                    }
                    dp[j * n + i] += dot;
                    let coef = pt[i * n + j];
                    if coef != 0.0 {
                        let dst = &mut dprev[j * d..(j + 1) * d];
                        for (dv, mv) in dst.iter_mut().zip(dm_i) {
                            *dv += coef * mv;
                        }
                    }
                }
            }
            dact.copy_from_slice(&dprev);
        }
        // At t == 1 the previous activations are the zero init: nothing
        // flows further back and the dp dot products vanish.
    }
}

/// Central finite differences of `loss_only` against the analytic gradients,
/// reported as the worst relative error per parameter block.
pub fn finite_difference_report(
    items: &[BatchItem<'_>],
    params: &QNetParams,
    h: f64,
) -> Result<Vec<(String, f64)>> {
    let (_, grads) = loss_and_gradients(items, params)?;
    let mut report = Vec::new();
    for (name, analytic) in grads.blocks() {
        let mut worst = 0.0f64;
        for idx in 0..analytic.data.len() {
            let mut plus = params.clone();
            plus.block_mut(name).data[idx] += h;
            let mut minus = params.clone();
            minus.block_mut(name).data[idx] -= h;
            let fd = (loss_only(items, &plus)? - loss_only(items, &minus)?) / (2.0 * h);
            let a = analytic.data[idx];
            let denom = a.abs().max(fd.abs());
            let err = if denom < 1e-6 { (a - fd).abs() } else { (a - fd).abs() / denom };
            worst = worst.max(err);
        }
        report.push((name.to_string(), worst));
    }
    Ok(report)
}

/// Backpropagate dL/dp through the row softmax into the presence net.
fn backward_presence(
    presence: &super::forward::PresenceTape,
    params: &QNetParams,
    dp: &[f64],
    grads: &mut ParamGrads,
) {
    let n = presence.n;
    let m = presence.m;
    let ph = params.arch.p_hidden;
    let tau = params.arch.tau;

    for i in 0..n {
        // Softmax Jacobian per row: dg_ij = p_ij/tau * (dp_ij - sum_k p_ik dp_ik)
        let mut srow = 0.0;
        for j in 0..n {
            if j != i {
                srow += presence.p[i * n + j] * dp[i * n + j];
            }
        }
        for j in 0..n {
            if j == i {
                continue;
            }
            let dg = presence.p[i * n + j] / tau * (dp[i * n + j] - srow);
            if dg == 0.0 {
                continue;
            }
            let coef = dg / m as f64;
            for k in 0..m {
                let off = (i * n + j) * m + k;
                let h = &presence.h[off * ph..(off + 1) * ph];
                let u = &presence.u[off * 3..off * 3 + 3];
                grads.p1.add_outer(coef, &[1.0], h);
                for c in 0..ph {
                    if h[c] > 0.0 {
                        let dz = params.p1.at(0, c) * coef;
                        for (t, uv) in u.iter().enumerate() {
                            *grads.p2.at_mut(c, t) += dz * uv;
                        }
                    }
                }
            }
        }
    }
}
