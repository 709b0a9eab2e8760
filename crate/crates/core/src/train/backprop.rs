//! Backpropagation through time for both architectures.
//!
//! Gradients are returned in parameter order (`VANILLA_PARAM_NAMES` /
//! `GRU_PARAM_NAMES`). Forward activations are computed with the same
//! accumulation order as the inference forward passes.

use crate::data::LabeledSequence;
use crate::error::{Error, Result};
use crate::models::{raw_matvec, GruClassifier, VanillaRnnLm};
use crate::tensor::{log_softmax_in_place, relu, sigmoid, Tensor};

/// `out += a b^T`, with `out` row-major `a.len() x b.len()`.
#[inline]
fn add_outer(out: &mut Tensor, a: &[f64], b: &[f64]) {
    let cols = out.cols();
    let data = out.data_mut();
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let row = &mut data[i * cols..(i + 1) * cols];
        for (o, &bj) in row.iter_mut().zip(b) {
            *o += ai * bj;
        }
    }
}

/// `out += W^T x`.
#[inline]
fn add_matvec_t(out: &mut [f64], w: &Tensor, x: &[f64]) {
    let cols = w.cols();
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w.data()[i * cols..(i + 1) * cols];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += wij * xi;
        }
    }
}

#[inline]
fn add_into(out: &mut Tensor, x: &[f64]) {
    out.data_mut().iter_mut().zip(x).for_each(|(o, v)| *o += v);
}

fn zeros_like<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Vec<Tensor> {
    params.into_iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
}

/// Mean cross-entropy (nats) over every prediction of one chunk and its
/// gradient. The first symbol is predicted from the zero initial state.
pub fn vanilla_chunk_grad(model: &VanillaRnnLm, chunk: &[usize]) -> Result<(f64, Vec<Tensor>)> {
    let h_size = model.hidden_size();
    let vocab = model.vocab_size();
    if chunk.is_empty() {
        return Err(Error::Data("empty training chunk".into()));
    }
    if let Some(&bad) = chunk.iter().find(|&&c| c >= vocab) {
        return Err(Error::Data(format!("token {bad} outside vocabulary of {vocab}")));
    }
    let len = chunk.len();
    let b_h = model.b_h.data();
    let b_y = model.b_y.data();

    // hs[t] is the state used to predict chunk[t]
    let mut hs: Vec<Vec<f64>> = Vec::with_capacity(len);
    hs.push(vec![0.0; h_size]);
    for t in 1..len {
        let input = model.w_xh.col_values(chunk[t - 1]);
        let rec = raw_matvec(&model.w_hh, &hs[t - 1]);
        let h: Vec<f64> = input
            .iter()
            .zip(&rec)
            .zip(b_h)
            .map(|((x, y), z)| relu(x + y + z))
            .collect();
        hs.push(h);
    }

    let mut grads = zeros_like(model.named().map(|(_, w)| w));
    let [g_xh, g_hh, g_bh, g_hy, g_by] = &mut grads[..] else {
        unreachable!()
    };
    let mut loss = 0.0;
    let mut dh_next = vec![0.0; h_size];
    let scale = 1.0 / len as f64;
    for t in (0..len).rev() {
        let mut p: Vec<f64> = raw_matvec(&model.w_hy, &hs[t]).iter().zip(b_y).map(|(a, b)| a + b).collect();
        log_softmax_in_place(&mut p);
        loss -= p[chunk[t]];
        let mut dlogits: Vec<f64> = p.iter().map(|lp| lp.exp()).collect();
        dlogits[chunk[t]] -= 1.0;
        dlogits.iter_mut().for_each(|v| *v *= scale);

        add_outer(g_hy, &dlogits, &hs[t]);
        add_into(g_by, &dlogits);
        if t == 0 {
            break;
        }
        let mut dh = std::mem::take(&mut dh_next);
        add_matvec_t(&mut dh, &model.w_hy, &dlogits);
        // relu gate: h > 0 exactly where the pre-activation was positive
        let da: Vec<f64> = dh.iter().zip(&hs[t]).map(|(&d, &h)| if h > 0.0 { d } else { 0.0 }).collect();
        let tok = chunk[t - 1];
        for (i, &d) in da.iter().enumerate() {
            let v = g_xh.get(i, tok) + d;
            g_xh.set(i, tok, v);
        }
        add_outer(g_hh, &da, &hs[t - 1]);
        add_into(g_bh, &da);
        dh_next = vec![0.0; h_size];
        add_matvec_t(&mut dh_next, &model.w_hh, &da);
    }
    Ok((loss / len as f64, grads))
}

struct GruCache {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    gated: Vec<f64>,
    candidate: Vec<f64>,
}

/// Cross-entropy (nats) of one labelled sequence and its gradient.
pub fn gru_sample_grad(model: &GruClassifier, sample: &LabeledSequence) -> Result<(f64, Vec<Tensor>)> {
    let d = model.input_size();
    let n_h = model.hidden_size();
    let seq = &sample.frames;
    if seq.cols() != d {
        return Err(Error::Data(format!(
            "feature rows have width {}, model expects {d}",
            seq.cols()
        )));
    }
    if sample.label >= model.n_labels() {
        return Err(Error::Data(format!("label {} out of range", sample.label)));
    }
    let (b_z, b_r, b_h) = (model.b_z.data(), model.b_r.data(), model.b_h.data());

    let steps = seq.rows();
    let mut caches = Vec::with_capacity(steps);
    let mut h = vec![0.0; n_h];
    for t in 0..steps {
        let x = seq.row(t);
        let gate = |w: &Tensor, u: &Tensor, hv: &[f64], b: &[f64], f: fn(f64) -> f64| -> Vec<f64> {
            let a = raw_matvec(w, x);
            let c = raw_matvec(u, hv);
            a.iter().zip(&c).zip(b).map(|((p, q), r)| f(p + q + r)).collect()
        };
        let z = gate(&model.w_z, &model.u_z, &h, b_z, sigmoid);
        let r = gate(&model.w_r, &model.u_r, &h, b_r, sigmoid);
        let gated: Vec<f64> = r.iter().zip(&h).map(|(a, b)| a * b).collect();
        let candidate = gate(&model.w_h, &model.u_h, &gated, b_h, f64::tanh);
        let h_new = h
            .iter()
            .zip(&z)
            .zip(&candidate)
            .map(|((&hp, &zi), &ci)| (1.0 - zi) * hp + zi * ci)
            .collect();
        caches.push(GruCache {
            h_prev: std::mem::replace(&mut h, h_new),
            z,
            r,
            gated,
            candidate,
        });
    }

    // head
    let dense_pre: Vec<f64> = raw_matvec(&model.w_d, &h)
        .iter()
        .zip(model.b_d.data())
        .map(|(a, b)| a + b)
        .collect();
    let dense: Vec<f64> = dense_pre.iter().copied().map(relu).collect();
    let mut logp: Vec<f64> = raw_matvec(&model.w_o, &dense)
        .iter()
        .zip(model.b_o.data())
        .map(|(a, b)| a + b)
        .collect();
    log_softmax_in_place(&mut logp);
    let loss = -logp[sample.label];

    let mut grads = zeros_like(model.named().map(|(_, w)| w));
    let [g_wz, g_wr, g_wh, g_uz, g_ur, g_uh, g_bz, g_br, g_bh, g_wd, g_bd, g_wo, g_bo] = &mut grads[..] else {
        unreachable!()
    };

    let mut d_out: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
    d_out[sample.label] -= 1.0;
    add_outer(g_wo, &d_out, &dense);
    add_into(g_bo, &d_out);
    let mut d_dense = vec![0.0; dense.len()];
    add_matvec_t(&mut d_dense, &model.w_o, &d_out);
    let d_dense_pre: Vec<f64> = d_dense
        .iter()
        .zip(&dense_pre)
        .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
        .collect();
    add_outer(g_wd, &d_dense_pre, &h);
    add_into(g_bd, &d_dense_pre);
    let mut dh = vec![0.0; n_h];
    add_matvec_t(&mut dh, &model.w_d, &d_dense_pre);

    let mut da_z = vec![0.0; n_h];
    let mut da_r = vec![0.0; n_h];
    let mut da_c = vec![0.0; n_h];
    for t in (0..steps).rev() {
        let c = &caches[t];
        let x = seq.row(t);
        let mut dh_prev = vec![0.0; n_h];
        for i in 0..n_h {
            let (z, cand, hp) = (c.z[i], c.candidate[i], c.h_prev[i]);
            da_c[i] = dh[i] * z * (1.0 - cand * cand);
            da_z[i] = dh[i] * (cand - hp) * z * (1.0 - z);
            dh_prev[i] = dh[i] * (1.0 - z);
        }
        add_outer(g_wh, &da_c, x);
        add_outer(g_uh, &da_c, &c.gated);
        add_into(g_bh, &da_c);
        let mut d_gated = vec![0.0; n_h];
        add_matvec_t(&mut d_gated, &model.u_h, &da_c);
        for i in 0..n_h {
            let r = c.r[i];
            da_r[i] = d_gated[i] * c.h_prev[i] * r * (1.0 - r);
            dh_prev[i] += d_gated[i] * r;
        }
        add_outer(g_wz, &da_z, x);
        add_outer(g_uz, &da_z, &c.h_prev);
        add_into(g_bz, &da_z);
        add_matvec_t(&mut dh_prev, &model.u_z, &da_z);
        add_outer(g_wr, &da_r, x);
        add_outer(g_ur, &da_r, &c.h_prev);
        add_into(g_br, &da_r);
        add_matvec_t(&mut dh_prev, &model.u_r, &da_r);
        dh = dh_prev;
    }
    Ok((loss, grads))
}
