//! Hand-written reverse-mode gradients mirroring `forward` exactly. Each
//! function consumes the upstream gradient plus the forward cache and
//! accumulates parameter gradients into a `ModelParams`-shaped holder.

use crate::linalg::Mat;

use super::forward::{
    gelu_prime, AttnCache, DecCache, DropoutCache, EncCache, FfnCache, LayerNormCache,
};
use super::{AttentionParams, FfnParams, LayerNormParams, ModelConfig, ModelParams, Slot};

pub(super) fn layer_norm_bwd(
    dy: &Mat,
    cache: &LayerNormCache,
    ln: &LayerNormParams,
    g: &mut LayerNormParams,
) -> Mat {
    let (rows, cols) = (dy.rows, dy.cols);
    let d = cols as f64;
    let mut dx = Mat::zeros(rows, cols);
    for i in 0..rows {
        // Parameter gradients.
        for j in 0..cols {
            *g.gamma.at_mut(0, j) += dy.at(i, j) * cache.x_hat.at(i, j);
            *g.beta.at_mut(0, j) += dy.at(i, j);
        }
        // dx_hat = dy * gamma; then the two row means couple the entries.
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for j in 0..cols {
            let dxh = dy.at(i, j) * ln.gamma.at(0, j);
            m1 += dxh;
            m2 += dxh * cache.x_hat.at(i, j);
        }
        m1 /= d;
        m2 /= d;
        let is = cache.inv_std[i];
        for j in 0..cols {
            let dxh = dy.at(i, j) * ln.gamma.at(0, j);
            *dx.at_mut(i, j) = is * (dxh - m1 - cache.x_hat.at(i, j) * m2);
        }
    }
    dx
}

pub(super) fn dropout_bwd(dy: &mut Mat, cache: &DropoutCache) {
    if let DropoutCache::Mask(mult) = cache {
        for (v, &m) in dy.data.iter_mut().zip(mult) {
            *v *= m;
        }
    }
}

pub(super) fn ffn_bwd(dy: &Mat, cache: &FfnCache, p: &FfnParams, g: &mut FfnParams) -> Mat {
    g.w2.add_assign(&cache.h_act.matmul_tn(dy));
    g.b2.add_assign(&dy.col_sums());
    let mut dh = dy.matmul_nt(&p.w2);
    for (v, &pre) in dh.data.iter_mut().zip(cache.h_pre.data.iter()) {
        *v *= gelu_prime(pre);
    }
    g.w1.add_assign(&cache.x.matmul_tn(&dh));
    g.b1.add_assign(&dh.col_sums());
    dh.matmul_nt(&p.w1)
}

/// Returns (dx_q, dx_kv). The cache must come from a `KvSource::Compute`
/// forward pass; cached-K/V passes are eval-only and never reach here.
pub(super) fn attention_bwd(
    dout: &Mat,
    cache: &AttnCache,
    p: &AttentionParams,
    g: &mut AttentionParams,
    heads: usize,
) -> (Mat, Mat) {
    let x_kv = cache
        .x_kv
        .as_ref()
        .expect("attention backward needs in-graph keys/values");
    let d_m = cache.q.cols;
    let dh = d_m / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    g.wo.add_assign(&cache.ctx.matmul_tn(dout));
    g.bo.add_assign(&dout.col_sums());
    let dctx = dout.matmul_nt(&p.wo);

    let mut dq = Mat::zeros(cache.q.rows, d_m);
    let mut dk = Mat::zeros(cache.k.rows, d_m);
    let mut dv = Mat::zeros(cache.v.rows, d_m);
    for h in 0..heads {
        let qh = cache.q.col_block(h * dh, dh);
        let kh = cache.k.col_block(h * dh, dh);
        let vh = cache.v.col_block(h * dh, dh);
        let a = &cache.attn[h];
        let dctx_h = dctx.col_block(h * dh, dh);

        let da = dctx_h.matmul_nt(&vh);
        dv.add_col_block(h * dh, &a.matmul_tn(&dctx_h));

        // Softmax rows: ds = a * (da - <da, a>_row). Masked entries have
        // a = 0, so they contribute nothing; all-masked rows stay zero.
        let mut ds = Mat::zeros(a.rows, a.cols);
        for i in 0..a.rows {
            let dot: f64 = (0..a.cols).map(|j| da.at(i, j) * a.at(i, j)).sum();
            for j in 0..a.cols {
                *ds.at_mut(i, j) = a.at(i, j) * (da.at(i, j) - dot) * scale;
            }
        }

        dq.add_col_block(h * dh, &ds.matmul(&kh));
        dk.add_col_block(h * dh, &ds.matmul_tn(&qh));
    }

    g.wq.add_assign(&cache.x_q.matmul_tn(&dq));
    g.bq.add_assign(&dq.col_sums());
    g.wk.add_assign(&x_kv.matmul_tn(&dk));
    g.bk.add_assign(&dk.col_sums());
    g.wv.add_assign(&x_kv.matmul_tn(&dv));
    g.bv.add_assign(&dv.col_sums());

    let dx_q = dq.matmul_nt(&p.wq);
    let mut dx_kv = dk.matmul_nt(&p.wk);
    dx_kv.add_assign(&dv.matmul_nt(&p.wv));
    (dx_q, dx_kv)
}

pub(super) fn encoder_backward(
    dh: &Mat,
    cache: &EncCache,
    p: &ModelParams,
    g: &mut ModelParams,
    config: &ModelConfig,
) {
    let mut dx = layer_norm_bwd(dh, &cache.ln_f, &p.ln_enc_final, &mut g.ln_enc_final);

    for l in (0..cache.layers.len()).rev() {
        let lc = &cache.layers[l];
        let lp = &p.enc_layers[l];
        let gl = &mut g.enc_layers[l];

        let mut dff = dx.clone();
        dropout_bwd(&mut dff, &lc.drop2);
        let df = ffn_bwd(&dff, &lc.ffn, &lp.ffn, &mut gl.ffn);
        dx.add_assign(&layer_norm_bwd(&df, &lc.ln2, &lp.ln2, &mut gl.ln2));

        let mut datt = dx.clone();
        dropout_bwd(&mut datt, &lc.drop1);
        let (dxq, dxkv) = attention_bwd(&datt, &lc.attn, &lp.attn, &mut gl.attn, config.heads);
        let mut da = dxq;
        da.add_assign(&dxkv);
        dx.add_assign(&layer_norm_bwd(&da, &lc.ln1, &lp.ln1, &mut gl.ln1));
    }

    dropout_bwd(&mut dx, &cache.drop0);

    // Positions were added to every row, PAD included.
    g.pos_enc.add_assign(&dx);

    // PAD rows fed the learned pad vector; real rows fed projection + bias.
    let mut dx_real = dx;
    for pos in 0..dx_real.rows {
        if !cache.real[pos] {
            for (gp, &v) in g.pad_embed.row_mut(0).iter_mut().zip(dx_real.row(pos)) {
                *gp += v;
            }
            dx_real.row_mut(pos).fill(0.0);
        }
    }
    g.b_item.add_assign(&dx_real.col_sums());
    g.w_item.add_assign(&cache.concat.matmul_tn(&dx_real));
    let dconcat = dx_real.matmul_nt(&p.w_item);

    let d_e = config.d_e();
    for pos in 0..dconcat.rows {
        if let Some(digits) = &cache.digits[pos] {
            for (k, &dg) in digits.iter().enumerate() {
                let grad_row = g.e_sid[k].row_mut(usize::from(dg));
                let src = &dconcat.row(pos)[k * d_e..(k + 1) * d_e];
                for (gv, &sv) in grad_row.iter_mut().zip(src.iter()) {
                    *gv += sv;
                }
            }
        }
    }
}

/// Backward from per-digit logit gradients; returns the gradient w.r.t. the
/// encoder output `h` accumulated over every cross-attention layer.
pub(super) fn decoder_backward(
    dlogits: &Mat,
    cache: &DecCache,
    p: &ModelParams,
    g: &mut ModelParams,
    config: &ModelConfig,
) -> Mat {
    let mut dout = Mat::zeros(config.n, config.d_m);
    for k in 0..config.n {
        let dl = Mat::from_vec(1, config.m, dlogits.row(k).to_vec());
        let out_k = Mat::from_vec(1, config.d_m, cache.out.row(k).to_vec());
        g.heads[k].w.add_assign(&out_k.matmul_tn(&dl));
        g.heads[k].b.add_assign(&dl);
        dout.row_mut(k)
            .copy_from_slice(dl.matmul_nt(&p.heads[k].w).row(0));
    }

    let mut dx = layer_norm_bwd(&dout, &cache.ln_f, &p.ln_dec_final, &mut g.ln_dec_final);
    let l_input = config.l_input;
    let mut dh_total = Mat::zeros(l_input, config.d_m);

    for l in (0..cache.layers.len()).rev() {
        let lc = &cache.layers[l];
        let lp = &p.dec_layers[l];
        let gl = &mut g.dec_layers[l];

        let mut dff = dx.clone();
        dropout_bwd(&mut dff, &lc.drop3);
        let df = ffn_bwd(&dff, &lc.ffn, &lp.ffn, &mut gl.ffn);
        dx.add_assign(&layer_norm_bwd(&df, &lc.ln3, &lp.ln3, &mut gl.ln3));

        let mut dcr = dx.clone();
        dropout_bwd(&mut dcr, &lc.drop2);
        let (dxq, dxkv) = attention_bwd(
            &dcr,
            &lc.cross,
            &lp.cross_attn,
            &mut gl.cross_attn,
            config.heads,
        );
        dh_total.add_assign(&dxkv);
        dx.add_assign(&layer_norm_bwd(&dxq, &lc.ln2, &lp.ln2, &mut gl.ln2));

        let mut datt = dx.clone();
        dropout_bwd(&mut datt, &lc.drop1);
        let (dxq, dxkv) = attention_bwd(
            &datt,
            &lc.self_attn,
            &lp.self_attn,
            &mut gl.self_attn,
            config.heads,
        );
        let mut da = dxq;
        da.add_assign(&dxkv);
        dx.add_assign(&layer_norm_bwd(&da, &lc.ln1, &lp.ln1, &mut gl.ln1));
    }

    dropout_bwd(&mut dx, &cache.drop0);

    g.pos_dec.add_assign(&dx);
    g.b_digit_in.add_assign(&dx.col_sums());
    g.w_digit_in.add_assign(&cache.slot_e.matmul_tn(&dx));
    let dslot = dx.matmul_nt(&p.w_digit_in);

    for (k, slot) in cache.slots.iter().enumerate() {
        match *slot {
            Slot::Masked => {
                for (gv, &sv) in g.e_mask.row_mut(0).iter_mut().zip(dslot.row(k)) {
                    *gv += sv;
                }
            }
            Slot::Visible(dg) => {
                let grad_row = g.e_sid[k].row_mut(usize::from(dg));
                for (gv, &sv) in grad_row.iter_mut().zip(dslot.row(k)) {
                    *gv += sv;
                }
            }
        }
    }

    dh_total
}
