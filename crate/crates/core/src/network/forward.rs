//! Forward passes with the caches the hand-written backward passes need.
//!
//! Everything runs in f64. Dropout is the inverted kind (activations scaled
//! by 1/(1-p) at train time) and is applied to the embedding output and to
//! each sublayer output before its residual add. Attention masks zero out
//! disallowed keys after softmax, and a row with no allowed keys yields an
//! all-zero attention output.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::tokenizer::SemanticId;

use super::{
    AttentionParams, EncoderState, FfnParams, LayerNormParams, ModelConfig, ModelParams, Slot,
};

pub(super) const LN_EPS: f64 = 1e-5;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

pub(super) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

pub(super) fn gelu_prime(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub(super) fn add_row_bias(m: &mut Mat, b: &Mat) {
    debug_assert_eq!(b.rows, 1);
    debug_assert_eq!(b.cols, m.cols);
    for i in 0..m.rows {
        for (v, &bv) in m.row_mut(i).iter_mut().zip(b.row(0)) {
            *v += bv;
        }
    }
}

pub(super) fn linear(x: &Mat, w: &Mat, b: &Mat) -> Mat {
    let mut y = x.matmul(w);
    add_row_bias(&mut y, b);
    y
}

pub(super) struct LayerNormCache {
    pub x_hat: Mat,
    pub inv_std: Vec<f64>,
}

pub(super) fn layer_norm_fwd(x: &Mat, ln: &LayerNormParams) -> (Mat, LayerNormCache) {
    let d = x.cols as f64;
    let mut y = Mat::zeros(x.rows, x.cols);
    let mut x_hat = Mat::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for j in 0..x.cols {
            let xh = (x.at(i, j) - mean) * is;
            *x_hat.at_mut(i, j) = xh;
            *y.at_mut(i, j) = ln.gamma.at(0, j) * xh + ln.beta.at(0, j);
        }
    }
    (y, LayerNormCache { x_hat, inv_std })
}

pub(super) enum DropoutCache {
    Identity,
    /// Per-element multiplier: 0 for dropped, 1/(1-p) for kept.
    Mask(Vec<f64>),
}

pub(super) fn dropout_fwd(x: &mut Mat, p: f64, rng: Option<&mut ChaCha12Rng>) -> DropoutCache {
    match rng {
        Some(r) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let mult: Vec<f64> = x
                .data
                .iter()
                .map(|_| if r.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            for (v, &m) in x.data.iter_mut().zip(&mult) {
                *v *= m;
            }
            DropoutCache::Mask(mult)
        }
        _ => DropoutCache::Identity,
    }
}

/// Key visibility for attention. `key_real[j]` admits key j for every query;
/// `allow_self` additionally admits the diagonal (encoder self-attention,
/// where a padded query may still attend to itself).
pub(super) struct AttnMask<'a> {
    pub key_real: Option<&'a [bool]>,
    pub allow_self: bool,
}

impl AttnMask<'_> {
    pub(super) fn all() -> AttnMask<'static> {
        AttnMask {
            key_real: None,
            allow_self: false,
        }
    }

    fn allowed(&self, i: usize, j: usize) -> bool {
        self.key_real.is_none_or(|r| r[j]) || (self.allow_self && i == j)
    }
}

/// Softmax per row over the allowed keys; disallowed entries become exact
/// zeros, and a row with nothing allowed becomes all zeros.
fn masked_softmax_rows(scores: &mut Mat, mask: &AttnMask) {
    for i in 0..scores.rows {
        let mut mx = f64::NEG_INFINITY;
        for j in 0..scores.cols {
            if mask.allowed(i, j) {
                mx = mx.max(scores.at(i, j));
            }
        }
        if mx == f64::NEG_INFINITY {
            for j in 0..scores.cols {
                *scores.at_mut(i, j) = 0.0;
            }
            continue;
        }
        let mut sum = 0.0;
        for j in 0..scores.cols {
            let v = if mask.allowed(i, j) {
                let e = (scores.at(i, j) - mx).exp();
                sum += e;
                e
            } else {
                0.0
            };
            *scores.at_mut(i, j) = v;
        }
        for j in 0..scores.cols {
            *scores.at_mut(i, j) /= sum;
        }
    }
}

/// Plain softmax per row (output heads).
pub(super) fn softmax_rows(m: &mut Mat) {
    masked_softmax_rows(m, &AttnMask::all());
}

pub(super) enum KvSource<'a> {
    /// Project keys/values from this input (trainable path).
    Compute(&'a Mat),
    /// Use precomputed keys/values (eval path with cached encoder K/V).
    Given { k: &'a Mat, v: &'a Mat },
}

pub(super) struct AttnCache {
    pub x_q: Mat,
    /// Present when K/V were computed here; backward requires it.
    pub x_kv: Option<Mat>,
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    /// Post-softmax attention per head, each Lq x Lk.
    pub attn: Vec<Mat>,
    /// Concatenated head outputs before the output projection.
    pub ctx: Mat,
}

pub(super) fn attention_fwd(
    x_q: &Mat,
    kv: KvSource<'_>,
    p: &AttentionParams,
    heads: usize,
    mask: &AttnMask,
) -> (Mat, AttnCache) {
    let d_m = x_q.cols;
    let dh = d_m / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = linear(x_q, &p.wq, &p.bq);
    let (k, v, x_kv) = match kv {
        KvSource::Compute(x) => (
            linear(x, &p.wk, &p.bk),
            linear(x, &p.wv, &p.bv),
            Some(x.clone()),
        ),
        KvSource::Given { k, v } => (k.clone(), v.clone(), None),
    };

    let mut ctx = Mat::zeros(x_q.rows, d_m);
    let mut attn = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.col_block(h * dh, dh);
        let kh = k.col_block(h * dh, dh);
        let vh = v.col_block(h * dh, dh);
        let mut scores = qh.matmul_nt(&kh);
        scores.scale(scale);
        masked_softmax_rows(&mut scores, mask);
        let ctx_h = scores.matmul(&vh);
        ctx.add_col_block(h * dh, &ctx_h);
        attn.push(scores);
    }
    let out = linear(&ctx, &p.wo, &p.bo);
    (
        out,
        AttnCache {
            x_q: x_q.clone(),
            x_kv,
            q,
            k,
            v,
            attn,
            ctx,
        },
    )
}

pub(super) struct FfnCache {
    pub x: Mat,
    pub h_pre: Mat,
    pub h_act: Mat,
}

pub(super) fn ffn_fwd(x: &Mat, p: &FfnParams) -> (Mat, FfnCache) {
    let h_pre = linear(x, &p.w1, &p.b1);
    let mut h_act = h_pre.clone();
    for v in h_act.data.iter_mut() {
        *v = gelu(*v);
    }
    let y = linear(&h_act, &p.w2, &p.b2);
    (
        y,
        FfnCache {
            x: x.clone(),
            h_pre,
            h_act,
        },
    )
}

pub(super) struct EncLayerCache {
    pub ln1: LayerNormCache,
    pub attn: AttnCache,
    pub drop1: DropoutCache,
    pub ln2: LayerNormCache,
    pub ffn: FfnCache,
    pub drop2: DropoutCache,
}

pub(super) struct EncCache {
    /// L x (n*d_e) concatenated digit embeddings; zero rows at PAD.
    pub concat: Mat,
    pub real: Vec<bool>,
    /// Digits per position for routing embedding gradients; None at PAD.
    pub digits: Vec<Option<Vec<u16>>>,
    pub drop0: DropoutCache,
    pub layers: Vec<EncLayerCache>,
    pub ln_f: LayerNormCache,
}

fn check_sid(sid: &SemanticId, config: &ModelConfig) -> Result<()> {
    if sid.len() != config.n {
        return Err(Error::Runtime(format!(
            "semantic id has {} digits, model expects {}",
            sid.len(),
            config.n
        )));
    }
    for &d in sid.digits() {
        if usize::from(d) >= config.m {
            return Err(Error::Runtime(format!(
                "digit value {d} outside codebook range 0..{}",
                config.m
            )));
        }
    }
    Ok(())
}

/// History is left-padded: real items occupy the trailing positions so the
/// most recent item always sits at position L_input - 1.
pub(super) fn encoder_forward(
    context: &[SemanticId],
    params: &ModelParams,
    config: &ModelConfig,
    mut rng: Option<&mut ChaCha12Rng>,
) -> Result<(Mat, EncCache)> {
    let l = config.l_input;
    if context.len() > l {
        return Err(Error::Runtime(format!(
            "context length {} exceeds L_input {l}",
            context.len()
        )));
    }
    for sid in context {
        check_sid(sid, config)?;
    }
    let d_e = config.d_e();
    let pad = l - context.len();

    let mut concat = Mat::zeros(l, config.n * d_e);
    let mut real = vec![false; l];
    let mut digits: Vec<Option<Vec<u16>>> = vec![None; l];
    for (t, sid) in context.iter().enumerate() {
        let pos = pad + t;
        real[pos] = true;
        digits[pos] = Some(sid.digits().to_vec());
        for (k, &dg) in sid.digits().iter().enumerate() {
            let emb = params.e_sid[k].row(usize::from(dg));
            concat.row_mut(pos)[k * d_e..(k + 1) * d_e].copy_from_slice(emb);
        }
    }

    let mut x = concat.matmul(&params.w_item);
    for (pos, &is_real) in real.iter().enumerate() {
        if is_real {
            for (v, &b) in x.row_mut(pos).iter_mut().zip(params.b_item.row(0)) {
                *v += b;
            }
        } else {
            x.row_mut(pos).copy_from_slice(params.pad_embed.row(0));
        }
    }
    x.add_assign(&params.pos_enc);
    let drop0 = dropout_fwd(&mut x, config.dropout, rng.as_deref_mut());

    let self_mask = AttnMask {
        key_real: Some(&real),
        allow_self: true,
    };
    let mut layers = Vec::with_capacity(config.encoder_layers);
    for lp in &params.enc_layers {
        let (a, ln1) = layer_norm_fwd(&x, &lp.ln1);
        let (mut att, attn) = attention_fwd(
            &a,
            KvSource::Compute(&a),
            &lp.attn,
            config.heads,
            &self_mask,
        );
        let drop1 = dropout_fwd(&mut att, config.dropout, rng.as_deref_mut());
        x.add_assign(&att);

        let (f, ln2) = layer_norm_fwd(&x, &lp.ln2);
        let (mut ff, ffn) = ffn_fwd(&f, &lp.ffn);
        let drop2 = dropout_fwd(&mut ff, config.dropout, rng.as_deref_mut());
        x.add_assign(&ff);

        layers.push(EncLayerCache {
            ln1,
            attn,
            drop1,
            ln2,
            ffn,
            drop2,
        });
    }

    let (h, ln_f) = layer_norm_fwd(&x, &params.ln_enc_final);
    Ok((
        h,
        EncCache {
            concat,
            real,
            digits,
            drop0,
            layers,
            ln_f,
        },
    ))
}

pub(super) struct DecLayerCache {
    pub ln1: LayerNormCache,
    pub self_attn: AttnCache,
    pub drop1: DropoutCache,
    pub ln2: LayerNormCache,
    pub cross: AttnCache,
    pub drop2: DropoutCache,
    pub ln3: LayerNormCache,
    pub ffn: FfnCache,
    pub drop3: DropoutCache,
}

pub(super) struct DecCache {
    /// n x d_e slot embeddings before the lift to d_m.
    pub slot_e: Mat,
    pub slots: Vec<Slot>,
    pub drop0: DropoutCache,
    pub layers: Vec<DecLayerCache>,
    pub ln_f: LayerNormCache,
    /// n x d_m representation fed to the output heads.
    pub out: Mat,
    /// n x M per-digit categorical distributions.
    pub probs: Mat,
}

/// One bidirectional pass over the n digit slots. With `cached` set, cross
/// attention reuses the encoder state's precomputed K/V (eval only); without
/// it K/V are projected from `h` inside the graph so gradients reach the
/// encoder.
pub(super) fn decoder_forward(
    slots: &[Slot],
    h: &Mat,
    real: &[bool],
    params: &ModelParams,
    config: &ModelConfig,
    cached: Option<&EncoderState>,
    mut rng: Option<&mut ChaCha12Rng>,
) -> Result<DecCache> {
    if slots.len() != config.n {
        return Err(Error::Runtime(format!(
            "{} slots for {} digits",
            slots.len(),
            config.n
        )));
    }
    let d_e = config.d_e();
    let mut slot_e = Mat::zeros(config.n, d_e);
    for (k, slot) in slots.iter().enumerate() {
        let emb = match *slot {
            Slot::Masked => params.e_mask.row(0),
            Slot::Visible(dg) => {
                if usize::from(dg) >= config.m {
                    return Err(Error::Runtime(format!(
                        "digit value {dg} outside codebook range 0..{}",
                        config.m
                    )));
                }
                params.e_sid[k].row(usize::from(dg))
            }
        };
        slot_e.row_mut(k).copy_from_slice(emb);
    }

    let mut x = linear(&slot_e, &params.w_digit_in, &params.b_digit_in);
    x.add_assign(&params.pos_dec);
    let drop0 = dropout_fwd(&mut x, config.dropout, rng.as_deref_mut());

    let cross_mask = AttnMask {
        key_real: Some(real),
        allow_self: false,
    };
    let mut layers = Vec::with_capacity(config.decoder_layers);
    for (l, lp) in params.dec_layers.iter().enumerate() {
        let (a, ln1) = layer_norm_fwd(&x, &lp.ln1);
        let (mut att, self_attn) = attention_fwd(
            &a,
            KvSource::Compute(&a),
            &lp.self_attn,
            config.heads,
            &AttnMask::all(),
        );
        let drop1 = dropout_fwd(&mut att, config.dropout, rng.as_deref_mut());
        x.add_assign(&att);

        let (c, ln2) = layer_norm_fwd(&x, &lp.ln2);
        let kv = match cached {
            Some(state) => KvSource::Given {
                k: &state.cross_k[l],
                v: &state.cross_v[l],
            },
            None => KvSource::Compute(h),
        };
        let (mut cr, cross) = attention_fwd(&c, kv, &lp.cross_attn, config.heads, &cross_mask);
        let drop2 = dropout_fwd(&mut cr, config.dropout, rng.as_deref_mut());
        x.add_assign(&cr);

        let (f, ln3) = layer_norm_fwd(&x, &lp.ln3);
        let (mut ff, ffn) = ffn_fwd(&f, &lp.ffn);
        let drop3 = dropout_fwd(&mut ff, config.dropout, rng.as_deref_mut());
        x.add_assign(&ff);

        layers.push(DecLayerCache {
            ln1,
            self_attn,
            drop1,
            ln2,
            cross,
            drop2,
            ln3,
            ffn,
            drop3,
        });
    }

    let (out, ln_f) = layer_norm_fwd(&x, &params.ln_dec_final);
    let mut probs = Mat::zeros(config.n, config.m);
    for k in 0..config.n {
        let row = Mat::from_vec(1, config.d_m, out.row(k).to_vec());
        let logits = linear(&row, &params.heads[k].w, &params.heads[k].b);
        probs.row_mut(k).copy_from_slice(logits.row(0));
    }
    softmax_rows(&mut probs);

    Ok(DecCache {
        slot_e,
        slots: slots.to_vec(),
        drop0,
        layers,
        ln_f,
        out,
        probs,
    })
}
