//! The learnable model: per-digit SID embeddings, item projection, a
//! Transformer encoder over the padded history, and a bidirectional decoder
//! over the n digit slots with cross-attention into the encoder output and
//! one output head per digit. Gradients are exact hand-written reverse mode.

mod adamw;
mod backward;
mod forward;

pub use adamw::AdamW;

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::linalg::{fill_trunc_normal, seeded_rng, Mat};
use crate::noising::MaskView;
use crate::tokenizer::SemanticId;

/// Architecture and regularization knobs; every shape in `ModelParams`
/// derives from this.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub d_m: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Digits per semantic id.
    pub n: usize,
    /// Codewords per digit.
    pub m: usize,
    /// History length after left-padding.
    pub l_input: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            (self.d_m, "d_m"),
            (self.d_ff, "d_ff"),
            (self.heads, "heads"),
            (self.encoder_layers, "encoder_layers"),
            (self.decoder_layers, "decoder_layers"),
            (self.n, "n"),
            (self.m, "M"),
            (self.l_input, "L_input"),
        ];
        for (v, name) in fields {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_m.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_m {} not divisible by heads {}",
                self.d_m, self.heads
            )));
        }
        if !self.dropout.is_finite() || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.m > usize::from(u16::MAX) + 1 {
            return Err(Error::Config(format!("M {} exceeds digit range", self.m)));
        }
        Ok(())
    }

    /// Per-digit embedding width: d_m/n, clamped to at least 1 so configs
    /// with n > d_m still work.
    pub fn d_e(&self) -> usize {
        (self.d_m / self.n).max(1)
    }

    pub fn d_head(&self) -> usize {
        self.d_m / self.heads
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gamma: Mat,
    pub beta: Mat,
}

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub wq: Mat,
    pub bq: Mat,
    pub wk: Mat,
    pub bk: Mat,
    pub wv: Mat,
    pub bv: Mat,
    pub wo: Mat,
    pub bo: Mat,
}

#[derive(Debug, Clone)]
pub struct FfnParams {
    pub w1: Mat,
    pub b1: Mat,
    pub w2: Mat,
    pub b2: Mat,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub ffn: FfnParams,
}

#[derive(Debug, Clone)]
pub struct DecoderLayerParams {
    pub ln1: LayerNormParams,
    pub self_attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln3: LayerNormParams,
    pub ffn: FfnParams,
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w: Mat,
    pub b: Mat,
}

/// All learnable tensors. The same struct doubles as the gradient holder and
/// as the optimizer moment buffers, so shapes always line up by construction.
#[derive(Debug, Clone)]
pub struct ModelParams {
    /// One M x d_e embedding table per digit, shared by encoder and decoder.
    pub e_sid: Vec<Mat>,
    /// Embedding for a masked digit slot (1 x d_e).
    pub e_mask: Mat,
    /// Encoder embedding of the PAD position (1 x d_m).
    pub pad_embed: Mat,
    /// Item projection, (n*d_e) x d_m.
    pub w_item: Mat,
    pub b_item: Mat,
    /// Encoder positions, L_input x d_m.
    pub pos_enc: Mat,
    /// Slot lift from d_e to d_m, shared across digits.
    pub w_digit_in: Mat,
    pub b_digit_in: Mat,
    /// Decoder slot positions, n x d_m.
    pub pos_dec: Mat,
    pub enc_layers: Vec<EncoderLayerParams>,
    pub dec_layers: Vec<DecoderLayerParams>,
    pub ln_enc_final: LayerNormParams,
    pub ln_dec_final: LayerNormParams,
    /// Per-digit output heads, each d_m x M plus bias.
    pub heads: Vec<HeadParams>,
}

macro_rules! impl_tensor_visit {
    ($fn_name:ident, $iter:ident $(, $m:ident)?) => {
        /// Named tensors in a stable order. The bool marks weight-decay
        /// eligibility: biases and layer-norm parameters are exempt.
        pub fn $fn_name(& $($m)? self) -> Vec<(String, & $($m)? Mat, bool)> {
            let mut out: Vec<(String, & $($m)? Mat, bool)> = Vec::new();
            for (k, t) in self.e_sid.$iter().enumerate() {
                out.push((format!("e_sid.{k}"), t, true));
            }
            out.push(("e_mask".into(), & $($m)? self.e_mask, true));
            out.push(("pad_embed".into(), & $($m)? self.pad_embed, true));
            out.push(("w_item".into(), & $($m)? self.w_item, true));
            out.push(("b_item".into(), & $($m)? self.b_item, false));
            out.push(("pos_enc".into(), & $($m)? self.pos_enc, true));
            out.push(("w_digit_in".into(), & $($m)? self.w_digit_in, true));
            out.push(("b_digit_in".into(), & $($m)? self.b_digit_in, false));
            out.push(("pos_dec".into(), & $($m)? self.pos_dec, true));
            for (l, layer) in self.enc_layers.$iter().enumerate() {
                let EncoderLayerParams { ln1, attn, ln2, ffn } = layer;
                out.push((format!("enc.{l}.ln1.gamma"), & $($m)? ln1.gamma, false));
                out.push((format!("enc.{l}.ln1.beta"), & $($m)? ln1.beta, false));
                out.push((format!("enc.{l}.attn.wq"), & $($m)? attn.wq, true));
                out.push((format!("enc.{l}.attn.bq"), & $($m)? attn.bq, false));
                out.push((format!("enc.{l}.attn.wk"), & $($m)? attn.wk, true));
                out.push((format!("enc.{l}.attn.bk"), & $($m)? attn.bk, false));
                out.push((format!("enc.{l}.attn.wv"), & $($m)? attn.wv, true));
                out.push((format!("enc.{l}.attn.bv"), & $($m)? attn.bv, false));
                out.push((format!("enc.{l}.attn.wo"), & $($m)? attn.wo, true));
                out.push((format!("enc.{l}.attn.bo"), & $($m)? attn.bo, false));
                out.push((format!("enc.{l}.ln2.gamma"), & $($m)? ln2.gamma, false));
                out.push((format!("enc.{l}.ln2.beta"), & $($m)? ln2.beta, false));
                out.push((format!("enc.{l}.ffn.w1"), & $($m)? ffn.w1, true));
                out.push((format!("enc.{l}.ffn.b1"), & $($m)? ffn.b1, false));
                out.push((format!("enc.{l}.ffn.w2"), & $($m)? ffn.w2, true));
                out.push((format!("enc.{l}.ffn.b2"), & $($m)? ffn.b2, false));
            }
            for (l, layer) in self.dec_layers.$iter().enumerate() {
                let DecoderLayerParams { ln1, self_attn, ln2, cross_attn, ln3, ffn } = layer;
                out.push((format!("dec.{l}.ln1.gamma"), & $($m)? ln1.gamma, false));
                out.push((format!("dec.{l}.ln1.beta"), & $($m)? ln1.beta, false));
                out.push((format!("dec.{l}.self_attn.wq"), & $($m)? self_attn.wq, true));
                out.push((format!("dec.{l}.self_attn.bq"), & $($m)? self_attn.bq, false));
                out.push((format!("dec.{l}.self_attn.wk"), & $($m)? self_attn.wk, true));
                out.push((format!("dec.{l}.self_attn.bk"), & $($m)? self_attn.bk, false));
                out.push((format!("dec.{l}.self_attn.wv"), & $($m)? self_attn.wv, true));
                out.push((format!("dec.{l}.self_attn.bv"), & $($m)? self_attn.bv, false));
                out.push((format!("dec.{l}.self_attn.wo"), & $($m)? self_attn.wo, true));
                out.push((format!("dec.{l}.self_attn.bo"), & $($m)? self_attn.bo, false));
                out.push((format!("dec.{l}.ln2.gamma"), & $($m)? ln2.gamma, false));
                out.push((format!("dec.{l}.ln2.beta"), & $($m)? ln2.beta, false));
                out.push((format!("dec.{l}.cross_attn.wq"), & $($m)? cross_attn.wq, true));
                out.push((format!("dec.{l}.cross_attn.bq"), & $($m)? cross_attn.bq, false));
                out.push((format!("dec.{l}.cross_attn.wk"), & $($m)? cross_attn.wk, true));
                out.push((format!("dec.{l}.cross_attn.bk"), & $($m)? cross_attn.bk, false));
                out.push((format!("dec.{l}.cross_attn.wv"), & $($m)? cross_attn.wv, true));
                out.push((format!("dec.{l}.cross_attn.bv"), & $($m)? cross_attn.bv, false));
                out.push((format!("dec.{l}.cross_attn.wo"), & $($m)? cross_attn.wo, true));
                out.push((format!("dec.{l}.cross_attn.bo"), & $($m)? cross_attn.bo, false));
                out.push((format!("dec.{l}.ln3.gamma"), & $($m)? ln3.gamma, false));
                out.push((format!("dec.{l}.ln3.beta"), & $($m)? ln3.beta, false));
                out.push((format!("dec.{l}.ffn.w1"), & $($m)? ffn.w1, true));
                out.push((format!("dec.{l}.ffn.b1"), & $($m)? ffn.b1, false));
                out.push((format!("dec.{l}.ffn.w2"), & $($m)? ffn.w2, true));
                out.push((format!("dec.{l}.ffn.b2"), & $($m)? ffn.b2, false));
            }
            out.push(("ln_enc_final.gamma".into(), & $($m)? self.ln_enc_final.gamma, false));
            out.push(("ln_enc_final.beta".into(), & $($m)? self.ln_enc_final.beta, false));
            out.push(("ln_dec_final.gamma".into(), & $($m)? self.ln_dec_final.gamma, false));
            out.push(("ln_dec_final.beta".into(), & $($m)? self.ln_dec_final.beta, false));
            for (k, head) in self.heads.$iter().enumerate() {
                let HeadParams { w, b } = head;
                out.push((format!("head.{k}.w"), w, true));
                out.push((format!("head.{k}.b"), b, false));
            }
            out
        }
    };
}

impl ModelParams {
    impl_tensor_visit!(tensors, iter);
    impl_tensor_visit!(tensors_mut, iter_mut, mut);

    pub fn zeros(config: &ModelConfig) -> ModelParams {
        let d_e = config.d_e();
        let d_m = config.d_m;
        let ln = || LayerNormParams {
            gamma: Mat::zeros(1, d_m),
            beta: Mat::zeros(1, d_m),
        };
        let attn = || AttentionParams {
            wq: Mat::zeros(d_m, d_m),
            bq: Mat::zeros(1, d_m),
            wk: Mat::zeros(d_m, d_m),
            bk: Mat::zeros(1, d_m),
            wv: Mat::zeros(d_m, d_m),
            bv: Mat::zeros(1, d_m),
            wo: Mat::zeros(d_m, d_m),
            bo: Mat::zeros(1, d_m),
        };
        let ffn = || FfnParams {
            w1: Mat::zeros(d_m, config.d_ff),
            b1: Mat::zeros(1, config.d_ff),
            w2: Mat::zeros(config.d_ff, d_m),
            b2: Mat::zeros(1, d_m),
        };
        ModelParams {
            e_sid: (0..config.n).map(|_| Mat::zeros(config.m, d_e)).collect(),
            e_mask: Mat::zeros(1, d_e),
            pad_embed: Mat::zeros(1, d_m),
            w_item: Mat::zeros(config.n * d_e, d_m),
            b_item: Mat::zeros(1, d_m),
            pos_enc: Mat::zeros(config.l_input, d_m),
            w_digit_in: Mat::zeros(d_e, d_m),
            b_digit_in: Mat::zeros(1, d_m),
            pos_dec: Mat::zeros(config.n, d_m),
            enc_layers: (0..config.encoder_layers)
                .map(|_| EncoderLayerParams {
                    ln1: ln(),
                    attn: attn(),
                    ln2: ln(),
                    ffn: ffn(),
                })
                .collect(),
            dec_layers: (0..config.decoder_layers)
                .map(|_| DecoderLayerParams {
                    ln1: ln(),
                    self_attn: attn(),
                    ln2: ln(),
                    cross_attn: attn(),
                    ln3: ln(),
                    ffn: ffn(),
                })
                .collect(),
            ln_enc_final: ln(),
            ln_dec_final: ln(),
            heads: (0..config.n)
                .map(|_| HeadParams {
                    w: Mat::zeros(d_m, config.m),
                    b: Mat::zeros(1, config.m),
                })
                .collect(),
        }
    }

    /// Truncated normal (std 0.02) for weights and embeddings, ones for
    /// layer-norm gains, zeros for biases and layer-norm shifts.
    pub fn init(config: &ModelConfig, seed: u64) -> ModelParams {
        let mut params = Self::zeros(config);
        let mut rng = seeded_rng(seed);
        for (name, tensor, decay) in params.tensors_mut() {
            if name.ends_with(".gamma") {
                tensor.data.fill(1.0);
            } else if decay {
                fill_trunc_normal(tensor, &mut rng, 0.02);
            }
        }
        params
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t, _)| t.is_finite())
    }
}

/// A digit slot fed to the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Masked,
    Visible(u16),
}

/// Encoder output for one history, with the decoder-side cross-attention
/// keys/values precomputed so repeated decodes never touch the encoder.
#[derive(Debug, Clone)]
pub struct EncoderState {
    /// L_input x d_m.
    pub h: Mat,
    /// Which positions hold real items (trailing block).
    pub real: Vec<bool>,
    /// Per decoder layer: K = h . wk + bk, L_input x d_m.
    pub cross_k: Vec<Mat>,
    pub cross_v: Vec<Mat>,
}

/// Per-digit categorical distributions, one row per digit slot.
#[derive(Debug, Clone)]
pub struct DigitDistributions {
    /// n x M; rows sum to 1.
    pub probs: Mat,
}

impl DigitDistributions {
    pub fn digit(&self, k: usize) -> &[f64] {
        self.probs.row(k)
    }

    /// Highest-probability codeword at digit k; ties break to the lowest
    /// codeword index.
    pub fn top_codeword(&self, k: usize) -> (u16, f64) {
        let row = self.probs.row(k);
        let mut best = (0usize, f64::NEG_INFINITY);
        for (v, &p) in row.iter().enumerate() {
            if p > best.1 {
                best = (v, p);
            }
        }
        (best.0 as u16, best.1)
    }
}

/// Runs the encoder in eval mode and caches cross-attention K/V per decoder
/// layer.
pub fn encode(
    context: &[SemanticId],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<EncoderState> {
    let (h, cache) = forward::encoder_forward(context, params, config, None)?;
    let mut cross_k = Vec::with_capacity(params.dec_layers.len());
    let mut cross_v = Vec::with_capacity(params.dec_layers.len());
    for lp in &params.dec_layers {
        cross_k.push(forward::linear(&h, &lp.cross_attn.wk, &lp.cross_attn.bk));
        cross_v.push(forward::linear(&h, &lp.cross_attn.wv, &lp.cross_attn.bv));
    }
    Ok(EncoderState {
        h,
        real: cache.real,
        cross_k,
        cross_v,
    })
}

/// One eval-mode decoder pass over the digit slots; returns distributions
/// for all n digits.
pub fn decode_digits(
    slots: &[Slot],
    state: &EncoderState,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<DigitDistributions> {
    if state.h.rows != config.l_input
        || state.h.cols != config.d_m
        || state.cross_k.len() != params.dec_layers.len()
    {
        return Err(Error::Runtime(
            "encoder state does not match model shape".into(),
        ));
    }
    let cache = forward::decoder_forward(
        slots,
        &state.h,
        &state.real,
        params,
        config,
        Some(state),
        None,
    )?;
    Ok(DigitDistributions { probs: cache.probs })
}

/// One training sample: a history, the target digits, and the mask views to
/// average over.
#[derive(Debug, Clone, Copy)]
pub struct ViewBatchItem<'a> {
    pub context: &'a [SemanticId],
    pub target: &'a SemanticId,
    pub views: &'a [MaskView],
}

fn smoothed_target(m: usize, alpha: f64, s: u16) -> Vec<f64> {
    let mut q = vec![alpha / m as f64; m];
    q[usize::from(s)] += 1.0 - alpha;
    q
}

fn validate_loss_batch(
    batch: &[ViewBatchItem<'_>],
    config: &ModelConfig,
    alpha: f64,
) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "label smoothing {alpha} outside [0, 1)"
        )));
    }
    if batch.is_empty() {
        return Err(Error::Runtime("empty training batch".into()));
    }
    for item in batch {
        if item.views.is_empty() {
            return Err(Error::Runtime("sample with no mask views".into()));
        }
        if item.target.len() != config.n {
            return Err(Error::Runtime(format!(
                "target has {} digits, model expects {}",
                item.target.len(),
                config.n
            )));
        }
        for &d in item.target.digits() {
            if usize::from(d) >= config.m {
                return Err(Error::Runtime(format!(
                    "target digit {d} outside codebook range 0..{}",
                    config.m
                )));
            }
        }
        for view in item.views {
            if view.masked.len() != config.n {
                return Err(Error::Runtime(format!(
                    "mask view covers {} digits, model expects {}",
                    view.masked.len(),
                    config.n
                )));
            }
            if !view.masked.iter().any(|&b| b) {
                return Err(Error::Runtime("mask view with empty masked set".into()));
            }
        }
    }
    Ok(())
}

fn slots_for(view: &MaskView, target: &SemanticId) -> Vec<Slot> {
    view.masked
        .iter()
        .zip(target.digits())
        .map(|(&m, &d)| if m { Slot::Masked } else { Slot::Visible(d) })
        .collect()
}

/// Mean (over samples, then views, then masked digits) cross-entropy against
/// label-smoothed targets, plus exact gradients for every parameter.
/// Dropout noise is drawn from `rng`; pass a dropout of 0 in `config` for a
/// deterministic loss.
pub fn loss_and_grad(
    batch: &[ViewBatchItem<'_>],
    params: &ModelParams,
    config: &ModelConfig,
    alpha: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(f64, ModelParams)> {
    validate_loss_batch(batch, config, alpha)?;
    let mut grads = ModelParams::zeros(config);
    let mut total = 0.0;
    let b = batch.len() as f64;
    for item in batch {
        let (h, enc_cache) =
            forward::encoder_forward(item.context, params, config, Some(&mut *rng))?;
        let r = item.views.len() as f64;
        let mut dh_acc = Mat::zeros(config.l_input, config.d_m);
        for view in item.views {
            let slots = slots_for(view, item.target);
            let dec = forward::decoder_forward(
                &slots,
                &h,
                &enc_cache.real,
                params,
                config,
                None,
                Some(&mut *rng),
            )?;
            let masked: Vec<usize> = view.masked_indices();
            let w = 1.0 / (masked.len() as f64 * r * b);
            let mut dlogits = Mat::zeros(config.n, config.m);
            for &k in &masked {
                let q = smoothed_target(config.m, alpha, item.target.digits()[k]);
                let p_row = dec.probs.row(k);
                let ce: f64 = q
                    .iter()
                    .zip(p_row.iter())
                    .map(|(&qv, &pv)| if qv > 0.0 { -qv * pv.ln() } else { 0.0 })
                    .sum();
                total += ce * w;
                for j in 0..config.m {
                    *dlogits.at_mut(k, j) = (p_row[j] - q[j]) * w;
                }
            }
            let dh = backward::decoder_backward(&dlogits, &dec, params, &mut grads, config);
            dh_acc.add_assign(&dh);
        }
        backward::encoder_backward(&dh_acc, &enc_cache, params, &mut grads, config);
    }
    Ok((total, grads))
}

/// The same objective without gradients, in eval mode (dropout off).
pub fn loss_only(
    batch: &[ViewBatchItem<'_>],
    params: &ModelParams,
    config: &ModelConfig,
    alpha: f64,
) -> Result<f64> {
    validate_loss_batch(batch, config, alpha)?;
    let mut total = 0.0;
    let b = batch.len() as f64;
    for item in batch {
        let (h, enc_cache) = forward::encoder_forward(item.context, params, config, None)?;
        let r = item.views.len() as f64;
        for view in item.views {
            let slots = slots_for(view, item.target);
            let dec =
                forward::decoder_forward(&slots, &h, &enc_cache.real, params, config, None, None)?;
            let masked = view.masked_indices();
            let w = 1.0 / (masked.len() as f64 * r * b);
            for &k in &masked {
                let q = smoothed_target(config.m, alpha, item.target.digits()[k]);
                let ce: f64 = q
                    .iter()
                    .zip(dec.probs.row(k).iter())
                    .map(|(&qv, &pv)| if qv > 0.0 { -qv * pv.ln() } else { 0.0 })
                    .sum();
                total += ce * w;
            }
        }
    }
    Ok(total)
}
