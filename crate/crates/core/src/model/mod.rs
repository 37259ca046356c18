//! Tiny sequence model: a per-frame encoder, a CTC head, and a minimal
//! single-head attention decoder, with analytic gradients throughout.
//!
//! The encoder block is `{optional pre-LN} -> affine -> ReLU -> {optional
//! post-LN}` applied per frame after an input projection, so all blocks are
//! hidden-to-hidden and the parameter layout does not depend on the norm
//! placement. The decoder attends over encoder states with a query built
//! from the embedding of the previous gold token (teacher forcing).

mod aed;
mod augment;
mod ctc;
mod math;

use std::ops::Range;
use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{LayerLayout, ParamVector};
use crate::rng::{derive_rng, stream};

pub use aed::aed_loss_grad;
pub use augment::{augment, AugmentConfig};
pub use ctc::{ctc_loss_grad, greedy_decode, min_frames};

use math::{affine, affine_backward, layer_norm, layer_norm_backward};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    Pre,
    Post,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub num_encoder_blocks: usize,
    /// Real token classes; blank takes the extra last CTC slot.
    pub vocab_size: usize,
    pub norm_placement: NormPlacement,
    pub decoder_enabled: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 1 {
            return Err(Error::InvalidConfig("vocab_size must be >= 1".into()));
        }
        if self.num_encoder_blocks < 1 {
            return Err(Error::InvalidConfig("num_encoder_blocks must be >= 1".into()));
        }
        if self.feature_dim < 1 || self.hidden_dim < 1 {
            return Err(Error::InvalidConfig("feature_dim and hidden_dim must be >= 1".into()));
        }
        Ok(())
    }

    /// Blank class index: the last CTC logit slot.
    pub fn blank(&self) -> usize {
        self.vocab_size
    }

    /// Total CTC output classes (vocab plus blank).
    pub fn num_classes(&self) -> usize {
        self.vocab_size + 1
    }

    /// Parameter layout. Norm gain/bias entries are present for every
    /// placement (unused under `none`), so pre and post layouts are
    /// identical and checkpoints survive placement sweeps.
    pub fn layout(&self) -> LayerLayout {
        let d = self.feature_dim;
        let h = self.hidden_dim;
        let c = self.num_classes();
        let mut entries: Vec<(String, usize)> =
            vec![("enc_in.w".into(), d * h), ("enc_in.b".into(), h)];
        for b in 0..self.num_encoder_blocks {
            entries.push((format!("enc{b}.ln_g"), h));
            entries.push((format!("enc{b}.ln_b"), h));
            entries.push((format!("enc{b}.w"), h * h));
            entries.push((format!("enc{b}.b"), h));
        }
        entries.push(("ctc.w".into(), h * c));
        entries.push(("ctc.b".into(), c));
        if self.decoder_enabled {
            entries.push(("dec.emb".into(), c * h));
            entries.push(("dec_q.w".into(), h * h));
            entries.push(("dec_q.b".into(), h));
            entries.push(("dec_out.w".into(), 2 * h * self.vocab_size));
            entries.push(("dec_out.b".into(), self.vocab_size));
        }
        LayerLayout::from_lengths(entries).expect("model layout is well-formed")
    }
}

/// One training sample: a frame matrix and its token labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub frames: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// CTC needs one frame per label plus one per adjacent repeated pair.
    pub fn ctc_feasible(&self) -> bool {
        self.frames.len() >= min_frames(&self.labels)
    }

    fn check_dims(&self, cfg: &ModelConfig) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::EmptyInput("utterance frames".into()));
        }
        for f in &self.frames {
            if f.len() != cfg.feature_dim {
                return Err(Error::DimensionMismatch {
                    context: "utterance frame width".into(),
                    expected: cfg.feature_dim,
                    got: f.len(),
                });
            }
        }
        Ok(())
    }
}

/// CTC and AED branch losses and their interpolation
/// `combined = alpha * ctc + (1 - alpha) * aed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ctc: f64,
    pub aed: f64,
    pub combined: f64,
    pub alpha: f64,
}

impl LossBreakdown {
    fn new(ctc: f64, aed: f64, alpha: f64) -> Self {
        Self { ctc, aed, combined: alpha * ctc + (1.0 - alpha) * aed, alpha }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub ctc_logits: Vec<Vec<f64>>,
    /// Present iff the decoder is enabled; teacher-forced on gold labels.
    pub decoder_logits: Option<Vec<Vec<f64>>>,
}

/// Fresh random initialization: affine weights at 1/sqrt(fan-in) scale,
/// norm gains one, biases zero.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamVector {
    let layout = Arc::new(cfg.layout());
    let mut rng = derive_rng(seed, &[stream::INIT]);
    let h = cfg.hidden_dim as f64;
    let mut values = vec![0.0; layout.total_len()];
    for e in layout.entries() {
        let slice = &mut values[e.offset..e.offset + e.len];
        if e.name.ends_with(".ln_g") {
            slice.iter_mut().for_each(|v| *v = 1.0);
        } else if e.name.ends_with(".b") || e.name.ends_with(".ln_b") {
            // biases stay zero
        } else {
            let std = if e.name == "enc_in.w" {
                1.0 / (cfg.feature_dim as f64).sqrt()
            } else if e.name == "dec_out.w" {
                1.0 / (2.0 * h).sqrt()
            } else if e.name == "dec.emb" {
                0.3
            } else {
                1.0 / h.sqrt()
            };
            let dist = Normal::new(0.0, std).expect("valid normal");
            slice.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        }
    }
    ParamVector::new(values, layout).expect("init matches layout")
}

struct BlockTrace {
    ln_xhat: Vec<Vec<f64>>,
    ln_inv_std: Vec<f64>,
    affine_in: Vec<Vec<f64>>,
    pre_act: Vec<Vec<f64>>,
    output: Vec<Vec<f64>>,
}

struct DecTrace {
    prev_ids: Vec<usize>,
    emb: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    attn: Vec<Vec<f64>>,
    ctx: Vec<Vec<f64>>,
    logits: Vec<Vec<f64>>,
}

struct Trace {
    proj: Vec<Vec<f64>>,
    blocks: Vec<BlockTrace>,
    hidden_last: usize,
    ctc_logits: Vec<Vec<f64>>,
    dec: Option<DecTrace>,
}

impl Trace {
    fn hidden(&self) -> &[Vec<f64>] {
        if self.blocks.is_empty() {
            &self.proj
        } else {
            &self.blocks[self.hidden_last].output
        }
    }
}

fn forward_traced(
    params: &ParamVector,
    cfg: &ModelConfig,
    u: &Utterance,
    with_decoder: bool,
) -> Result<Trace> {
    cfg.validate()?;
    u.check_dims(cfg)?;
    let layout = params.layout();
    let expected = cfg.layout();
    if layout.total_len() != expected.total_len() {
        return Err(Error::DimensionMismatch {
            context: "params for model config".into(),
            expected: expected.total_len(),
            got: layout.total_len(),
        });
    }
    let h = cfg.hidden_dim;
    let t_len = u.frames.len();
    let get = |name: &str| -> Result<&[f64]> {
        let r = layout.range(name)?;
        Ok(&params.values()[r])
    };

    // input projection
    let w_in = get("enc_in.w")?;
    let b_in = get("enc_in.b")?;
    let mut proj = vec![vec![0.0; h]; t_len];
    for (frame, out) in u.frames.iter().zip(proj.iter_mut()) {
        affine(frame, w_in, b_in, out);
    }

    let mut blocks = Vec::with_capacity(cfg.num_encoder_blocks);
    let mut current = proj.clone();
    for b in 0..cfg.num_encoder_blocks {
        let gain = get(&format!("enc{b}.ln_g"))?;
        let bias = get(&format!("enc{b}.ln_b"))?;
        let w = get(&format!("enc{b}.w"))?;
        let bb = get(&format!("enc{b}.b"))?;

        let mut ln_xhat = Vec::new();
        let mut ln_inv_std = Vec::new();
        let affine_in: Vec<Vec<f64>> = match cfg.norm_placement {
            NormPlacement::Pre => {
                ln_xhat = vec![vec![0.0; h]; t_len];
                ln_inv_std = vec![0.0; t_len];
                let mut z = vec![vec![0.0; h]; t_len];
                for t in 0..t_len {
                    ln_inv_std[t] =
                        layer_norm(&current[t], gain, bias, &mut ln_xhat[t], &mut z[t]);
                }
                z
            }
            NormPlacement::Post | NormPlacement::None => current.clone(),
        };

        let mut pre_act = vec![vec![0.0; h]; t_len];
        for t in 0..t_len {
            affine(&affine_in[t], w, bb, &mut pre_act[t]);
        }
        let relu: Vec<Vec<f64>> = pre_act
            .iter()
            .map(|row| row.iter().map(|v| v.max(0.0)).collect())
            .collect();

        let output = match cfg.norm_placement {
            NormPlacement::Post => {
                ln_xhat = vec![vec![0.0; h]; t_len];
                ln_inv_std = vec![0.0; t_len];
                let mut out = vec![vec![0.0; h]; t_len];
                for t in 0..t_len {
                    ln_inv_std[t] =
                        layer_norm(&relu[t], gain, bias, &mut ln_xhat[t], &mut out[t]);
                }
                out
            }
            NormPlacement::Pre | NormPlacement::None => relu,
        };

        current = output.clone();
        blocks.push(BlockTrace { ln_xhat, ln_inv_std, affine_in, pre_act, output });
    }

    let hidden_last = blocks.len().saturating_sub(1);
    let hidden = if blocks.is_empty() { &proj } else { &blocks[hidden_last].output };

    let w_ctc = get("ctc.w")?;
    let b_ctc = get("ctc.b")?;
    let mut ctc_logits = vec![vec![0.0; cfg.num_classes()]; t_len];
    for t in 0..t_len {
        affine(&hidden[t], w_ctc, b_ctc, &mut ctc_logits[t]);
    }

    let dec = if with_decoder {
        if !cfg.decoder_enabled {
            return Err(Error::InvalidConfig("decoder outputs requested but decoder disabled".into()));
        }
        let emb_table = get("dec.emb")?;
        let w_q = get("dec_q.w")?;
        let b_q = get("dec_q.b")?;
        let w_o = get("dec_out.w")?;
        let b_o = get("dec_out.b")?;
        let scale = 1.0 / (h as f64).sqrt();
        let labels = &u.labels;
        let l_len = labels.len();
        let sos = cfg.vocab_size;
        let mut prev_ids = Vec::with_capacity(l_len);
        let mut emb = Vec::with_capacity(l_len);
        let mut q = vec![vec![0.0; h]; l_len];
        let mut attn = vec![vec![0.0; t_len]; l_len];
        let mut ctx = vec![vec![0.0; h]; l_len];
        let mut logits = vec![vec![0.0; cfg.vocab_size]; l_len];
        for i in 0..l_len {
            let prev = if i == 0 { sos } else { labels[i - 1] };
            if prev > sos {
                return Err(Error::TokenOutOfRange { id: prev, vocab: cfg.vocab_size });
            }
            prev_ids.push(prev);
            let e = emb_table[prev * h..(prev + 1) * h].to_vec();
            affine(&e, w_q, b_q, &mut q[i]);
            let scores: Vec<f64> = hidden
                .iter()
                .map(|ht| ht.iter().zip(&q[i]).map(|(a, b)| a * b).sum::<f64>() * scale)
                .collect();
            math::softmax_into(&scores, &mut attn[i]);
            for (a, ht) in attn[i].iter().zip(hidden) {
                for (c, v) in ctx[i].iter_mut().zip(ht) {
                    *c += a * v;
                }
            }
            let mut cat = ctx[i].clone();
            cat.extend_from_slice(&q[i]);
            affine(&cat, w_o, b_o, &mut logits[i]);
            emb.push(e);
        }
        Some(DecTrace { prev_ids, emb, q, attn, ctx, logits })
    } else {
        None
    };

    Ok(Trace { proj, blocks, hidden_last, ctc_logits, dec })
}

/// Run the model on one utterance. Decoder logits are present iff the
/// decoder is enabled.
pub fn forward(params: &ParamVector, cfg: &ModelConfig, u: &Utterance) -> Result<ForwardOutput> {
    let trace = forward_traced(params, cfg, u, cfg.decoder_enabled)?;
    Ok(ForwardOutput {
        ctc_logits: trace.ctc_logits,
        decoder_logits: trace.dec.map(|d| d.logits),
    })
}

fn two_mut(v: &mut [f64], a: Range<usize>, b: Range<usize>) -> (&mut [f64], &mut [f64]) {
    assert!(a.end <= b.start, "ranges must be ordered and disjoint");
    let (left, right) = v.split_at_mut(b.start);
    let b_len = b.end - b.start;
    (&mut left[a], &mut right[..b_len])
}

/// Combined CTC-AED loss and its gradient over the full parameter vector.
///
/// `alpha` is the CTC weight; `alpha < 1` requires the decoder. At
/// `alpha = 1` the decoder parameters receive exactly zero gradient.
pub fn loss_and_grad(
    params: &ParamVector,
    cfg: &ModelConfig,
    u: &Utterance,
    alpha: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig("alpha must be in [0,1]".into()));
    }
    if alpha < 1.0 && !cfg.decoder_enabled {
        return Err(Error::InvalidConfig("alpha < 1 requires the decoder".into()));
    }
    let with_decoder = cfg.decoder_enabled && alpha < 1.0;
    let trace = forward_traced(params, cfg, u, with_decoder)?;
    let layout = params.layout();
    let h = cfg.hidden_dim;
    let t_len = u.frames.len();

    let (ctc_loss, dctc) = ctc_loss_grad(&trace.ctc_logits, &u.labels)?;
    let (aed_loss, daed) = if with_decoder {
        let dec = trace.dec.as_ref().expect("decoder trace");
        let (l, d) = aed_loss_grad(&dec.logits, &u.labels)?;
        (l, Some(d))
    } else {
        (0.0, None)
    };
    let breakdown = LossBreakdown::new(ctc_loss, aed_loss, alpha);

    let mut grad = vec![0.0; params.len()];
    let mut d_hidden = vec![vec![0.0; h]; t_len];

    // CTC head
    if alpha > 0.0 {
        let r_w = layout.range("ctc.w")?;
        let r_b = layout.range("ctc.b")?;
        let w_ctc = params.values()[r_w.clone()].to_vec();
        let (dw, db) = two_mut(&mut grad, r_w, r_b);
        let hidden = trace.hidden();
        for t in 0..t_len {
            let dy: Vec<f64> = dctc[t].iter().map(|v| alpha * v).collect();
            affine_backward(&hidden[t], &w_ctc, &dy, dw, db, Some(&mut d_hidden[t]));
        }
    }

    // decoder, accumulating into the encoder states through the attention
    if let Some(daed) = daed {
        let dec = trace.dec.as_ref().expect("decoder trace");
        let scale = 1.0 / (h as f64).sqrt();
        let beta = 1.0 - alpha;
        let w_o = params.values()[layout.range("dec_out.w")?].to_vec();
        let w_q = params.values()[layout.range("dec_q.w")?].to_vec();
        let hidden = trace.hidden();
        for i in 0..dec.logits.len() {
            let dy: Vec<f64> = daed[i].iter().map(|v| beta * v).collect();
            let mut cat = dec.ctx[i].clone();
            cat.extend_from_slice(&dec.q[i]);
            let mut dcat = vec![0.0; 2 * h];
            {
                let (dw_o, db_o) =
                    two_mut(&mut grad, layout.range("dec_out.w")?, layout.range("dec_out.b")?);
                affine_backward(&cat, &w_o, &dy, dw_o, db_o, Some(&mut dcat));
            }
            let dctx = &dcat[..h];
            let mut dq = dcat[h..].to_vec();

            // context = sum_t attn_t * hidden_t
            let mut dattn = vec![0.0; t_len];
            for t in 0..t_len {
                dattn[t] = dctx.iter().zip(&hidden[t]).map(|(a, b)| a * b).sum();
                for (dh, dc) in d_hidden[t].iter_mut().zip(dctx) {
                    *dh += dec.attn[i][t] * dc;
                }
            }
            // softmax backward
            let dot: f64 = dec.attn[i].iter().zip(&dattn).map(|(a, d)| a * d).sum();
            let dscores: Vec<f64> =
                dec.attn[i].iter().zip(&dattn).map(|(a, d)| a * (d - dot)).collect();
            // scores_t = <q, hidden_t> * scale
            for t in 0..t_len {
                for k in 0..h {
                    dq[k] += dscores[t] * hidden[t][k] * scale;
                    d_hidden[t][k] += dscores[t] * dec.q[i][k] * scale;
                }
            }
            // query affine and embedding row
            let mut demb = vec![0.0; h];
            {
                let (dw_q, db_q) =
                    two_mut(&mut grad, layout.range("dec_q.w")?, layout.range("dec_q.b")?);
                affine_backward(&dec.emb[i], &w_q, &dq, dw_q, db_q, Some(&mut demb));
            }
            let r_emb = layout.range("dec.emb")?;
            let row = r_emb.start + dec.prev_ids[i] * h;
            for (k, d) in demb.iter().enumerate() {
                grad[row + k] += d;
            }
        }
    }

    // encoder blocks in reverse
    let mut dy = d_hidden;
    for b in (0..cfg.num_encoder_blocks).rev() {
        let bt = &trace.blocks[b];
        let r_g = layout.range(&format!("enc{b}.ln_g"))?;
        let r_gb = layout.range(&format!("enc{b}.ln_b"))?;
        let r_w = layout.range(&format!("enc{b}.w"))?;
        let r_b = layout.range(&format!("enc{b}.b"))?;
        let gain = params.values()[r_g.clone()].to_vec();
        let w = params.values()[r_w.clone()].to_vec();

        // post-LN backward first when present
        let d_relu: Vec<Vec<f64>> = match cfg.norm_placement {
            NormPlacement::Post => {
                let (dgain, dbias) = two_mut(&mut grad, r_g.clone(), r_gb.clone());
                let mut out = vec![vec![0.0; h]; t_len];
                for t in 0..t_len {
                    layer_norm_backward(
                        &bt.ln_xhat[t],
                        bt.ln_inv_std[t],
                        &gain,
                        &dy[t],
                        dgain,
                        dbias,
                        &mut out[t],
                    );
                }
                out
            }
            NormPlacement::Pre | NormPlacement::None => dy,
        };

        // ReLU and affine
        let mut dx_affine = vec![vec![0.0; h]; t_len];
        {
            let (dw, db) = two_mut(&mut grad, r_w, r_b);
            for t in 0..t_len {
                let da: Vec<f64> = d_relu[t]
                    .iter()
                    .zip(&bt.pre_act[t])
                    .map(|(d, a)| if *a > 0.0 { *d } else { 0.0 })
                    .collect();
                affine_backward(&bt.affine_in[t], &w, &da, dw, db, Some(&mut dx_affine[t]));
            }
        }

        // pre-LN backward when present
        dy = match cfg.norm_placement {
            NormPlacement::Pre => {
                let (dgain, dbias) = two_mut(&mut grad, r_g, r_gb);
                let mut out = vec![vec![0.0; h]; t_len];
                for t in 0..t_len {
                    layer_norm_backward(
                        &bt.ln_xhat[t],
                        bt.ln_inv_std[t],
                        &gain,
                        &dx_affine[t],
                        dgain,
                        dbias,
                        &mut out[t],
                    );
                }
                out
            }
            NormPlacement::Post | NormPlacement::None => dx_affine,
        };
    }

    // input projection
    {
        let r_w = layout.range("enc_in.w")?;
        let r_b = layout.range("enc_in.b")?;
        let w_in = params.values()[r_w.clone()].to_vec();
        let (dw, db) = two_mut(&mut grad, r_w, r_b);
        for t in 0..t_len {
            affine_backward(&u.frames[t], &w_in, &dy[t], dw, db, None);
        }
    }

    Ok((breakdown, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            feature_dim: 2,
            hidden_dim: 4,
            num_encoder_blocks: 2,
            vocab_size: 2,
            norm_placement: NormPlacement::Pre,
            decoder_enabled: true,
        }
    }

    fn utterance() -> Utterance {
        Utterance {
            frames: vec![vec![0.3, -0.8], vec![1.1, 0.4], vec![-0.2, 0.9]],
            labels: vec![0, 1],
        }
    }

    #[test]
    fn ctc_logit_shape_contract() {
        let cfg = ModelConfig {
            feature_dim: 2,
            hidden_dim: 3,
            num_encoder_blocks: 1,
            vocab_size: 2,
            norm_placement: NormPlacement::None,
            decoder_enabled: false,
        };
        let p = init_params(&cfg, 1);
        let u = Utterance { frames: vec![vec![0.5, -0.25]], labels: vec![] };
        let out = forward(&p, &cfg, &u).unwrap();
        assert_eq!(out.ctc_logits.len(), 1);
        assert_eq!(out.ctc_logits[0].len(), 3);
        assert!(out.decoder_logits.is_none());
    }

    #[test]
    fn zero_params_give_uniform_logits() {
        let cfg = tiny_cfg();
        let p = ParamVector::zeros(Arc::new(cfg.layout()));
        let out = forward(&p, &cfg, &utterance()).unwrap();
        for row in &out.ctc_logits {
            for v in row {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn pre_and_post_have_identical_param_counts() {
        let mut cfg = tiny_cfg();
        cfg.norm_placement = NormPlacement::Pre;
        let pre = cfg.layout().total_len();
        cfg.norm_placement = NormPlacement::Post;
        let post = cfg.layout().total_len();
        assert_eq!(pre, post);
    }

    #[test]
    fn combined_loss_interpolates() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg, 3);
        let (b, _) = loss_and_grad(&p, &cfg, &utterance(), 0.3).unwrap();
        assert!((b.combined - (0.3 * b.ctc + 0.7 * b.aed)).abs() < 1e-12);
    }

    #[test]
    fn alpha_one_zeroes_decoder_grads() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg, 3);
        let (b, grad) = loss_and_grad(&p, &cfg, &utterance(), 1.0).unwrap();
        assert_eq!(b.combined, b.ctc);
        for name in ["dec.emb", "dec_q.w", "dec_q.b", "dec_out.w", "dec_out.b"] {
            let r = p.layout().range(name).unwrap();
            assert!(grad[r].iter().all(|v| *v == 0.0), "{name}");
        }
    }

    #[test]
    fn alpha_below_one_needs_decoder() {
        let cfg = ModelConfig { decoder_enabled: false, ..tiny_cfg() };
        let p = init_params(&cfg, 3);
        assert!(loss_and_grad(&p, &cfg, &utterance(), 0.5).is_err());
    }

    #[test]
    fn frame_width_mismatch_errors() {
        let cfg = tiny_cfg();
        let p = init_params(&cfg, 3);
        let u = Utterance { frames: vec![vec![0.0; 5]], labels: vec![0] };
        assert!(forward(&p, &cfg, &u).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences_smoke() {
        // full sweep lives in the integration suite; this is a fast guard
        for placement in [NormPlacement::Pre, NormPlacement::Post, NormPlacement::None] {
            let cfg = ModelConfig { norm_placement: placement, ..tiny_cfg() };
            let p = init_params(&cfg, 11);
            let u = utterance();
            let alpha = 0.4;
            let (_, grad) = loss_and_grad(&p, &cfg, &u, alpha).unwrap();
            let step = 1e-5;
            for &i in &[0usize, 9, 20, p.len() - 1, p.len() / 2] {
                let mut plus = p.clone();
                plus.values_mut()[i] += step;
                let (bp, _) = loss_and_grad(&plus, &cfg, &u, alpha).unwrap();
                let mut minus = p.clone();
                minus.values_mut()[i] -= step;
                let (bm, _) = loss_and_grad(&minus, &cfg, &u, alpha).unwrap();
                let fd = (bp.combined - bm.combined) / (2.0 * step);
                let denom = fd.abs().max(grad[i].abs()).max(1e-8);
                assert!(
                    ((fd - grad[i]).abs() / denom) < 1e-4,
                    "coord {i} ({placement:?}): fd {fd} vs {g}",
                    g = grad[i]
                );
            }
        }
    }
}
