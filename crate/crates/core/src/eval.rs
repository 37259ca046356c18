//! Held-out evaluation: mean combined loss plus token error rate from
//! greedy CTC decoding.

use crate::diag::token_error_rate;
use crate::error::Result;
use crate::model::{aed_loss_grad, ctc_loss_grad, forward, greedy_decode, ModelConfig, Utterance};
use crate::parallel::maybe_par_map;
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub ter: f64,
}

/// Evaluate on a flat utterance list. The per-utterance work may run in
/// parallel; reduction happens in index order, so results do not depend on
/// the worker count.
pub fn evaluate(
    params: &ParamVector,
    cfg: &ModelConfig,
    utterances: &[Utterance],
    alpha: f64,
    parallel: bool,
) -> Result<EvalMetrics> {
    let per_utt: Vec<Result<(f64, Vec<usize>)>> = maybe_par_map(utterances, parallel, |u| {
        let out = forward(params, cfg, u)?;
        let (ctc, _) = ctc_loss_grad(&out.ctc_logits, &u.labels)?;
        let aed = match (&out.decoder_logits, alpha < 1.0) {
            (Some(dl), true) => aed_loss_grad(dl, &u.labels)?.0,
            _ => 0.0,
        };
        let combined = alpha * ctc + (1.0 - alpha) * aed;
        Ok((combined, greedy_decode(&out.ctc_logits)))
    });

    let mut loss_sum = 0.0;
    let mut hyps = Vec::with_capacity(utterances.len());
    let mut refs = Vec::with_capacity(utterances.len());
    for (res, u) in per_utt.into_iter().zip(utterances) {
        let (loss, hyp) = res?;
        loss_sum += loss;
        hyps.push(hyp);
        refs.push(u.labels.clone());
    }
    let loss = loss_sum / utterances.len().max(1) as f64;
    let ter = token_error_rate(&hyps, &refs)?;
    Ok(EvalMetrics { loss, ter })
}
