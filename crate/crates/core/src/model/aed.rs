//! Attention-decoder (AED) loss: mean cross-entropy of the gold tokens
//! under the decoder logits, teacher-forced.

use crate::error::{Error, Result};

use super::math::{log_softmax, softmax_into};

/// Returns the mean per-position cross-entropy and its gradient w.r.t. the
/// decoder logits (`|labels| x vocab`).
pub fn aed_loss_grad(decoder_logits: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("aed labels".into()));
    }
    if decoder_logits.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "aed logits rows".into(),
            expected: labels.len(),
            got: decoder_logits.len(),
        });
    }
    let vocab = decoder_logits[0].len();
    let inv_len = 1.0 / labels.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = vec![vec![0.0; vocab]; labels.len()];
    for (i, (&gold, row)) in labels.iter().zip(decoder_logits).enumerate() {
        if row.len() != vocab {
            return Err(Error::DimensionMismatch {
                context: "aed logits row".into(),
                expected: vocab,
                got: row.len(),
            });
        }
        if gold >= vocab {
            return Err(Error::TokenOutOfRange { id: gold, vocab });
        }
        let lp = log_softmax(row);
        loss -= lp[gold] * inv_len;
        softmax_into(row, &mut dlogits[i]);
        for (k, d) in dlogits[i].iter_mut().enumerate() {
            if k == gold {
                *d -= 1.0;
            }
            *d *= inv_len;
        }
    }
    Ok((loss, dlogits))
}
