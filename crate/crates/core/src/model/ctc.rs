//! CTC loss and gradient via the forward-backward recursions in log space.
//!
//! The loss is `-log p(labels | logits)` where the probability marginalizes
//! over all frame alignments that collapse (remove repeats, then blanks) to
//! the label sequence. The blank class is the last logit column. -inf acts
//! as the boundary sentinel inside the recursions and never reaches the
//! outputs.

use crate::error::{Error, Result};

use super::math::{log_add, log_softmax, softmax_into};

/// Minimum frame count for a label sequence: its length plus one slot per
/// adjacent repeated pair.
pub fn min_frames(labels: &[usize]) -> usize {
    let repeats = labels.windows(2).filter(|w| w[0] == w[1]).count();
    labels.len() + repeats
}

/// CTC loss and gradient w.r.t. the raw logits (`T x (vocab+1)` rows).
pub fn ctc_loss_grad(logits: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    let frames = logits.len();
    if frames == 0 {
        return Err(Error::EmptyInput("ctc logits".into()));
    }
    let classes = logits[0].len();
    if classes < 2 {
        return Err(Error::InvalidConfig("ctc needs at least one real class plus blank".into()));
    }
    let blank = classes - 1;
    for row in logits {
        if row.len() != classes {
            return Err(Error::DimensionMismatch {
                context: "ctc logits row".into(),
                expected: classes,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ctc logits".into()));
        }
    }
    for &l in labels {
        if l >= blank {
            return Err(Error::TokenOutOfRange { id: l, vocab: blank });
        }
    }
    let required = min_frames(labels);
    if frames < required {
        return Err(Error::LabelTooLong { frames, required });
    }

    let log_probs: Vec<Vec<f64>> = logits.iter().map(|row| log_softmax(row)).collect();

    // Blank-extended sequence: blank at even positions, labels at odd ones.
    let s_len = 2 * labels.len() + 1;
    let ext = |s: usize| -> usize { if s % 2 == 0 { blank } else { labels[s / 2] } };

    let neg_inf = f64::NEG_INFINITY;
    let mut alpha = vec![vec![neg_inf; s_len]; frames];
    alpha[0][0] = log_probs[0][blank];
    if s_len > 1 {
        alpha[0][1] = log_probs[0][ext(1)];
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = log_add(acc, alpha[t - 1][s - 1]);
            }
            if s >= 2 && ext(s) != blank && ext(s) != ext(s - 2) {
                acc = log_add(acc, alpha[t - 1][s - 2]);
            }
            alpha[t][s] = acc + log_probs[t][ext(s)];
        }
    }

    let mut log_p = alpha[frames - 1][s_len - 1];
    if s_len >= 2 {
        log_p = log_add(log_p, alpha[frames - 1][s_len - 2]);
    }
    if !log_p.is_finite() {
        // feasibility was checked above, so this is a genuine numeric fault
        return Err(Error::NonFinite("ctc path probability".into()));
    }
    let loss = (-log_p).max(0.0);

    let mut beta = vec![vec![neg_inf; s_len]; frames];
    beta[frames - 1][s_len - 1] = log_probs[frames - 1][ext(s_len - 1)];
    if s_len >= 2 {
        beta[frames - 1][s_len - 2] = log_probs[frames - 1][ext(s_len - 2)];
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[t + 1][s];
            if s + 1 < s_len {
                acc = log_add(acc, beta[t + 1][s + 1]);
            }
            if s + 2 < s_len && ext(s + 2) != blank && ext(s + 2) != ext(s) {
                acc = log_add(acc, beta[t + 1][s + 2]);
            }
            beta[t][s] = acc + log_probs[t][ext(s)];
        }
    }

    // d loss / d logit[t][k] = softmax[t][k] - gamma[t][k], where gamma is
    // the posterior probability of emitting class k at frame t.
    let mut dlogits = vec![vec![0.0; classes]; frames];
    let mut post = vec![0.0; classes];
    for t in 0..frames {
        let mut acc = vec![neg_inf; classes];
        for s in 0..s_len {
            let k = ext(s);
            let w = alpha[t][s] + beta[t][s] - log_probs[t][k];
            acc[k] = log_add(acc[k], w);
        }
        softmax_into(&logits[t], &mut post);
        for k in 0..classes {
            let gamma = if acc[k] == neg_inf { 0.0 } else { (acc[k] - log_p).exp() };
            dlogits[t][k] = post[k] - gamma;
        }
    }

    Ok((loss, dlogits))
}

/// Per-frame argmax, collapse repeats, drop blanks. Blank is the last
/// class.
pub fn greedy_decode(ctc_logits: &[Vec<f64>]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for row in ctc_logits {
        let blank = row.len() - 1;
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if best != prev && best != blank {
            out.push(best);
        }
        prev = best;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn certain_single_label_has_zero_loss() {
        // T=1, one real class: a huge logit margin makes p(label) ~ 1.
        let logits = vec![vec![50.0, -50.0]];
        let (loss, _) = ctc_loss_grad(&logits, &[0]).unwrap();
        assert!(loss.abs() < 1e-8, "loss {loss}");
    }

    #[test]
    fn uniform_three_frame_case() {
        // vocab {a}, uniform logits: p = 1/2 per class per frame. Of the
        // 2^3 alignment strings, 6 collapse to "a", so loss = -ln(6/8).
        let logits = vec![vec![0.0, 0.0]; 3];
        let (loss, _) = ctc_loss_grad(&logits, &[0]).unwrap();
        let expected = -(0.75f64).ln();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    }

    #[test]
    fn infeasible_label_errors() {
        let logits = vec![vec![0.0, 0.0, 0.0]; 2];
        let err = ctc_loss_grad(&logits, &[0, 0]).unwrap_err();
        assert!(matches!(err, Error::LabelTooLong { frames: 2, required: 3 }));
    }

    #[test]
    fn empty_labels_are_all_blank() {
        let logits = vec![vec![0.0, 0.0]; 2];
        let (loss, _) = ctc_loss_grad(&logits, &[]).unwrap();
        // p = (1/2)^2, one all-blank path
        assert!((loss - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_errors() {
        let logits = vec![vec![0.0, 0.0]; 2];
        assert!(matches!(
            ctc_loss_grad(&logits, &[1]).unwrap_err(),
            Error::TokenOutOfRange { id: 1, vocab: 1 }
        ));
    }

    #[test]
    fn greedy_collapse_rules() {
        // class ids: 0=a, 1=b, 2=blank
        let row = |k: usize| {
            let mut r = vec![0.0; 3];
            r[k] = 1.0;
            r
        };
        assert_eq!(greedy_decode(&[row(0), row(0), row(2), row(1)]), vec![0, 1]);
        assert_eq!(greedy_decode(&[row(2), row(2)]), Vec::<usize>::new());
        assert_eq!(greedy_decode(&[row(0), row(2), row(0)]), vec![0, 0]);
    }

    #[test]
    fn gradient_sums_to_zero_per_frame_when_tight() {
        // softmax rows sum to 1 and posteriors sum to 1, so each gradient
        // row sums to ~0.
        let logits = vec![vec![0.3, -0.2, 0.9], vec![1.0, 0.0, -1.0], vec![0.0, 0.5, 0.25]];
        let (_, d) = ctc_loss_grad(&logits, &[0, 1]).unwrap();
        for row in d {
            let s: f64 = row.iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }
}
