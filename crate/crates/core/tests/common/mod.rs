//! Independent oracles used by the integration tests. These deliberately
//! avoid the library's own code paths: the CTC oracle enumerates raw
//! alignments, the edit-distance oracle recurses, and gradients come from
//! central finite differences.

#![allow(dead_code)]

use fedseq_core::model::{loss_and_grad, ModelConfig, Utterance};
use fedseq_core::params::ParamVector;

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Collapse an alignment string: merge consecutive repeats, then drop
/// blanks.
pub fn collapse(alignment: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &a in alignment {
        if a != prev && a != blank {
            out.push(a);
        }
        prev = a;
    }
    out
}

/// Total probability, under per-frame softmax, of all alignments that
/// collapse to `labels`. Exhaustive over all (classes)^T strings.
pub fn ctc_probability_exhaustive(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let frames = logits.len();
    let classes = logits[0].len();
    let blank = classes - 1;
    let probs: Vec<Vec<f64>> = logits.iter().map(|r| softmax(r)).collect();
    let mut total = 0.0;
    let mut alignment = vec![0usize; frames];
    loop {
        if collapse(&alignment, blank) == labels {
            let p: f64 = alignment.iter().enumerate().map(|(t, &k)| probs[t][k]).product();
            total += p;
        }
        // odometer increment over classes^frames
        let mut pos = 0;
        loop {
            if pos == frames {
                return total;
            }
            alignment[pos] += 1;
            if alignment[pos] < classes {
                break;
            }
            alignment[pos] = 0;
            pos += 1;
        }
    }
}

/// Oracle CTC loss: `-ln` of the exhaustive probability.
pub fn ctc_loss_exhaustive(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    -ctc_probability_exhaustive(logits, labels).ln()
}

/// Naive recursive edit distance.
pub fn levenshtein_recursive(a: &[usize], b: &[usize]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let cost = usize::from(a[0] != b[0]);
    let sub = levenshtein_recursive(&a[1..], &b[1..]) + cost;
    let del = levenshtein_recursive(&a[1..], b) + 1;
    let ins = levenshtein_recursive(a, &b[1..]) + 1;
    sub.min(del).min(ins)
}

/// Central finite differences of the combined loss over every parameter.
pub fn finite_difference_grad(
    params: &ParamVector,
    cfg: &ModelConfig,
    u: &Utterance,
    alpha: f64,
    step: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus.values_mut()[i] += step;
        let (bp, _) = loss_and_grad(&plus, cfg, u, alpha).expect("fd plus");
        let mut minus = params.clone();
        minus.values_mut()[i] -= step;
        let (bm, _) = loss_and_grad(&minus, cfg, u, alpha).expect("fd minus");
        grad[i] = (bp.combined - bm.combined) / (2.0 * step);
    }
    grad
}

/// All label sequences over `vocab` with length in `0..=max_len`.
pub fn all_label_sequences(vocab: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            for k in 0..vocab {
                let mut s = seq.clone();
                s.push(k);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}
