//! CTC loss against exhaustive alignment enumeration, plus the probability
//! mass check.

mod common;

use fedseq_core::model::{ctc_loss_grad, min_frames};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_logits(rng: &mut impl Rng, frames: usize, classes: usize) -> Vec<Vec<f64>> {
    (0..frames)
        .map(|_| (0..classes).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect()
}

#[test]
fn matches_exhaustive_enumeration_on_all_feasible_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(424242);
    let mut checked = 0usize;
    for vocab in 1..=3usize {
        let classes = vocab + 1;
        for frames in 1..=5usize {
            for labels in common::all_label_sequences(vocab, 3) {
                if frames < min_frames(&labels) {
                    continue;
                }
                // a couple random draws per instance here; the acceptance
                // suite runs the full 50-draw sweep
                for _ in 0..3 {
                    let logits = random_logits(&mut rng, frames, classes);
                    let (loss, _) = ctc_loss_grad(&logits, &labels).unwrap();
                    let oracle = common::ctc_loss_exhaustive(&logits, &labels);
                    assert!(
                        (loss - oracle).abs() < 1e-8,
                        "vocab {vocab} T {frames} labels {labels:?}: {loss} vs {oracle}"
                    );
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 500, "checked only {checked} instances");
}

#[test]
fn probability_mass_sums_to_one_on_tiny_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for vocab in 1..=2usize {
        for frames in 1..=4usize {
            let logits = random_logits(&mut rng, frames, vocab + 1);
            let mut mass = 0.0;
            for labels in common::all_label_sequences(vocab, frames) {
                if frames < min_frames(&labels) {
                    continue;
                }
                let (loss, _) = ctc_loss_grad(&logits, &labels).unwrap();
                mass += (-loss).exp();
            }
            assert!(mass <= 1.0 + 1e-8, "vocab {vocab} T {frames}: mass {mass}");
            assert!((mass - 1.0).abs() < 1e-8, "vocab {vocab} T {frames}: mass {mass}");
        }
    }
}

#[test]
fn gradient_matches_finite_differences_on_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let frames = rng.gen_range(2..=5);
        let vocab = rng.gen_range(1..=3);
        let labels: Vec<usize> = (0..rng.gen_range(0..=2usize))
            .map(|_| rng.gen_range(0..vocab))
            .collect();
        if frames < min_frames(&labels) {
            continue;
        }
        let mut logits = random_logits(&mut rng, frames, vocab + 1);
        let (_, grad) = ctc_loss_grad(&logits, &labels).unwrap();
        let h = 1e-6;
        for t in 0..frames {
            for k in 0..=vocab {
                let orig = logits[t][k];
                logits[t][k] = orig + h;
                let (lp, _) = ctc_loss_grad(&logits, &labels).unwrap();
                logits[t][k] = orig - h;
                let (lm, _) = ctc_loss_grad(&logits, &labels).unwrap();
                logits[t][k] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!(
                    (fd - grad[t][k]).abs() < 1e-5,
                    "({t},{k}) labels {labels:?}: fd {fd} vs {}",
                    grad[t][k]
                );
            }
        }
    }
}
