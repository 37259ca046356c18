//! Centralized baseline: GD equivalence, learnability, and seed
//! production.

use fedseq_core::central::{make_seed, train_central, CentralConfig, SeedKind};
use fedseq_core::data::{generate_corpus, CorpusSpec};
use fedseq_core::eval::evaluate;
use fedseq_core::model::{
    init_params, loss_and_grad, AugmentConfig, ModelConfig, NormPlacement, Utterance,
};
use fedseq_core::optim::{OptKind, OptimizerSpec, ScheduleSpec};

fn model_cfg() -> ModelConfig {
    ModelConfig {
        feature_dim: 4,
        hidden_dim: 8,
        num_encoder_blocks: 1,
        vocab_size: 3,
        norm_placement: NormPlacement::Pre,
        decoder_enabled: false,
    }
}

fn learnable_pool(seed: u64, speakers: usize) -> (Vec<Utterance>, Vec<Utterance>) {
    let spec = CorpusSpec {
        num_speakers: speakers,
        vocab_size: 3,
        feature_dim: 4,
        utterances_per_speaker_mean: 12.0,
        utterances_per_speaker_std: 0.0,
        label_len_range: (1, 3),
        frames_per_token_range: (1, 2),
        heterogeneity: 0.0,
        noise_std: 0.0,
        rng_seed: seed,
    };
    let (train, eval) = generate_corpus(&spec).unwrap();
    (
        train.into_iter().flat_map(|c| c.utterances).collect(),
        eval.into_iter().flat_map(|c| c.utterances).collect(),
    )
}

fn base_cfg(steps: usize, seed: u64) -> CentralConfig {
    CentralConfig {
        steps,
        batch_size: 64,
        opt: OptimizerSpec::sgd(0.2),
        schedule: ScheduleSpec::constant(1.0),
        alpha: 1.0,
        augment: AugmentConfig::disabled(),
        rng_seed: seed,
    }
}

#[test]
fn zero_steps_returns_init() {
    let (pool, _) = learnable_pool(1, 1);
    let mcfg = model_cfg();
    let init = init_params(&mcfg, 5);
    let out = train_central(&base_cfg(0, 2), &mcfg, &pool, init.clone()).unwrap();
    assert_eq!(out.params.values(), init.values());
    assert!(out.losses.is_empty());
}

#[test]
fn zero_lr_keeps_loss_curve_constant() {
    let (pool, _) = learnable_pool(1, 1);
    let mcfg = model_cfg();
    let mut cfg = base_cfg(10, 2);
    cfg.schedule = ScheduleSpec::constant(0.0);
    let out = train_central(&cfg, &mcfg, &pool, init_params(&mcfg, 5)).unwrap();
    // full batch at frozen params: constant up to summation-order noise
    for w in out.losses.windows(2) {
        assert!((w[0] - w[1]).abs() <= 1e-12 * w[0].abs());
    }
}

#[test]
fn full_batch_matches_hand_rolled_gd() {
    let (pool, _) = learnable_pool(3, 1);
    let mcfg = model_cfg();
    let cfg = base_cfg(6, 2);
    let init = init_params(&mcfg, 7);
    let out = train_central(&cfg, &mcfg, &pool, init.clone()).unwrap();

    let mut reference = init;
    for _ in 0..6 {
        let mut grad = vec![0.0; reference.len()];
        for u in &pool {
            let (_, g) = loss_and_grad(&reference, &mcfg, u, 1.0).unwrap();
            for (acc, gi) in grad.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        let inv = 1.0 / pool.len() as f64;
        for (p, g) in reference.values_mut().iter_mut().zip(&grad) {
            *p -= cfg.opt.lr * g * inv;
        }
    }
    let max = out
        .params
        .values()
        .iter()
        .zip(reference.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(max <= 1e-10, "max diff {max}");
}

#[test]
fn adam_learns_the_degenerate_corpus() {
    // single speaker, no noise, no heterogeneity: the loss should fall
    // monotonically (3-seed median) over the 50 steps after warmup
    let (pool, _) = learnable_pool(8, 1);
    let mcfg = model_cfg();
    let warmup = 10u64;
    let mut curves = Vec::new();
    for seed in [1u64, 2, 3] {
        let mut cfg = base_cfg(warmup as usize + 50, seed);
        cfg.opt = OptimizerSpec::adam(0.02, 1e-8);
        cfg.schedule = ScheduleSpec::warmup(1.0, warmup);
        let out = train_central(&cfg, &mcfg, &pool, init_params(&mcfg, seed)).unwrap();
        assert!(out.diverged_at.is_none());
        curves.push(out.losses);
    }
    let median_at = |step: usize| -> f64 {
        let mut vals = [curves[0][step], curves[1][step], curves[2][step]];
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals[1]
    };
    for s in warmup as usize..(warmup as usize + 49) {
        assert!(
            median_at(s + 1) < median_at(s),
            "median loss rose at step {s}: {} -> {}",
            median_at(s),
            median_at(s + 1)
        );
    }
}

#[test]
fn pt_seed_beats_ws_seed() {
    let (pool, eval) = learnable_pool(5, 2);
    let mcfg = model_cfg();
    let mut cfg = base_cfg(400, 3);
    cfg.batch_size = 8;
    cfg.opt = OptimizerSpec::adam(0.02, 1e-8);
    cfg.schedule = ScheduleSpec::warmup(1.0, 10);

    let ws_cfg = CentralConfig { steps: 3, ..cfg.clone() };
    let ws = make_seed(SeedKind::Ws, &pool, &mcfg, &ws_cfg, 1.0).unwrap();
    let pt = make_seed(SeedKind::Pt, &pool, &mcfg, &cfg, 1.0).unwrap();
    assert!(pt.steps_trained > ws.steps_trained);

    let ws_metrics = evaluate(&ws.params, &mcfg, &eval, 1.0, false).unwrap();
    let pt_metrics = evaluate(&pt.params, &mcfg, &eval, 1.0, false).unwrap();
    assert!(
        pt_metrics.ter < ws_metrics.ter,
        "pt TER {} should beat ws TER {}",
        pt_metrics.ter,
        ws_metrics.ter
    );
}

#[test]
fn ws_zero_budget_is_passthrough_of_fresh_init() {
    let (pool, _) = learnable_pool(6, 1);
    let mcfg = model_cfg();
    let cfg = base_cfg(0, 9);
    let seed = make_seed(SeedKind::Ws, &pool, &mcfg, &cfg, 1.0).unwrap();
    let fresh = init_params(&mcfg, cfg.rng_seed);
    assert_eq!(seed.params.values(), fresh.values());
    assert_eq!(seed.steps_trained, 0);
}

#[test]
fn seeds_are_reproducible() {
    let (pool, _) = learnable_pool(7, 2);
    let mcfg = model_cfg();
    let mut cfg = base_cfg(60, 4);
    cfg.batch_size = 8;
    cfg.opt = OptimizerSpec { kind: OptKind::Adam, lr: 0.02, ..OptimizerSpec::default() };
    let a = make_seed(SeedKind::Pt, &pool, &mcfg, &cfg, 1.0).unwrap();
    let b = make_seed(SeedKind::Pt, &pool, &mcfg, &cfg, 1.0).unwrap();
    assert_eq!(
        a.params.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.params.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}
