//! Feature masking in the style of SpecAugment plus time-chunk substitution
//! in the style of SpecSub. All widths are clamped to the utterance
//! dimensions, labels are never touched, and the utterance length never
//! changes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::derive_rng;

use super::Utterance;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// How many whole-frame masks to apply and their maximum width.
    pub time_mask_count: usize,
    pub time_mask_max: usize,
    /// How many feature-band masks to apply and their maximum width.
    pub feat_mask_count: usize,
    pub feat_mask_max: usize,
    /// How many chunks to replace with an equally sized earlier chunk.
    pub sub_chunk_count: usize,
    pub sub_chunk_max: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            time_mask_count: 1,
            time_mask_max: 2,
            feat_mask_count: 1,
            feat_mask_max: 2,
            sub_chunk_count: 0,
            sub_chunk_max: 2,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }
}

/// Apply masking to a copy of `u`. Deterministic in `rng_seed`; the draw
/// order is fixed (time masks, feature masks, substitutions).
pub fn augment(u: &Utterance, cfg: &AugmentConfig, rng_seed: u64) -> Utterance {
    if !cfg.enabled {
        return u.clone();
    }
    let mut out = u.clone();
    let frames = out.frames.len();
    let dim = out.frames.first().map_or(0, |f| f.len());
    if frames == 0 || dim == 0 {
        return out;
    }
    let mut rng = derive_rng(rng_seed, &[]);

    for _ in 0..cfg.time_mask_count {
        let w = rng.gen_range(0..=cfg.time_mask_max.min(frames));
        if w == 0 {
            continue;
        }
        let start = rng.gen_range(0..=frames - w);
        for frame in &mut out.frames[start..start + w] {
            frame.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    for _ in 0..cfg.feat_mask_count {
        let w = rng.gen_range(0..=cfg.feat_mask_max.min(dim));
        if w == 0 {
            continue;
        }
        let start = rng.gen_range(0..=dim - w);
        for frame in &mut out.frames {
            frame[start..start + w].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    for _ in 0..cfg.sub_chunk_count {
        let max_w = cfg.sub_chunk_max.min(frames / 2);
        if max_w == 0 {
            continue;
        }
        let w = rng.gen_range(1..=max_w);
        let target = rng.gen_range(w..=frames - w);
        let source = rng.gen_range(0..=target - w);
        for i in 0..w {
            out.frames[target + i] = u.frames[source + i].clone();
        }
    }

    out
}
