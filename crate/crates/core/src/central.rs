//! Centralized (non-federated) training on a flat utterance pool. Shares
//! the model/optimizer stack with the federated engine and produces the
//! seed checkpoints used by seed-start runs.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalMetrics};
use crate::model::{augment, init_params, loss_and_grad, AugmentConfig, ModelConfig, Utterance};
use crate::optim::{lr_at, step, OptimizerSpec, OptimizerState, ScheduleSpec};
use crate::params::ParamVector;
use crate::rng::{derive_rng, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CentralConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub opt: OptimizerSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    pub alpha: f64,
    #[serde(default)]
    pub augment: AugmentConfig,
    pub rng_seed: u64,
}

impl CentralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig("alpha must be in [0,1]".into()));
        }
        self.opt.validate()?;
        self.schedule.validate()
    }
}

#[derive(Debug, Clone)]
pub struct CentralOutcome {
    pub params: ParamVector,
    /// Per-step batch loss.
    pub losses: Vec<f64>,
    pub diverged_at: Option<usize>,
}

const DIVERGENCE_LOSS_FACTOR: f64 = 1e3;

/// Incremental mini-batch trainer so callers can interleave training with
/// evaluation (plateau detection for the pre-trained seed).
pub struct CentralTrainer<'a> {
    cfg: &'a CentralConfig,
    model_cfg: &'a ModelConfig,
    data: &'a [Utterance],
    pub params: ParamVector,
    state: OptimizerState,
    rng: rand_chacha::ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step_count: u64,
    pub losses: Vec<f64>,
    baseline: Option<f64>,
    pub diverged_at: Option<usize>,
}

impl<'a> CentralTrainer<'a> {
    pub fn new(
        cfg: &'a CentralConfig,
        model_cfg: &'a ModelConfig,
        data: &'a [Utterance],
        init: ParamVector,
    ) -> Result<Self> {
        cfg.validate()?;
        model_cfg.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyInput("central training data".into()));
        }
        let state = OptimizerState::new(&cfg.opt, init.len());
        Ok(Self {
            cfg,
            model_cfg,
            data,
            params: init,
            state,
            rng: derive_rng(cfg.rng_seed, &[stream::CENTRAL]),
            order: Vec::new(),
            cursor: 0,
            step_count: 0,
            losses: Vec::new(),
            baseline: None,
            diverged_at: None,
        })
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.order.len() {
            self.order = (0..self.data.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.cfg.batch_size).min(self.order.len());
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }

    /// One optimizer step over the next batch. Returns false once the run
    /// has diverged.
    pub fn step_once(&mut self) -> Result<bool> {
        if self.diverged_at.is_some() {
            return Ok(false);
        }
        let batch = self.next_batch();
        let mut grad = vec![0.0; self.params.len()];
        let mut batch_loss = 0.0;
        for &idx in &batch {
            let u = &self.data[idx];
            let augmented;
            let u_ref: &Utterance = if self.cfg.augment.enabled {
                augmented = augment(u, &self.cfg.augment, self.rng.gen());
                &augmented
            } else {
                u
            };
            // exploding params show up as NonFinite inside the forward
            // pass; record divergence instead of failing
            let (breakdown, g) =
                match loss_and_grad(&self.params, self.model_cfg, u_ref, self.cfg.alpha) {
                    Ok(out) => out,
                    Err(Error::NonFinite(_)) => {
                        self.diverged_at = Some(self.losses.len());
                        self.losses.push(f64::NAN);
                        return Ok(false);
                    }
                    Err(e) => return Err(e),
                };
            batch_loss += breakdown.combined;
            for (acc, gi) in grad.iter_mut().zip(&g) {
                *acc += gi;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        batch_loss *= inv;
        grad.iter_mut().for_each(|g| *g *= inv);

        let blown = !batch_loss.is_finite()
            || grad.iter().any(|g| !g.is_finite())
            || self.baseline.map(|b| batch_loss > DIVERGENCE_LOSS_FACTOR * b).unwrap_or(false);
        if blown {
            self.diverged_at = Some(self.losses.len());
            self.losses.push(batch_loss);
            return Ok(false);
        }
        if self.baseline.is_none() {
            self.baseline = Some(batch_loss);
        }
        let lr_scale = lr_at(&self.cfg.schedule, self.step_count + 1)?;
        step(&self.cfg.opt, &mut self.state, &mut self.params, &grad, lr_scale)?;
        self.step_count += 1;
        self.losses.push(batch_loss);
        Ok(true)
    }

    pub fn evaluate(&self, utterances: &[Utterance]) -> Result<EvalMetrics> {
        evaluate(&self.params, self.model_cfg, utterances, self.cfg.alpha, false)
    }
}

/// Standard mini-batch training for `cfg.steps` steps (or until
/// divergence). Deterministic in `cfg.rng_seed`.
pub fn train_central(
    cfg: &CentralConfig,
    model_cfg: &ModelConfig,
    utterances: &[Utterance],
    init: ParamVector,
) -> Result<CentralOutcome> {
    let mut trainer = CentralTrainer::new(cfg, model_cfg, utterances, init)?;
    for _ in 0..cfg.steps {
        if !trainer.step_once()? {
            break;
        }
    }
    Ok(CentralOutcome {
        params: trainer.params,
        losses: trainer.losses,
        diverged_at: trainer.diverged_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedKind {
    /// Warm start: briefly trained, loss still near chance.
    Ws,
    /// Pre-trained: trained on the server pool until the eval loss
    /// plateaus.
    Pt,
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub params: ParamVector,
    pub steps_trained: usize,
    pub final_train_loss: f64,
    /// For ws seeds: set when the budget overshot the near-chance floor,
    /// meaning the seed converged more than intended. A warning, not an
    /// error.
    pub ws_converged_warning: bool,
    pub eval_loss: Option<f64>,
}

// Plateau rule for pt seeds: stop when the eval loss has not improved by
// more than 0.1% over this many consecutive evaluation points.
const PLATEAU_PATIENCE: usize = 5;
const PLATEAU_REL_IMPROVEMENT: f64 = 1e-3;
const PT_EVAL_INTERVAL: usize = 20;
const PT_HOLDOUT_FRACTION: f64 = 0.1;

/// Produce a seed checkpoint from the server pool.
///
/// `ws` trains for the configured step budget and verifies the final loss
/// stayed above `ws_loss_floor`; `pt` trains until the held-out loss
/// plateaus (capped at `cfg.steps`).
pub fn make_seed(
    kind: SeedKind,
    server_pool: &[Utterance],
    model_cfg: &ModelConfig,
    cfg: &CentralConfig,
    ws_loss_floor: f64,
) -> Result<SeedOutcome> {
    if server_pool.is_empty() {
        return Err(Error::EmptyInput("server pool".into()));
    }
    let init = init_params(model_cfg, cfg.rng_seed);
    match kind {
        SeedKind::Ws => {
            let outcome = train_central(cfg, model_cfg, server_pool, init)?;
            let tail = outcome.losses.iter().rev().take(10).copied().collect::<Vec<_>>();
            let final_train_loss = if tail.is_empty() {
                f64::NAN
            } else {
                tail.iter().sum::<f64>() / tail.len() as f64
            };
            let ws_converged_warning =
                final_train_loss.is_finite() && final_train_loss < ws_loss_floor;
            Ok(SeedOutcome {
                params: outcome.params,
                steps_trained: outcome.losses.len(),
                final_train_loss,
                ws_converged_warning,
                eval_loss: None,
            })
        }
        SeedKind::Pt => {
            // deterministic holdout split of the server pool
            let mut order: Vec<usize> = (0..server_pool.len()).collect();
            let mut rng = derive_rng(cfg.rng_seed, &[stream::SPLIT, 1]);
            order.shuffle(&mut rng);
            let holdout = ((server_pool.len() as f64 * PT_HOLDOUT_FRACTION).round() as usize)
                .clamp(1, server_pool.len() - 1);
            let eval_set: Vec<Utterance> =
                order[..holdout].iter().map(|&i| server_pool[i].clone()).collect();
            let train_set: Vec<Utterance> =
                order[holdout..].iter().map(|&i| server_pool[i].clone()).collect();

            let mut trainer = CentralTrainer::new(cfg, model_cfg, &train_set, init)?;
            let mut best = f64::INFINITY;
            let mut stale = 0usize;
            let mut last_eval = None;
            'train: while trainer.losses.len() < cfg.steps {
                for _ in 0..PT_EVAL_INTERVAL {
                    if trainer.losses.len() >= cfg.steps || !trainer.step_once()? {
                        break;
                    }
                }
                let metrics = trainer.evaluate(&eval_set)?;
                last_eval = Some(metrics.loss);
                if metrics.loss < best * (1.0 - PLATEAU_REL_IMPROVEMENT) {
                    best = metrics.loss;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= PLATEAU_PATIENCE {
                        break 'train;
                    }
                }
                if trainer.diverged_at.is_some() {
                    break;
                }
            }
            let final_train_loss = trainer.losses.last().copied().unwrap_or(f64::NAN);
            Ok(SeedOutcome {
                params: trainer.params,
                steps_trained: trainer.losses.len(),
                final_train_loss,
                ws_converged_warning: false,
                eval_loss: last_eval,
            })
        }
    }
}
