//! Federated optimization with client sampling, end to end: sample a
//! cohort, train locally in parallel, aggregate deltas, step the central
//! optimizer on the pseudo-gradient. Includes OptSwitch, cohort warmup, and
//! divergence accounting.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::diag::{similarity_grid, GridSubject, SimilarityGrid};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::{augment, loss_and_grad, AugmentConfig, ModelConfig, Utterance};
use crate::optim::{lr_at, step, OptKind, OptimizerSpec, OptimizerState, ScheduleSpec};
use crate::parallel::maybe_par_map;
use crate::params::{DeltaKind, ParamVector, UpdateDelta};
use crate::rng::{derive_rng, stream};

/// How client deltas combine into the aggregated delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Plain mean over the cohort.
    Uniform,
    /// Weights proportional to each client's sample count.
    DataSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStart {
    Random,
    Ws,
    Pt,
}

/// Run an alternative central optimizer for the first `switch_round`
/// rounds, then hand over to the configured one with fresh state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptSwitch {
    pub pre_opt: OptimizerSpec,
    pub switch_round: usize,
}

/// Ramp the cohort size linearly from `start` up to the configured size
/// over `ramp_rounds` rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortWarmup {
    pub start: usize,
    pub ramp_rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FLConfig {
    pub aggregation_rounds: usize,
    pub cohort_size: usize,
    pub local_epochs: usize,
    pub local_batch_size: usize,
    /// CTC weight in the combined loss.
    pub alpha: f64,
    pub local_opt: OptimizerSpec,
    pub central_opt: OptimizerSpec,
    #[serde(default)]
    pub local_schedule: ScheduleSpec,
    #[serde(default)]
    pub central_schedule: ScheduleSpec,
    #[serde(default = "default_weighting")]
    pub aggregation_weighting: Weighting,
    #[serde(default)]
    pub opt_switch: Option<OptSwitch>,
    #[serde(default)]
    pub cohort_warmup: Option<CohortWarmup>,
    #[serde(default = "default_seed_start")]
    pub seed_start: SeedStart,
    pub rng_seed: u64,
    #[serde(default)]
    pub augment: AugmentConfig,
}

fn default_weighting() -> Weighting {
    Weighting::Uniform
}

fn default_seed_start() -> SeedStart {
    SeedStart::Random
}

impl FLConfig {
    pub fn validate(&self, num_clients: usize) -> Result<()> {
        if self.cohort_size == 0 || self.cohort_size > num_clients {
            return Err(Error::InvalidConfig(format!(
                "cohort_size {} must be in 1..={num_clients}",
                self.cohort_size
            )));
        }
        if self.local_epochs == 0 || self.local_batch_size == 0 {
            return Err(Error::InvalidConfig("local_epochs and local_batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig("alpha must be in [0,1]".into()));
        }
        if let Some(sw) = &self.opt_switch {
            if self.aggregation_rounds > 0 && sw.switch_round >= self.aggregation_rounds {
                return Err(Error::InvalidConfig("switch_round must be < aggregation_rounds".into()));
            }
            sw.pre_opt.validate()?;
        }
        if let Some(cw) = &self.cohort_warmup {
            if cw.start == 0 || cw.start > self.cohort_size {
                return Err(Error::InvalidConfig("cohort_warmup.start must be in 1..=cohort_size".into()));
            }
        }
        self.local_opt.validate()?;
        self.central_opt.validate()?;
        self.local_schedule.validate()?;
        self.central_schedule.validate()?;
        Ok(())
    }
}

/// Per-round telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub sampled_client_ids: Vec<usize>,
    pub cohort_size_effective: usize,
    pub mean_client_loss: f64,
    pub central_lr: f64,
    pub pseudo_grad_norm: f64,
    pub eval_loss: Option<f64>,
    pub eval_ter: Option<f64>,
    pub central_opt_kind_active: OptKind,
    pub diverged: bool,
}

/// Uniform sampling without replacement, deterministic in
/// `(rng_seed, round)`, sorted ascending.
pub fn sample_cohort(
    num_clients: usize,
    cohort_size_effective: usize,
    round: usize,
    rng_seed: u64,
) -> Result<Vec<usize>> {
    if cohort_size_effective == 0 || cohort_size_effective > num_clients {
        return Err(Error::InvalidConfig(format!(
            "cannot sample {cohort_size_effective} of {num_clients} clients"
        )));
    }
    let mut rng = derive_rng(rng_seed, &[stream::COHORT, round as u64]);
    let mut ids = rand::seq::index::sample(&mut rng, num_clients, cohort_size_effective).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Cohort size at a round under the optional warmup ramp. The ramp is
/// linear, integer-rounded, exact at both endpoints.
pub fn effective_cohort(cfg: &FLConfig, round: usize) -> usize {
    match &cfg.cohort_warmup {
        None => cfg.cohort_size,
        Some(w) => {
            if round >= w.ramp_rounds {
                return cfg.cohort_size;
            }
            let start = w.start as f64;
            let target = cfg.cohort_size as f64;
            let frac = round as f64 / w.ramp_rounds.max(1) as f64;
            let size = (start + (target - start) * frac).round() as usize;
            size.clamp(w.start.min(cfg.cohort_size), cfg.cohort_size.max(w.start))
        }
    }
}

/// The result of one client's local training in one round.
#[derive(Debug, Clone)]
pub struct LocalTrainOutcome {
    pub client_id: usize,
    pub delta: UpdateDelta,
    pub num_samples: usize,
    pub mean_loss: f64,
    pub steps: u64,
    /// False when a non-finite loss or gradient aborted local training;
    /// the delta is then NaN and the round is recorded as diverged.
    pub finite: bool,
}

/// Initialize from the global model, train `local_epochs` over shuffled
/// batches with a fresh optimizer, and return the parameter delta.
///
/// The schedule step for batch `b` of epoch `e` is
/// `local_step_base + e * batches_per_epoch + b + 1`; the engine advances
/// `local_step_base` across rounds so warmup and decay act over the whole
/// run.
pub fn local_train(
    global_params: &ParamVector,
    model_cfg: &ModelConfig,
    client_data: &ClientDataset,
    cfg: &FLConfig,
    round: usize,
    client_id: usize,
    local_step_base: u64,
) -> Result<LocalTrainOutcome> {
    if client_data.utterances.is_empty() {
        return Err(Error::EmptyInput(format!("client {client_id} dataset")));
    }
    let mut params = global_params.clone();
    let mut state = OptimizerState::new(&cfg.local_opt, params.len());
    let mut rng = derive_rng(cfg.rng_seed, &[stream::CLIENT, round as u64, client_id as u64]);

    let n = client_data.utterances.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_sum = 0.0;
    let mut steps = 0u64;
    let mut finite = true;

    'epochs: for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.local_batch_size) {
            let mut grad = vec![0.0; params.len()];
            let mut batch_loss = 0.0;
            for &idx in batch {
                let u = &client_data.utterances[idx];
                let augmented;
                let u_ref: &Utterance = if cfg.augment.enabled {
                    augmented = augment(u, &cfg.augment, rng.gen());
                    &augmented
                } else {
                    u
                };
                // exploding params surface as a NonFinite error inside the
                // forward pass; that is a divergence outcome, not a fault
                let (breakdown, g) = match loss_and_grad(&params, model_cfg, u_ref, cfg.alpha) {
                    Ok(out) => out,
                    Err(Error::NonFinite(_)) => {
                        finite = false;
                        break 'epochs;
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

            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                finite = false;
                break 'epochs;
            }
            let lr_scale = lr_at(&cfg.local_schedule, local_step_base + steps + 1)?;
            step(&cfg.local_opt, &mut state, &mut params, &grad, lr_scale)?;
            loss_sum += batch_loss;
            steps += 1;
        }
    }

    let delta = if finite {
        UpdateDelta::from_difference(&params, global_params)?
    } else {
        UpdateDelta::new(
            vec![f64::NAN; global_params.len()],
            std::sync::Arc::clone(global_params.layout()),
            DeltaKind::ClientDelta,
        )?
    };
    let mean_loss = if finite && steps > 0 { loss_sum / steps as f64 } else { f64::NAN };
    Ok(LocalTrainOutcome { client_id, delta, num_samples: n, mean_loss, steps, finite })
}

/// Combine client deltas. Summation runs in ascending client-id order
/// regardless of arrival order, so the result is order-independent.
pub fn aggregate(
    deltas: &[(usize, &UpdateDelta, usize)],
    weighting: Weighting,
) -> Result<UpdateDelta> {
    if deltas.is_empty() {
        return Err(Error::EmptyInput("deltas to aggregate".into()));
    }
    let layout = &deltas[0].1.layout;
    for (_, d, _) in deltas {
        if d.layout.as_ref() != layout.as_ref() {
            return Err(Error::LayoutMismatch("aggregate inputs".into()));
        }
    }
    let mut ordered: Vec<&(usize, &UpdateDelta, usize)> = deltas.iter().collect();
    ordered.sort_by_key(|(id, _, _)| *id);

    let total_samples: usize = ordered.iter().map(|(_, _, n)| n).sum();
    let mut values = vec![0.0; layout.total_len()];
    for (_, d, n) in &ordered {
        let w = match weighting {
            Weighting::Uniform => 1.0 / ordered.len() as f64,
            Weighting::DataSize => *n as f64 / total_samples as f64,
        };
        for (acc, v) in values.iter_mut().zip(&d.values) {
            *acc += w * v;
        }
    }
    UpdateDelta::new(values, std::sync::Arc::clone(layout), DeltaKind::AggregatedDelta)
}

/// Aggregation weights as used by [`aggregate`], exposed for checks.
pub fn aggregation_weights(counts: &[usize], weighting: Weighting) -> Vec<f64> {
    match weighting {
        Weighting::Uniform => vec![1.0 / counts.len() as f64; counts.len()],
        Weighting::DataSize => {
            let total: usize = counts.iter().sum();
            counts.iter().map(|&n| n as f64 / total as f64).collect()
        }
    }
}

/// Central optimizer with optional OptSwitch. The post-switch optimizer
/// starts from fresh state at the boundary.
pub struct CentralOptimizer {
    main_spec: OptimizerSpec,
    main_state: OptimizerState,
    pre: Option<(OptimizerSpec, OptimizerState, usize)>,
}

#[derive(Debug, Clone, Copy)]
pub struct CentralStepInfo {
    pub lr_effective: f64,
    pub active: OptKind,
}

impl CentralOptimizer {
    pub fn new(cfg: &FLConfig, param_len: usize) -> Self {
        let main_state = OptimizerState::new(&cfg.central_opt, param_len);
        let pre = cfg.opt_switch.as_ref().map(|sw| {
            (sw.pre_opt.clone(), OptimizerState::new(&sw.pre_opt, param_len), sw.switch_round)
        });
        Self { main_spec: cfg.central_opt.clone(), main_state, pre }
    }

    pub fn active_kind(&self, round: usize) -> OptKind {
        match &self.pre {
            Some((spec, _, switch)) if round < *switch => spec.kind,
            _ => self.main_spec.kind,
        }
    }

    /// Form the pseudo-gradient from the aggregated delta and descend.
    pub fn central_step(
        &mut self,
        cfg: &FLConfig,
        round: usize,
        aggregated: &UpdateDelta,
        global_params: &mut ParamVector,
    ) -> Result<CentralStepInfo> {
        let pseudo = aggregated.to_pseudo_gradient();
        let lr_scale = lr_at(&cfg.central_schedule, round as u64 + 1)?;
        let (spec, state) = match &mut self.pre {
            Some((spec, state, switch)) if round < *switch => (&*spec, state),
            _ => (&self.main_spec, &mut self.main_state),
        };
        step(spec, state, global_params, &pseudo.values, lr_scale)?;
        Ok(CentralStepInfo { lr_effective: spec.lr * lr_scale, active: spec.kind })
    }
}

/// One recorded update stream entry (already sliced to the configured
/// layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedUpdate {
    pub round: usize,
    pub subject: GridSubject,
    pub label: String,
    pub values: Vec<f64>,
}

/// Records client deltas, pseudo-gradients, and central updates for a
/// configured layer over the first `window` rounds.
#[derive(Debug, Clone)]
pub struct UpdateRecorder {
    pub layer: String,
    pub subjects: Vec<GridSubject>,
    pub window: usize,
    records: Vec<RecordedUpdate>,
}

impl UpdateRecorder {
    pub fn new(layer: impl Into<String>, subjects: Vec<GridSubject>, window: usize) -> Self {
        Self { layer: layer.into(), subjects, window, records: Vec::new() }
    }

    fn wants(&self, subject: GridSubject, round: usize) -> bool {
        round < self.window && self.subjects.contains(&subject)
    }

    fn push(&mut self, round: usize, subject: GridSubject, label: String, delta: &UpdateDelta) -> Result<()> {
        let values = if self.layer == "all" {
            delta.values.clone()
        } else {
            let r = delta.layout.range(&self.layer)?;
            delta.values[r].to_vec()
        };
        self.records.push(RecordedUpdate { round, subject, label, values });
        Ok(())
    }

    pub fn records(&self) -> &[RecordedUpdate] {
        &self.records
    }

    pub fn from_records(layer: impl Into<String>, records: Vec<RecordedUpdate>) -> Self {
        let mut subjects = Vec::new();
        let mut window = 0;
        for r in &records {
            if !subjects.contains(&r.subject) {
                subjects.push(r.subject);
            }
            window = window.max(r.round + 1);
        }
        Self { layer: layer.into(), subjects, window, records }
    }

    /// Grid across the clients of one round.
    pub fn client_grid(&self, round: usize) -> Result<SimilarityGrid> {
        let (labels, vectors): (Vec<String>, Vec<Vec<f64>>) = self
            .records
            .iter()
            .filter(|r| r.subject == GridSubject::ClientUpdates && r.round == round)
            .map(|r| (r.label.clone(), r.values.clone()))
            .unzip();
        if vectors.is_empty() {
            return Err(Error::EmptyInput(format!("no client updates recorded at round {round}")));
        }
        similarity_grid(&vectors, labels, &self.layer, GridSubject::ClientUpdates)
    }

    /// Grid across rounds for a per-round subject.
    pub fn series_grid(&self, subject: GridSubject) -> Result<SimilarityGrid> {
        let mut entries: Vec<&RecordedUpdate> =
            self.records.iter().filter(|r| r.subject == subject).collect();
        entries.sort_by_key(|r| r.round);
        if entries.is_empty() {
            return Err(Error::EmptyInput(format!("no {subject} recorded")));
        }
        let labels = entries.iter().map(|r| r.label.clone()).collect();
        let vectors: Vec<Vec<f64>> = entries.iter().map(|r| r.values.clone()).collect();
        similarity_grid(&vectors, labels, &self.layer, subject)
    }

    /// Rounds for which client updates exist, ascending.
    pub fn client_rounds(&self) -> Vec<usize> {
        let mut rounds: Vec<usize> = self
            .records
            .iter()
            .filter(|r| r.subject == GridSubject::ClientUpdates)
            .map(|r| r.round)
            .collect();
        rounds.sort_unstable();
        rounds.dedup();
        rounds
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Evaluate every this many rounds (0 = final round only). The final
    /// round is always evaluated when an eval set is present.
    pub eval_every: usize,
    /// Client-level parallelism; 1 runs serially. Results are identical
    /// for any value.
    pub workers: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { eval_every: 0, workers: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct FlRunResult {
    pub records: Vec<RoundRecord>,
    pub final_params: ParamVector,
    pub diverged_at: Option<usize>,
}

const DIVERGENCE_LOSS_FACTOR: f64 = 1e3;

/// Execute `aggregation_rounds` rounds of sample -> local train ->
/// aggregate -> central step. A non-finite aggregate (or a mean client
/// loss beyond 1000x its round-0 value) marks the run diverged and halts;
/// divergence is a recorded outcome, not an error.
pub fn run_fl(
    cfg: &FLConfig,
    model_cfg: &ModelConfig,
    federation: &[ClientDataset],
    init: ParamVector,
    eval_set: &[Utterance],
    opts: &RunOptions,
    mut recorder: Option<&mut UpdateRecorder>,
) -> Result<FlRunResult> {
    cfg.validate(federation.len())?;
    model_cfg.validate()?;

    let mut params = init;
    let mut central = CentralOptimizer::new(cfg, params.len());
    let mut records = Vec::with_capacity(cfg.aggregation_rounds);
    let mut local_step_base = 0u64;
    let mut baseline_loss: Option<f64> = None;
    let mut diverged_at = None;
    let parallel = opts.workers > 1;

    for t in 0..cfg.aggregation_rounds {
        let eff = effective_cohort(cfg, t);
        let ids = sample_cohort(federation.len(), eff, t, cfg.rng_seed)?;

        let outcomes: Vec<Result<LocalTrainOutcome>> = maybe_par_map(&ids, parallel, |&k| {
            local_train(&params, model_cfg, &federation[k], cfg, t, k, local_step_base)
        });
        let mut outcomes_ok = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            outcomes_ok.push(o?);
        }

        let mean_client_loss = outcomes_ok.iter().map(|o| o.mean_loss).sum::<f64>()
            / outcomes_ok.len().max(1) as f64;
        let max_batches = outcomes_ok
            .iter()
            .map(|o| o.num_samples.div_ceil(cfg.local_batch_size))
            .max()
            .unwrap_or(0) as u64;

        let contributions: Vec<(usize, &UpdateDelta, usize)> =
            outcomes_ok.iter().map(|o| (o.client_id, &o.delta, o.num_samples)).collect();
        let aggregated = aggregate(&contributions, cfg.aggregation_weighting)?;
        let pseudo_grad_norm = crate::params::l2_norm(&aggregated.values);

        let all_finite = outcomes_ok.iter().all(|o| o.finite) && aggregated.is_finite();
        let loss_blown = baseline_loss
            .map(|b| mean_client_loss > DIVERGENCE_LOSS_FACTOR * b || !mean_client_loss.is_finite())
            .unwrap_or(!mean_client_loss.is_finite());

        if !all_finite || loss_blown {
            let sched_scale = lr_at(&cfg.central_schedule, t as u64 + 1)?;
            let active_lr = match &cfg.opt_switch {
                Some(sw) if t < sw.switch_round => sw.pre_opt.lr,
                _ => cfg.central_opt.lr,
            };
            records.push(RoundRecord {
                round: t,
                sampled_client_ids: ids,
                cohort_size_effective: eff,
                mean_client_loss,
                central_lr: active_lr * sched_scale,
                pseudo_grad_norm,
                eval_loss: None,
                eval_ter: None,
                central_opt_kind_active: central.active_kind(t),
                diverged: true,
            });
            diverged_at = Some(t);
            break;
        }
        if baseline_loss.is_none() {
            baseline_loss = Some(mean_client_loss);
        }

        if let Some(rec) = recorder.as_deref_mut() {
            if rec.wants(GridSubject::ClientUpdates, t) {
                for o in &outcomes_ok {
                    rec.push(t, GridSubject::ClientUpdates, o.client_id.to_string(), &o.delta)?;
                }
            }
            if rec.wants(GridSubject::PseudoGradients, t) {
                rec.push(t, GridSubject::PseudoGradients, t.to_string(), &aggregated.to_pseudo_gradient())?;
            }
        }

        let before = params.clone();
        let info = central.central_step(cfg, t, &aggregated, &mut params)?;

        if let Some(rec) = recorder.as_deref_mut() {
            if rec.wants(GridSubject::CentralUpdates, t) {
                let central_update = UpdateDelta::from_difference(&params, &before)?;
                rec.push(t, GridSubject::CentralUpdates, t.to_string(), &central_update)?;
            }
        }

        local_step_base += cfg.local_epochs as u64 * max_batches;

        let is_last = t + 1 == cfg.aggregation_rounds;
        let do_eval = !eval_set.is_empty()
            && (is_last || (opts.eval_every != 0 && (t + 1) % opts.eval_every == 0));
        let (eval_loss, eval_ter) = if do_eval {
            let m = evaluate(&params, model_cfg, eval_set, cfg.alpha, parallel)?;
            (Some(m.loss), Some(m.ter))
        } else {
            (None, None)
        };

        records.push(RoundRecord {
            round: t,
            sampled_client_ids: ids,
            cohort_size_effective: eff,
            mean_client_loss,
            central_lr: info.lr_effective,
            pseudo_grad_norm,
            eval_loss,
            eval_ter,
            central_opt_kind_active: info.active,
            diverged: false,
        });
    }

    Ok(FlRunResult { records, final_params: params, diverged_at })
}
