//! Orchestration for `gen-data` and `train`: corpus resolution, seed-model
//! production, per-seed runs, metrics CSV, and the cross-seed summary.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use fedseq_core::central::{make_seed, CentralTrainer, SeedKind};
use fedseq_core::data::{generate_corpus, read_corpus, write_corpus, ClientDataset};
use fedseq_core::eval::evaluate;
use fedseq_core::fedcore::{run_fl, RoundRecord, RunOptions, SeedStart, UpdateRecorder};
use fedseq_core::model::{init_params, Utterance};
use fedseq_core::optim::lr_at;
use fedseq_core::params::{write_checkpoint, ParamVector};

use crate::config::{DiagSection, ExperimentConfig, Mode};

pub const METRICS_HEADER: &str =
    "round_or_step,train_loss,eval_loss,eval_ter,lr,cohort_size,opt_active,diverged_flag";

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Everything a single training run needs.
pub struct Prepared {
    pub federation: Vec<ClientDataset>,
    pub eval_set: Vec<Utterance>,
    pub seed_params: Option<ParamVector>,
}

/// Resolve the corpus (generate or load) and, for seed starts, carve out
/// the server pool and train the seed checkpoint.
pub fn prepare(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<Prepared> {
    let (train_clients, eval_clients, corpus_seed) = match (&cfg.dataset, &cfg.corpus) {
        (Some(path), None) => {
            let (manifest, train, eval) = read_corpus(path)
                .with_context(|| format!("unreadable dataset {}", path.display()))?;
            (train, eval, manifest.rng_seed)
        }
        (None, Some(spec)) => {
            let (train, eval) = generate_corpus(spec)?;
            (train, eval, spec.rng_seed)
        }
        _ => bail!("config must set exactly one of `dataset` / `[corpus]`"),
    };
    let eval_set: Vec<Utterance> =
        eval_clients.into_iter().flat_map(|c| c.utterances).collect();

    let needs_seed = cfg.mode == Mode::Fl
        && cfg.fl.as_ref().map(|f| f.seed_start != SeedStart::Random).unwrap_or(false);
    if !needs_seed {
        return Ok(Prepared { federation: train_clients, eval_set, seed_params: None });
    }

    let seed_section = cfg.seed.as_ref().context("seed_start requires a [seed] section")?;
    let (server_pool, fl_clients) = fedseq_core::data::split_server_fl(
        &train_clients,
        seed_section.server_fraction,
        corpus_seed,
    )?;
    let kind = match cfg.fl.as_ref().unwrap().seed_start {
        SeedStart::Ws => SeedKind::Ws,
        SeedStart::Pt => SeedKind::Pt,
        SeedStart::Random => unreachable!(),
    };
    let outcome = make_seed(
        kind,
        &server_pool,
        &cfg.model,
        &seed_section.train,
        seed_section.ws_loss_floor,
    )?;
    if outcome.ws_converged_warning {
        eprintln!(
            "warning: ws seed trained past the near-chance floor \
             (final loss {:.4} < {:.4})",
            outcome.final_train_loss, seed_section.ws_loss_floor
        );
    }
    if let Some(dir) = out_dir {
        write_checkpoint(dir.join("seed_model.ckpt"), &outcome.params)?;
    }
    Ok(Prepared { federation: fl_clients, eval_set, seed_params: Some(outcome.params) })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub final_eval_loss: Option<f64>,
    pub final_eval_ter: Option<f64>,
    pub diverged_round: Option<usize>,
}

#[derive(Debug, Serialize)]
struct SummaryFile {
    seeds: Vec<u64>,
    runs: usize,
    final_eval_loss_mean: Option<f64>,
    final_eval_loss_std: Option<f64>,
    final_eval_ter_mean: Option<f64>,
    final_eval_ter_std: Option<f64>,
    diverged_seeds: Vec<u64>,
    per_seed: Vec<RunSummary>,
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

fn fl_csv_rows(records: &[RoundRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{},{}",
                r.round,
                fmt_f64(r.mean_client_loss),
                fmt_opt(r.eval_loss),
                fmt_opt(r.eval_ter),
                fmt_f64(r.central_lr),
                r.cohort_size_effective,
                r.central_opt_kind_active,
                u8::from(r.diverged)
            )
        })
        .collect()
}

fn write_metrics(path: &Path, rows: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{METRICS_HEADER}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    f.flush()?;
    Ok(())
}

fn run_one_fl(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    run_seed: u64,
    run_dir: &Path,
    workers: usize,
) -> Result<RunSummary> {
    let mut fl_cfg = cfg.fl.clone().context("fl mode needs [fl]")?;
    fl_cfg.rng_seed = run_seed;
    let init = match &prepared.seed_params {
        Some(p) => p.clone(),
        None => init_params(&cfg.model, run_seed),
    };
    let diag = cfg.diag.clone().unwrap_or_default();
    let mut recorder = diag
        .record
        .then(|| UpdateRecorder::new(diag.grid_layer.clone(), diag.grid_subjects.clone(), diag.grid_window));

    let opts = RunOptions { eval_every: cfg.eval_every, workers };
    let result = run_fl(
        &fl_cfg,
        &cfg.model,
        &prepared.federation,
        init,
        &prepared.eval_set,
        &opts,
        recorder.as_mut(),
    )?;

    std::fs::create_dir_all(run_dir)?;
    write_metrics(&run_dir.join("metrics.csv"), &fl_csv_rows(&result.records))?;
    write_checkpoint(run_dir.join("final.ckpt"), &result.final_params)?;
    if let Some(rec) = &recorder {
        write_recordings(run_dir, &diag, rec)?;
    }

    let last_eval = result.records.iter().rev().find_map(|r| r.eval_loss);
    let last_ter = result.records.iter().rev().find_map(|r| r.eval_ter);
    Ok(RunSummary {
        seed: run_seed,
        final_eval_loss: last_eval,
        final_eval_ter: last_ter,
        diverged_round: result.diverged_at,
    })
}

#[derive(Serialize, serde::Deserialize)]
pub struct DiagMeta {
    pub layer: String,
    pub window: usize,
}

fn write_recordings(run_dir: &Path, diag: &DiagSection, rec: &UpdateRecorder) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(run_dir.join("updates.jsonl"))?);
    for r in rec.records() {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    let meta = DiagMeta { layer: diag.grid_layer.clone(), window: diag.grid_window };
    serde_json::to_writer_pretty(std::fs::File::create(run_dir.join("diag_meta.json"))?, &meta)?;
    Ok(())
}

fn run_one_central(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    run_seed: u64,
    run_dir: &Path,
) -> Result<RunSummary> {
    let mut ccfg = cfg.central.clone().context("central mode needs [central]")?;
    ccfg.rng_seed = run_seed;
    let pool: Vec<Utterance> =
        prepared.federation.iter().flat_map(|c| c.utterances.iter().cloned()).collect();
    let init = init_params(&cfg.model, run_seed);
    let mut trainer = CentralTrainer::new(&ccfg, &cfg.model, &pool, init)?;

    let mut rows = Vec::with_capacity(ccfg.steps);
    let mut last_eval = None;
    let mut last_ter = None;
    for s in 0..ccfg.steps {
        let ok = trainer.step_once()?;
        let diverged = !ok;
        let is_last = s + 1 == ccfg.steps || diverged;
        let do_eval = !prepared.eval_set.is_empty()
            && !diverged
            && (is_last || (cfg.eval_every != 0 && (s + 1) % cfg.eval_every == 0));
        let (eval_loss, eval_ter) = if do_eval {
            let m = evaluate(&trainer.params, &cfg.model, &prepared.eval_set, ccfg.alpha, false)?;
            last_eval = Some(m.loss);
            last_ter = Some(m.ter);
            (Some(m.loss), Some(m.ter))
        } else {
            (None, None)
        };
        let train_loss = trainer.losses.last().copied().unwrap_or(f64::NAN);
        let lr = ccfg.opt.lr * lr_at(&ccfg.schedule, s as u64 + 1)?;
        rows.push(format!(
            "{},{},{},{},{},,{},{}",
            s,
            fmt_f64(train_loss),
            fmt_opt(eval_loss),
            fmt_opt(eval_ter),
            fmt_f64(lr),
            ccfg.opt.kind,
            u8::from(diverged)
        ));
        if diverged {
            break;
        }
    }

    std::fs::create_dir_all(run_dir)?;
    write_metrics(&run_dir.join("metrics.csv"), &rows)?;
    write_checkpoint(run_dir.join("final.ckpt"), &trainer.params)?;
    Ok(RunSummary {
        seed: run_seed,
        final_eval_loss: last_eval,
        final_eval_ter: last_ter,
        diverged_round: trainer.diverged_at,
    })
}

/// Run every seed and write per-seed outputs plus `summary.json`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    seeds: &[u64],
    out_dir: &Path,
    workers: usize,
) -> Result<Vec<RunSummary>> {
    std::fs::create_dir_all(out_dir)?;
    let seeds: Vec<u64> = if seeds.is_empty() {
        let default = match cfg.mode {
            Mode::Fl => cfg.fl.as_ref().map(|f| f.rng_seed),
            Mode::Central => cfg.central.as_ref().map(|c| c.rng_seed),
        };
        vec![default.context("config has no default seed")?]
    } else {
        seeds.to_vec()
    };

    let prepared = prepare(cfg, Some(out_dir))?;

    let run = |summaries: &mut Vec<RunSummary>| -> Result<()> {
        for &seed in &seeds {
            let run_dir = out_dir.join(format!("seed_{seed}"));
            let summary = match cfg.mode {
                Mode::Fl => run_one_fl(cfg, &prepared, seed, &run_dir, workers)?,
                Mode::Central => run_one_central(cfg, &prepared, seed, &run_dir)?,
            };
            summaries.push(summary);
        }
        Ok(())
    };

    let mut summaries = Vec::new();
    if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .context("building worker pool")?;
        pool.install(|| run(&mut summaries))?;
    } else {
        run(&mut summaries)?;
    }

    let losses: Vec<f64> = summaries.iter().filter_map(|s| s.final_eval_loss).collect();
    let ters: Vec<f64> = summaries.iter().filter_map(|s| s.final_eval_ter).collect();
    let loss_stats = mean_std(&losses);
    let ter_stats = mean_std(&ters);
    let summary = SummaryFile {
        seeds: seeds.clone(),
        runs: summaries.len(),
        final_eval_loss_mean: loss_stats.map(|s| s.0),
        final_eval_loss_std: loss_stats.map(|s| s.1),
        final_eval_ter_mean: ter_stats.map(|s| s.0),
        final_eval_ter_std: ter_stats.map(|s| s.1),
        diverged_seeds: summaries
            .iter()
            .filter(|s| s.diverged_round.is_some())
            .map(|s| s.seed)
            .collect(),
        per_seed: summaries.clone(),
    };
    let mut f = std::fs::File::create(out_dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    f.write_all(b"\n")?;
    Ok(summaries)
}

/// Generate corpus files plus manifest.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let spec = cfg
        .corpus
        .as_ref()
        .context("gen-data needs a [corpus] section (not a dataset path)")?;
    let (train, eval) = generate_corpus(spec)?;
    let manifest = write_corpus(out_dir, spec, &train, &eval)?;
    Ok(manifest)
}
