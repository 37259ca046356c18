//! Ablation sweeps: run `train` once per axis value over a shared corpus
//! and emit one comparison table.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};

use fedseq_core::fedcore::SeedStart;
use fedseq_core::model::NormPlacement;
use fedseq_core::optim::{OptKind, ScheduleKind};

use crate::config::{ExperimentConfig, Mode};
use crate::runner::{cmd_gen_data, cmd_train};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    LocalEpochs,
    CohortSize,
    Alpha,
    Epsilon,
    OptimizerPair,
    SeedStartAxis,
    Scheduler,
    NormPlacementAxis,
}

impl SweepAxis {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "local_epochs" => Self::LocalEpochs,
            "cohort_size" => Self::CohortSize,
            "alpha" => Self::Alpha,
            "epsilon" => Self::Epsilon,
            "optimizer_pair" => Self::OptimizerPair,
            "seed_start" => Self::SeedStartAxis,
            "scheduler" => Self::Scheduler,
            "norm_placement" => Self::NormPlacementAxis,
            other => bail!("unknown sweep axis {other}"),
        })
    }

    fn valid_for(&self, mode: Mode) -> bool {
        match self {
            Self::LocalEpochs
            | Self::CohortSize
            | Self::Epsilon
            | Self::OptimizerPair
            | Self::SeedStartAxis => mode == Mode::Fl,
            Self::Alpha | Self::Scheduler | Self::NormPlacementAxis => true,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Self::LocalEpochs => "local_epochs",
            Self::CohortSize => "cohort_size",
            Self::Alpha => "alpha",
            Self::Epsilon => "epsilon",
            Self::OptimizerPair => "optimizer_pair",
            Self::SeedStartAxis => "seed_start",
            Self::Scheduler => "scheduler",
            Self::NormPlacementAxis => "norm_placement",
        }
    }
}

fn parse_opt_kind(s: &str) -> Result<OptKind> {
    Ok(match s {
        "sgd" => OptKind::Sgd,
        "adam" => OptKind::Adam,
        "adamw" => OptKind::Adamw,
        "yogi" => OptKind::Yogi,
        "lamb" => OptKind::Lamb,
        other => bail!("unknown optimizer {other}"),
    })
}

fn parse_schedule_kind(s: &str) -> Result<ScheduleKind> {
    Ok(match s {
        "constant" => ScheduleKind::Constant,
        "warmup" => ScheduleKind::Warmup,
        "warmup_decay" => ScheduleKind::WarmupDecay,
        other => bail!("unknown scheduler {other}"),
    })
}

fn apply_value(cfg: &mut ExperimentConfig, axis: SweepAxis, value: &str) -> Result<()> {
    match axis {
        SweepAxis::LocalEpochs => {
            cfg.fl.as_mut().unwrap().local_epochs = value.parse().context("local_epochs value")?;
        }
        SweepAxis::CohortSize => {
            cfg.fl.as_mut().unwrap().cohort_size = value.parse().context("cohort_size value")?;
        }
        SweepAxis::Alpha => {
            let alpha: f64 = value.parse().context("alpha value")?;
            if let Some(fl) = cfg.fl.as_mut() {
                fl.alpha = alpha;
            }
            if let Some(c) = cfg.central.as_mut() {
                c.alpha = alpha;
            }
        }
        SweepAxis::Epsilon => {
            cfg.fl.as_mut().unwrap().central_opt.epsilon = value.parse().context("epsilon value")?;
        }
        SweepAxis::OptimizerPair => {
            let (central, local) = value
                .split_once('+')
                .context("optimizer_pair values look like central+local, e.g. adam+lamb")?;
            let fl = cfg.fl.as_mut().unwrap();
            fl.central_opt.kind = parse_opt_kind(central)?;
            fl.local_opt.kind = parse_opt_kind(local)?;
        }
        SweepAxis::SeedStartAxis => {
            cfg.fl.as_mut().unwrap().seed_start = match value {
                "random" => SeedStart::Random,
                "ws" => SeedStart::Ws,
                "pt" => SeedStart::Pt,
                other => bail!("unknown seed_start {other}"),
            };
        }
        SweepAxis::Scheduler => {
            let kind = parse_schedule_kind(value)?;
            match cfg.mode {
                Mode::Fl => cfg.fl.as_mut().unwrap().local_schedule.kind = kind,
                Mode::Central => cfg.central.as_mut().unwrap().schedule.kind = kind,
            }
        }
        SweepAxis::NormPlacementAxis => {
            cfg.model.norm_placement = match value {
                "pre" => NormPlacement::Pre,
                "post" => NormPlacement::Post,
                "none" => NormPlacement::None,
                other => bail!("unknown norm_placement {other}"),
            };
        }
    }
    Ok(())
}

fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Run one `train` per value, reusing a single corpus, and write
/// `comparison.csv` keyed by axis value (rows in input order).
pub fn cmd_sweep(
    base: &ExperimentConfig,
    axis_name: &str,
    values: &[String],
    seeds: &[u64],
    out_dir: &Path,
    workers: usize,
) -> Result<()> {
    let axis = SweepAxis::parse(axis_name)?;
    if !axis.valid_for(base.mode) {
        bail!("axis {axis_name} is not valid for mode {:?}", base.mode);
    }
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    std::fs::create_dir_all(out_dir)?;

    // materialize the corpus once so every point trains on identical data
    let mut shared = base.clone();
    if shared.corpus.is_some() {
        let data_dir = out_dir.join("data");
        let manifest = cmd_gen_data(&shared, &data_dir)?;
        shared.corpus = None;
        shared.dataset = Some(manifest);
    }

    let mut table = Vec::new();
    for value in values {
        let mut point = shared.clone();
        apply_value(&mut point, axis, value)?;
        point.validate().with_context(|| format!("config at {axis_name}={value}"))?;
        let point_dir = out_dir.join(format!("{}_{}", axis.name(), sanitize(value)));
        let summaries = cmd_train(&point, seeds, &point_dir, workers)?;
        let losses: Vec<f64> = summaries.iter().filter_map(|s| s.final_eval_loss).collect();
        let ters: Vec<f64> = summaries.iter().filter_map(|s| s.final_eval_ter).collect();
        let diverged = summaries.iter().filter(|s| s.diverged_round.is_some()).count();
        let stat = |v: &[f64]| -> (Option<f64>, Option<f64>) {
            if v.is_empty() {
                return (None, None);
            }
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std =
                (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
            (Some(mean), Some(std))
        };
        let (lm, ls) = stat(&losses);
        let (tm, ts) = stat(&ters);
        table.push(format!(
            "{},{},{},{},{},{},{}",
            axis.name(),
            value,
            fmt_opt(lm),
            fmt_opt(ls),
            fmt_opt(tm),
            fmt_opt(ts),
            diverged
        ));
    }

    let mut f = std::io::BufWriter::new(std::fs::File::create(out_dir.join("comparison.csv"))?);
    writeln!(
        f,
        "axis,value,final_eval_loss_mean,final_eval_loss_std,final_eval_ter_mean,final_eval_ter_std,diverged_runs"
    )?;
    for row in table {
        writeln!(f, "{row}")?;
    }
    f.flush()?;
    Ok(())
}
