//! Experiment configuration: one TOML document with nested sections.
//! Unknown keys are an error so a typo cannot silently skew an ablation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use fedseq_core::central::CentralConfig;
use fedseq_core::data::CorpusSpec;
use fedseq_core::diag::GridSubject;
use fedseq_core::fedcore::{FLConfig, SeedStart};
use fedseq_core::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Central,
    Fl,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    /// Fraction of speakers moved to the server pool for seed training.
    pub server_fraction: f64,
    /// A ws seed whose final loss falls below this gets a warning.
    #[serde(default = "default_ws_floor")]
    pub ws_loss_floor: f64,
    pub train: CentralConfig,
}

fn default_ws_floor() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagSection {
    /// Record client deltas / pseudo-gradients / central updates during
    /// training. Off by default for disk economy.
    #[serde(default)]
    pub record: bool,
    #[serde(default = "default_layer")]
    pub grid_layer: String,
    #[serde(default = "default_subjects")]
    pub grid_subjects: Vec<GridSubject>,
    #[serde(default = "default_window")]
    pub grid_window: usize,
}

fn default_layer() -> String {
    "all".into()
}

fn default_subjects() -> Vec<GridSubject> {
    vec![GridSubject::ClientUpdates, GridSubject::PseudoGradients, GridSubject::CentralUpdates]
}

fn default_window() -> usize {
    50
}

impl Default for DiagSection {
    fn default() -> Self {
        Self {
            record: false,
            grid_layer: default_layer(),
            grid_subjects: default_subjects(),
            grid_window: default_window(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Evaluation cadence in rounds (fl) or steps (central); 0 = final
    /// only.
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Path to a dataset manifest. Exactly one of `dataset` / `[corpus]`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub corpus: Option<CorpusSpec>,
    pub model: ModelConfig,
    #[serde(default)]
    pub fl: Option<FLConfig>,
    #[serde(default)]
    pub central: Option<CentralConfig>,
    #[serde(default)]
    pub seed: Option<SeedSection>,
    #[serde(default)]
    pub diag: Option<DiagSection>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.corpus) {
            (Some(_), Some(_)) => bail!("config must set exactly one of `dataset` and `[corpus]`, not both"),
            (None, None) => bail!("config must set one of `dataset` or `[corpus]`"),
            _ => {}
        }
        if let Some(c) = &self.corpus {
            c.validate()?;
        }
        self.model.validate()?;
        match self.mode {
            Mode::Fl => {
                let fl = self.fl.as_ref().context("mode = \"fl\" requires an [fl] section")?;
                if fl.alpha < 1.0 && !self.model.decoder_enabled {
                    bail!("fl.alpha < 1 requires model.decoder_enabled = true");
                }
                if fl.seed_start != SeedStart::Random && self.seed.is_none() {
                    bail!("fl.seed_start = ws/pt requires a [seed] section");
                }
            }
            Mode::Central => {
                let c = self
                    .central
                    .as_ref()
                    .context("mode = \"central\" requires a [central] section")?;
                c.validate()?;
                if c.alpha < 1.0 && !self.model.decoder_enabled {
                    bail!("central.alpha < 1 requires model.decoder_enabled = true");
                }
            }
        }
        if let Some(seed) = &self.seed {
            if !(0.0..1.0).contains(&seed.server_fraction) || seed.server_fraction == 0.0 {
                bail!("seed.server_fraction must be in (0,1)");
            }
            seed.train.validate()?;
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let cfg: ExperimentConfig = toml::from_str(&text)
        .with_context(|| format!("malformed config {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}
