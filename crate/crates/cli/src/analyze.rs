//! Post-hoc similarity analysis over the update streams a run recorded.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use fedseq_core::diag::{mean_offdiag, GridSubject, SimilarityGrid};
use fedseq_core::fedcore::{RecordedUpdate, UpdateRecorder};

use crate::runner::DiagMeta;

/// Build grid files plus a mean-offdiagonal report from a run directory
/// containing `updates.jsonl`.
pub fn cmd_analyze(run_dir: &Path, out_dir: Option<&Path>) -> Result<()> {
    let updates_path = run_dir.join("updates.jsonl");
    if !updates_path.exists() {
        bail!(
            "no recorded update streams at {}; enable `record = true` in the [diag] \
             section of the experiment config and re-run training",
            updates_path.display()
        );
    }
    let meta: DiagMeta = serde_json::from_reader(
        std::fs::File::open(run_dir.join("diag_meta.json"))
            .context("missing diag_meta.json next to updates.jsonl")?,
    )?;

    let mut records: Vec<RecordedUpdate> = Vec::new();
    for line in std::io::BufReader::new(std::fs::File::open(&updates_path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    if records.is_empty() {
        bail!("updates.jsonl is empty; nothing to analyze");
    }
    let recorder = UpdateRecorder::from_records(meta.layer.clone(), records);

    let out = out_dir.unwrap_or(run_dir);
    std::fs::create_dir_all(out)?;
    let mut report = Vec::new();
    for subject in recorder.subjects.clone() {
        let grid = match subject {
            GridSubject::ClientUpdates => {
                // per-round grids would fan out; use the last recorded round
                let round = *recorder
                    .client_rounds()
                    .last()
                    .context("no client update rounds recorded")?;
                recorder.client_grid(round)?
            }
            GridSubject::PseudoGradients | GridSubject::CentralUpdates => {
                recorder.series_grid(subject)?
            }
        };
        let path = out.join(format!("grid_{}_{}.json", subject, sanitize(&meta.layer)));
        write_grid(&path, &grid)?;
        report.push(format!(
            "subject={} layer={} n={} mean_offdiag={}",
            subject,
            grid.layer_name,
            grid.size(),
            mean_offdiag(&grid)?
        ));
    }
    let mut f = std::fs::File::create(out.join("similarity_report.txt"))?;
    for line in &report {
        writeln!(f, "{line}")?;
        println!("{line}");
    }
    Ok(())
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn write_grid(path: &Path, grid: &SimilarityGrid) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, grid)?;
    f.write_all(b"\n")?;
    Ok(())
}
