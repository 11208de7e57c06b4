//! The `compare` command: final and best accuracy per strategy and scenario.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fedlab_core::StrategyKind;

use crate::config::DatasetSection;
use crate::manifest::{Manifest, Status, MANIFEST_FILE};
use crate::metrics::{read_metrics, MetricsRow, METRICS_HEADER};

/// Column order of the accuracy summary.
const SCENARIO_ORDER: [&str; 4] = ["IID-B", "non-IID-B", "IID-UB", "non-IID-UB"];

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub scenario: String,
    pub strategy: StrategyKind,
    pub rows: Vec<MetricsRow>,
}

impl RunRecord {
    pub fn final_accuracy(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, MetricsRow::accuracy)
    }

    pub fn best_accuracy(&self) -> f64 {
        self.rows
            .iter()
            .map(MetricsRow::accuracy)
            .fold(f64::NAN, f64::max)
    }
}

/// Directories holding a manifest: `dir` itself and its immediate subdirectories, sorted.
fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    if dir.join(MANIFEST_FILE).is_file() {
        found.push(dir.to_path_buf());
    }
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    subdirs.sort();
    found.extend(subdirs);
    Ok(found)
}

/// Loads every run under `dir` and checks that they are comparable.
pub fn collect(dir: &Path) -> Result<Vec<RunRecord>> {
    let dirs = run_dirs(dir)?;
    if dirs.is_empty() {
        bail!(
            "no {MANIFEST_FILE} found in {} or its subdirectories",
            dir.display()
        );
    }
    let mut runs = Vec::new();
    let mut reference: Option<(PathBuf, DatasetSection, usize)> = None;
    let mut seen = BTreeMap::new();
    for d in dirs {
        let manifest = Manifest::read(&d)?;
        if manifest.status != Status::Complete {
            bail!(
                "run in {} is marked {:?}; rerun it before comparing",
                d.display(),
                manifest.status
            );
        }
        let dataset = manifest.config.dataset.clone();
        let rounds = manifest.config.experiment.rounds;
        match &reference {
            None => reference = Some((d.clone(), dataset, rounds)),
            Some((first, ref_data, ref_rounds)) => {
                if *ref_data != dataset {
                    bail!(
                        "runs in {} and {} use different datasets, so their test sets differ",
                        first.display(),
                        d.display()
                    );
                }
                if *ref_rounds != rounds {
                    bail!(
                        "runs in {} and {} have different round counts ({ref_rounds} vs {rounds})",
                        first.display(),
                        d.display()
                    );
                }
            }
        }
        for output in &manifest.outputs {
            let key = (manifest.scenario.clone(), output.strategy);
            if let Some(other) = seen.insert(key, d.clone()) {
                bail!(
                    "{} appears twice for scenario {} (in {} and {})",
                    output.strategy,
                    manifest.scenario,
                    other.display(),
                    d.display()
                );
            }
            let rows = read_metrics(&d.join(&output.metrics))?;
            if rows.len() != rounds {
                bail!(
                    "{} has {} rows, expected {rounds}",
                    output.metrics,
                    rows.len()
                );
            }
            runs.push(RunRecord {
                scenario: manifest.scenario.clone(),
                strategy: output.strategy,
                rows,
            });
        }
    }
    Ok(runs)
}

fn scenario_rank(scenario: &str) -> (usize, String) {
    let distribution = scenario.rsplit(' ').next().unwrap_or(scenario);
    let pos = SCENARIO_ORDER
        .iter()
        .position(|s| *s == distribution)
        .unwrap_or(SCENARIO_ORDER.len());
    (pos, scenario.to_string())
}

/// Strategies as rows in the fixed strategy order, scenarios as columns.
/// Each cell reads `final / best` in percent.
pub fn render_table(runs: &[RunRecord]) -> String {
    let mut scenarios: Vec<&str> = runs.iter().map(|r| r.scenario.as_str()).collect();
    scenarios.sort_by_key(|s| scenario_rank(s));
    scenarios.dedup();
    let cell = |kind: StrategyKind, scenario: &str| {
        runs.iter()
            .find(|r| r.strategy == kind && r.scenario == scenario)
            .map_or_else(
                || "-".to_string(),
                |r| {
                    format!(
                        "{:.1} / {:.1}",
                        100.0 * r.final_accuracy(),
                        100.0 * r.best_accuracy()
                    )
                },
            )
    };
    let rows: Vec<(String, Vec<String>)> = StrategyKind::ALL
        .iter()
        .filter(|k| runs.iter().any(|r| r.strategy == **k))
        .map(|&k| {
            (
                k.label().to_string(),
                scenarios.iter().map(|s| cell(k, s)).collect(),
            )
        })
        .collect();

    let mut widths: Vec<usize> = scenarios.iter().map(|s| s.len()).collect();
    for (_, cells) in &rows {
        for (w, c) in widths.iter_mut().zip(cells) {
            *w = (*w).max(c.len());
        }
    }
    let first = rows
        .iter()
        .map(|(l, _)| l.len())
        .max()
        .unwrap_or(0)
        .max("strategy".len());

    let mut out = String::new();
    let _ = write!(out, "{:<first$}", "strategy");
    for (s, w) in scenarios.iter().zip(&widths) {
        let _ = write!(out, "  {s:>w$}");
    }
    out.push('\n');
    for (label, cells) in &rows {
        let _ = write!(out, "{label:<first$}");
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    }
    out.push_str("cells: final / best test accuracy (%), averaged model where evaluated\n");
    out
}

/// Every row of every run with a leading `scenario` column.
pub fn write_merged(runs: &[RunRecord], path: &Path) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(std::iter::once("scenario").chain(METRICS_HEADER))?;
    for run in runs {
        for row in &run.rows {
            w.write_record(std::iter::once(run.scenario.clone()).chain(row.to_record()))?;
        }
    }
    w.flush()?;
    Ok(())
}
