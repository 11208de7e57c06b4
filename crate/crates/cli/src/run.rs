//! The `run` command: one experiment per requested strategy, sharing data, partition and seeds.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use fedlab_core::orchestrator::run_experiment_with;
use fedlab_core::{ExperimentConfig, StrategyKind};

use crate::config::FileConfig;
use crate::data;
use crate::manifest::{now, Manifest, Output, Seeds, Status};
use crate::metrics::{layers_file, metrics_file, CsvSink};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: usize,
    /// Sweep these strategies instead of the config's `strategy.kind`.
    pub strategies: Option<Vec<StrategyKind>>,
    pub seed: Option<u64>,
}

/// Runs the config and returns the final manifest.
///
/// Configuration problems are reported before anything is written. Once the
/// manifest exists, any failure is recorded in it before the error is returned.
pub fn run(config_path: &Path, out_dir: &Path, opts: &RunOptions) -> Result<Manifest> {
    let mut cfg = FileConfig::load(config_path)?;
    if let Some(seed) = opts.seed {
        if seed > i64::MAX as u64 {
            return Err(anyhow!("--seed must be at most {}", i64::MAX));
        }
        cfg.set_seed(seed);
    }
    cfg.resolve_seeds();
    let kinds = opts
        .strategies
        .clone()
        .unwrap_or_else(|| vec![cfg.strategy.kind]);
    let experiments = kinds
        .iter()
        .map(|&k| cfg.experiment_for(k).map(|e| (k, e)))
        .collect::<Result<Vec<(StrategyKind, ExperimentConfig)>, _>>()
        .map_err(|mut e| {
            e.file = Some(config_path.to_path_buf());
            e
        })?;
    let workers = opts.workers.max(1);

    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        status: Status::Incomplete,
        scenario: cfg.scenario(),
        started: now(),
        finished: None,
        error: None,
        source_config: config_path.to_path_buf(),
        workers,
        seeds: Seeds {
            experiment: cfg.experiment.seed,
            dataset: cfg.dataset_seed(),
            partition: cfg.partition_seed(),
        },
        outputs: kinds
            .iter()
            .map(|k| Output {
                strategy: *k,
                metrics: metrics_file(k.id()),
                layers: layers_file(k.id()),
                rounds_completed: 0,
            })
            .collect(),
        config: cfg.clone(),
    };
    manifest.write(out_dir)?;

    match execute(&cfg, &experiments, out_dir, workers, &mut manifest) {
        Ok(()) => {
            manifest.status = Status::Complete;
            manifest.finished = Some(now());
            manifest.write(out_dir)?;
            Ok(manifest)
        }
        Err(e) => {
            manifest.status = Status::Failed;
            manifest.finished = Some(now());
            manifest.error = Some(format!("{e:#}"));
            // the original error matters more than a failure to record it
            let _ = manifest.write(out_dir);
            Err(e)
        }
    }
}

fn execute(
    cfg: &FileConfig,
    experiments: &[(StrategyKind, ExperimentConfig)],
    out_dir: &Path,
    workers: usize,
    manifest: &mut Manifest,
) -> Result<()> {
    let data = data::load(cfg)?;
    for (i, (kind, exp)) in experiments.iter().enumerate() {
        let mut sink = CsvSink::create(out_dir, kind.id())?;
        let result = run_experiment_with(exp, &data.train, &data.test, workers, &mut sink);
        manifest.outputs[i].rounds_completed = sink.rounds_written;
        result.with_context(|| format!("strategy {kind}"))?;
        manifest.write(out_dir)?;
    }
    Ok(())
}
