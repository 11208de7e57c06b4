//! The `analyze-nwda` command: FedAvg's N and E under a single client, IID clients and non-IID clients.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use fedlab_core::data::{LabelMode, SizeMode};
use fedlab_core::orchestrator::{run_experiment_with, RoundMetrics};
use fedlab_core::StrategyKind;

use crate::config::FileConfig;
use crate::data;
use crate::metrics::fmt_real;

#[derive(Debug, Clone)]
pub struct NwdaSeries {
    pub name: &'static str,
    pub rounds: Vec<RoundMetrics>,
}

impl NwdaSeries {
    fn mean(&self, f: impl Fn(&RoundMetrics) -> f64) -> f64 {
        self.rounds.iter().map(f).sum::<f64>() / self.rounds.len() as f64
    }

    pub fn mean_n(&self) -> f64 {
        self.mean(|m| m.nwda.n)
    }

    pub fn mean_e(&self) -> f64 {
        self.mean(|m| m.nwda.e)
    }

    /// Mean of the per-round `N / E`, skipping rounds with `E = 0`.
    pub fn mean_ratio(&self) -> f64 {
        let ratios: Vec<f64> = self.rounds.iter().filter_map(|m| m.nwda.ratio()).collect();
        ratios.iter().sum::<f64>() / ratios.len() as f64
    }
}

/// Runs FedAvg three times on the config's data: all data on one client, then
/// the configured client count with IID and with non-IID labels.
pub fn analyze(cfg: &FileConfig, workers: usize) -> Result<Vec<NwdaSeries>> {
    let data = data::load(cfg)?;
    let base = cfg.experiment_for(StrategyKind::FedAvg)?;
    let mut single = base.clone();
    single.clients = 1;
    single.fraction = 1.0;
    single.partition.label_mode = LabelMode::Iid;
    single.partition.size_mode = SizeMode::Balanced;
    let mut iid = base.clone();
    iid.partition.label_mode = LabelMode::Iid;
    let mut non_iid = base;
    non_iid.partition.label_mode = LabelMode::NonIid;

    [
        ("single-client", single),
        ("iid", iid),
        ("non-iid", non_iid),
    ]
    .into_iter()
    .map(|(name, exp)| {
        let mut rounds = Vec::with_capacity(exp.rounds);
        run_experiment_with(&exp, &data.train, &data.test, workers, &mut rounds)
            .with_context(|| format!("{name} run"))?;
        Ok(NwdaSeries { name, rounds })
    })
    .collect()
}

pub fn render_summary(series: &[NwdaSeries]) -> String {
    let mut out = format!(
        "{:<14}  {:>12}  {:>12}  {:>10}  {:>10}\n",
        "clients", "mean N", "mean E", "mean N/E", "final acc"
    );
    for s in series {
        let acc = s.rounds.last().map_or(f64::NAN, |m| m.eval_acc_distributed);
        let _ = writeln!(
            out,
            "{:<14}  {:>12.6}  {:>12.6}  {:>10.4}  {:>10.4}",
            s.name,
            s.mean_n(),
            s.mean_e(),
            s.mean_ratio(),
            acc
        );
    }
    out
}

/// Writes `nwda-<name>.csv` with columns `round, N, E, ratio` for each series.
pub fn write_series(series: &[NwdaSeries], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for s in series {
        let path = dir.join(format!("nwda-{}.csv", s.name));
        let mut w = csv::Writer::from_path(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        w.write_record(["round", "N", "E", "ratio"])?;
        for m in &s.rounds {
            w.write_record([
                m.round.to_string(),
                fmt_real(m.nwda.n),
                fmt_real(m.nwda.e),
                m.nwda.ratio().map(fmt_real).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}
