//! CSV metric files.
//!
//! `<strategy>.metrics.csv` has one row per round:
//!
//! | column | meaning |
//! |---|---|
//! | `round` | 0-based round index |
//! | `strategy` | strategy id |
//! | `N` | norm of the weighted average update |
//! | `E` | weighted average of update norms |
//! | `ratio` | `N / E`, empty when `E = 0` |
//! | `integrated_norm` | running sum of server step norms |
//! | `step_norm` | norm of the server step `w_{t+1} - w_t` |
//! | `eval_acc_distributed` | test accuracy of the model sent to clients |
//! | `eval_acc_averaged` | test accuracy of the plain average, empty unless evaluated |
//!
//! `<strategy>.layers.csv` has one row per round and parameter segment with
//! columns `round, layer, N, E, ratio`. Reals are written with 17 significant
//! digits so parsing them back recovers the exact value.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use fedlab_core::orchestrator::{MetricsSink, RoundMetrics};
use fedlab_core::Error as CoreError;

pub const METRICS_HEADER: [&str; 9] = [
    "round",
    "strategy",
    "N",
    "E",
    "ratio",
    "integrated_norm",
    "step_norm",
    "eval_acc_distributed",
    "eval_acc_averaged",
];

pub const LAYERS_HEADER: [&str; 5] = ["round", "layer", "N", "E", "ratio"];

pub fn metrics_file(strategy: &str) -> String {
    format!("{strategy}.metrics.csv")
}

pub fn layers_file(strategy: &str) -> String {
    format!("{strategy}.layers.csv")
}

/// 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

fn ratio(n: f64, e: f64) -> Option<f64> {
    (e != 0.0).then(|| n / e)
}

/// Writes both CSV files as rounds complete, flushing after each round.
pub struct CsvSink {
    strategy: String,
    metrics: csv::Writer<BufWriter<File>>,
    layers: csv::Writer<BufWriter<File>>,
    pub rounds_written: usize,
}

impl CsvSink {
    pub fn create(dir: &Path, strategy: &str) -> Result<Self> {
        let open = |name: String| -> Result<csv::Writer<BufWriter<File>>> {
            let path = dir.join(name);
            let file =
                File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            Ok(csv::Writer::from_writer(BufWriter::new(file)))
        };
        let mut metrics = open(metrics_file(strategy))?;
        let mut layers = open(layers_file(strategy))?;
        metrics.write_record(METRICS_HEADER)?;
        layers.write_record(LAYERS_HEADER)?;
        metrics.flush()?;
        layers.flush()?;
        Ok(CsvSink {
            strategy: strategy.to_string(),
            metrics,
            layers,
            rounds_written: 0,
        })
    }

    fn write(&mut self, m: &RoundMetrics) -> csv::Result<()> {
        let r = &m.nwda;
        self.metrics.write_record([
            m.round.to_string(),
            self.strategy.clone(),
            fmt_real(r.n),
            fmt_real(r.e),
            fmt_opt(ratio(r.n, r.e)),
            fmt_real(m.integrated_norm),
            fmt_opt(r.server_step_norm),
            fmt_real(m.eval_acc_distributed),
            fmt_opt(m.eval_acc_averaged),
        ])?;
        for layer in &r.per_layer {
            self.layers.write_record([
                m.round.to_string(),
                layer.name.clone(),
                fmt_real(layer.n),
                fmt_real(layer.e),
                fmt_opt(ratio(layer.n, layer.e)),
            ])?;
        }
        self.metrics.flush()?;
        self.layers.flush()?;
        Ok(())
    }
}

impl MetricsSink for CsvSink {
    fn record(&mut self, metrics: &RoundMetrics) -> fedlab_core::Result<()> {
        self.write(metrics).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CoreError::Io(io),
            other => CoreError::Usage(format!("writing metrics: {other:?}")),
        })?;
        self.rounds_written += 1;
        Ok(())
    }
}

/// One parsed row of a metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub strategy: String,
    pub n: f64,
    pub e: f64,
    pub ratio: Option<f64>,
    pub integrated_norm: f64,
    pub step_norm: Option<f64>,
    pub eval_acc_distributed: f64,
    pub eval_acc_averaged: Option<f64>,
}

impl MetricsRow {
    /// The accuracy a summary reports: the averaged model when it was evaluated.
    pub fn accuracy(&self) -> f64 {
        self.eval_acc_averaged.unwrap_or(self.eval_acc_distributed)
    }

    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.round.to_string(),
            self.strategy.clone(),
            fmt_real(self.n),
            fmt_real(self.e),
            fmt_opt(self.ratio),
            fmt_real(self.integrated_norm),
            fmt_opt(self.step_norm),
            fmt_real(self.eval_acc_distributed),
            fmt_opt(self.eval_acc_averaged),
        ]
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = reader.headers()?.clone();
    if header.iter().ne(METRICS_HEADER) {
        bail!("{}: unexpected header {:?}", path.display(), header);
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let at = || format!("{} row {}", path.display(), i + 2);
        let real = |j: usize| -> Result<f64> {
            record[j]
                .parse()
                .with_context(|| format!("{}: bad {}", at(), METRICS_HEADER[j]))
        };
        let opt = |j: usize| -> Result<Option<f64>> {
            if record[j].is_empty() {
                Ok(None)
            } else {
                real(j).map(Some)
            }
        };
        rows.push(MetricsRow {
            round: record[0]
                .parse()
                .with_context(|| format!("{}: bad round", at()))?,
            strategy: record[1].to_string(),
            n: real(2)?,
            e: real(3)?,
            ratio: opt(4)?,
            integrated_norm: real(5)?,
            step_norm: opt(6)?,
            eval_acc_distributed: real(7)?,
            eval_acc_averaged: opt(8)?,
        });
    }
    Ok(rows)
}
