//! Loads the train and test sets a config asks for.

use std::path::PathBuf;

use anyhow::{Context, Result};
use fedlab_core::data::{load_idx, normalize, synth_train_test, Standardizer};
use fedlab_core::seed;
use fedlab_core::Dataset;

use crate::config::{DataSource, DatasetSection, FileConfig};

/// Overrides `dataset.dir` for MNIST configs.
pub const DATA_DIR_ENV: &str = "FEDLAB_DATA_DIR";

const DEFAULT_MNIST_DIR: &str = "data/mnist";

/// Tag mixed into the dataset seed for subset sampling.
const SUBSET: u64 = 0x5b;

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    /// Present when the inputs were standardized.
    pub standardizer: Option<Standardizer>,
}

/// Directory the MNIST files are read from: the environment override, then the config, then `data/mnist`.
pub fn mnist_dir(section: &DatasetSection) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => section
            .dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_MNIST_DIR)),
    }
}

pub fn load(cfg: &FileConfig) -> Result<LoadedData> {
    let d = &cfg.dataset;
    let data_seed = cfg.dataset_seed();
    let (train, test) = match d.source {
        DataSource::Synthetic => synth_train_test(
            d.classes.unwrap_or_default(),
            d.train_per_class.unwrap_or_default(),
            d.test_per_class.unwrap_or_default(),
            d.feature_dim.unwrap_or_default(),
            data_seed,
        ),
        DataSource::Mnist => {
            let dir = mnist_dir(d);
            let files = d.files.clone().unwrap_or_default();
            let train = load_idx(dir.join(&files.train_images), dir.join(&files.train_labels))
                .with_context(|| format!("loading training data from {}", dir.display()))?;
            let test = load_idx(dir.join(&files.test_images), dir.join(&files.test_labels))
                .with_context(|| format!("loading test data from {}", dir.display()))?;
            let pick = |ds: Dataset, n: Option<usize>, which: u64| match n {
                Some(n) => ds.sample(n, seed::derive(data_seed, &[SUBSET, which])),
                None => ds,
            };
            (pick(train, d.train_subset, 0), pick(test, d.test_subset, 1))
        }
    };
    if !d.normalize {
        return Ok(LoadedData {
            train,
            test,
            standardizer: None,
        });
    }
    let (train, s) = normalize(&train).context("standardizing the training set")?;
    let test = s.apply(&test);
    Ok(LoadedData {
        train,
        test,
        standardizer: Some(s),
    })
}
