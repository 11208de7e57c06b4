//! Datasets, preprocessing and client partitioning.

mod idx;
mod partition;

pub use idx::{encode_images, encode_labels, load_idx, parse_images, parse_labels, parse_pair};
pub use partition::{apportion, partition, power_law_weights, LabelMode, PartitionSpec, SizeMode};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Batch;
use crate::seed;

/// Labelled examples, one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Dimension(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Seeded random subset of `n` examples (all of them if `n >= len`).
    pub fn sample(&self, n: usize, seed: u64) -> Dataset {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n);
        idx.sort_unstable();
        self.subset(&idx)
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn distinct_labels(&self) -> usize {
        self.label_counts().iter().filter(|&&c| c > 0).count()
    }

    pub fn as_batch(&self) -> Batch {
        Batch {
            inputs: self.inputs.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// Scalar standardization fitted on one dataset and reusable on another.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    /// Population mean and standard deviation over every feature of every row.
    pub fn fit(ds: &Dataset) -> Result<Self> {
        let values = ds.inputs.as_slice();
        if ds.len() < 2 || values.is_empty() {
            return Err(Error::DegenerateData(format!(
                "need at least 2 examples to standardize, got {}",
                ds.len()
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std.is_nan() || std <= 0.0 {
            return Err(Error::DegenerateData(
                "all feature values are identical".into(),
            ));
        }
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let mut out = ds.clone();
        for v in out.inputs.as_mut_slice() {
            *v = (*v - self.mean) / self.std;
        }
        out
    }
}

/// Fits a [`Standardizer`] on `ds` and applies it.
pub fn normalize(ds: &Dataset) -> Result<(Dataset, Standardizer)> {
    let s = Standardizer::fit(ds)?;
    Ok((s.apply(ds), s))
}

/// Gaussian blobs: each class gets a center with coordinates uniform in
/// `[-1, 1]`; examples add isotropic noise with standard deviation 0.5.
/// Rows are grouped by class.
pub fn synth_dataset(
    class_count: usize,
    per_class: usize,
    feature_dim: usize,
    seed: u64,
) -> Dataset {
    synth_draw(class_count, per_class, feature_dim, seed, 0)
}

/// Train and test sets drawn around the same class centers with independent noise.
pub fn synth_train_test(
    class_count: usize,
    train_per_class: usize,
    test_per_class: usize,
    feature_dim: usize,
    seed: u64,
) -> (Dataset, Dataset) {
    (
        synth_draw(class_count, train_per_class, feature_dim, seed, 0),
        synth_draw(class_count, test_per_class, feature_dim, seed, 1),
    )
}

pub const SYNTH_NOISE_STD: f64 = 0.5;

fn synth_draw(
    class_count: usize,
    per_class: usize,
    feature_dim: usize,
    seed: u64,
    stream: u64,
) -> Dataset {
    let mut center_rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[0xc0, 0]));
    let centers: Vec<Vec<f64>> = (0..class_count)
        .map(|_| {
            (0..feature_dim)
                .map(|_| center_rng.random_range(-1.0..=1.0))
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, SYNTH_NOISE_STD).expect("valid std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[0xda, stream]));
    let mut data = Vec::with_capacity(class_count * per_class * feature_dim);
    let mut labels = Vec::with_capacity(class_count * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(center.iter().map(|m| m + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    Dataset {
        inputs: Matrix::new(labels.len(), feature_dim, data).expect("sized"),
        labels,
        class_count,
    }
}

/// Seeded shuffle of the dataset cut into consecutive batches of `batch_size`.
pub fn batches(ds: &Dataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    if ds.is_empty() {
        return Err(Error::Usage("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Usage("batch size must be at least 1".into()));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(idx
        .chunks(batch_size)
        .map(|chunk| Batch {
            inputs: ds.inputs.select_rows(chunk),
            labels: chunk.iter().map(|&i| ds.labels[i]).collect(),
        })
        .collect())
}
