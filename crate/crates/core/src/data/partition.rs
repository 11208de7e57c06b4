//! Client partitioning: IID or label-sharded, with balanced or power-law sizes.
//!
//! Non-IID partitions are built from label-pure shards. The label-sorted
//! examples are divided into `K * classes_per_client` shards, every shard
//! lying inside a single class, and each client receives `classes_per_client`
//! shards picked by a seeded permutation. A client therefore never sees more
//! than `classes_per_client` distinct labels.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    Iid,
    NonIid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeMode {
    Balanced,
    Unbalanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub label_mode: LabelMode,
    pub size_mode: SizeMode,
    pub classes_per_client: usize,
    pub power_exponent: f64,
    pub seed: u64,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec {
            label_mode: LabelMode::Iid,
            size_mode: SizeMode::Balanced,
            classes_per_client: 2,
            power_exponent: 1.5,
            seed: 0,
        }
    }
}

impl PartitionSpec {
    pub fn validate(&self, class_count: usize) -> Result<()> {
        if self.classes_per_client == 0 || self.classes_per_client > class_count {
            return Err(Error::Config(format!(
                "classes_per_client must be in 1..={class_count}, got {}",
                self.classes_per_client
            )));
        }
        if !(self.power_exponent > 0.0 && self.power_exponent.is_finite()) {
            return Err(Error::Config(format!(
                "power_exponent must be positive, got {}",
                self.power_exponent
            )));
        }
        Ok(())
    }
}

/// Relative size of the client holding power-law rank `r` (1-based): `r^-p`.
pub fn power_law_weights(count: usize, exponent: f64) -> Vec<f64> {
    (1..=count).map(|r| (r as f64).powf(-exponent)).collect()
}

/// Largest-remainder apportionment of `total` items over `weights`.
/// Ties in the remainder go to the lower index.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Raises every entry to at least `min`, taking the difference from the
/// currently largest entries.
fn enforce_minimum(sizes: &mut [usize], min: usize) {
    for i in 0..sizes.len() {
        while sizes[i] < min {
            let donor = (0..sizes.len())
                .filter(|&j| j != i)
                .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
                .expect("at least two clients");
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
}

/// Power-law rank (1-based) of every client, from a seeded permutation.
fn power_law_ranks(k: usize, seed: u64) -> Vec<usize> {
    let mut ranks: Vec<usize> = (1..=k).collect();
    ranks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(
        seed,
        &[0x7a, 1],
    )));
    ranks
}

/// Splits `ds` into `k` client datasets according to `spec`.
pub fn partition(ds: &Dataset, spec: &PartitionSpec, k: usize) -> Result<Vec<Dataset>> {
    if k == 0 {
        return Err(Error::Config("client count must be at least 1".into()));
    }
    spec.validate(ds.class_count)?;
    let groups = match spec.label_mode {
        LabelMode::Iid => iid_groups(ds, spec, k)?,
        LabelMode::NonIid => shard_groups(ds, spec, k)?,
    };
    Ok(groups
        .into_iter()
        .map(|mut idx| {
            idx.sort_unstable();
            ds.subset(&idx)
        })
        .collect())
}

fn iid_groups(ds: &Dataset, spec: &PartitionSpec, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = ds.len();
    let min = match spec.size_mode {
        SizeMode::Balanced => 1,
        SizeMode::Unbalanced => spec.classes_per_client,
    };
    if n < k * min {
        return Err(Error::Config(format!(
            "{n} examples cannot give {k} clients at least {min} each; need {} or more",
            k * min
        )));
    }
    let sizes = match spec.size_mode {
        SizeMode::Balanced => (0..k).map(|i| n / k + usize::from(i < n % k)).collect(),
        SizeMode::Unbalanced => {
            let ranks = power_law_ranks(k, spec.seed);
            let weights: Vec<f64> = ranks
                .iter()
                .map(|&r| (r as f64).powf(-spec.power_exponent))
                .collect();
            let mut sizes = apportion(n, &weights);
            enforce_minimum(&mut sizes, min);
            sizes
        }
    };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(
        spec.seed,
        &[0x7a, 0],
    )));
    let mut groups = Vec::with_capacity(k);
    let mut start = 0;
    for size in sizes {
        groups.push(idx[start..start + size].to_vec());
        start += size;
    }
    Ok(groups)
}

fn shard_groups(ds: &Dataset, spec: &PartitionSpec, k: usize) -> Result<Vec<Vec<usize>>> {
    let cpc = spec.classes_per_client;
    let shard_count = k * cpc;
    let counts = ds.label_counts();
    let present: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    if shard_count < present.len() {
        return Err(Error::Config(format!(
            "non-IID partition needs at least one shard per class: {} classes present but \
             only {k} clients x {cpc} classes per client = {shard_count} shards",
            present.len()
        )));
    }
    if ds.len() < shard_count {
        return Err(Error::Config(format!(
            "non-IID partition needs at least {shard_count} examples (one per shard), got {}",
            ds.len()
        )));
    }

    // shards per class: one each, the rest by the highest-averages rule
    let mut per_class = vec![0usize; counts.len()];
    for &c in &present {
        per_class[c] = 1;
    }
    for _ in present.len()..shard_count {
        let c = present
            .iter()
            .copied()
            .filter(|&c| per_class[c] < counts[c])
            .max_by(|&a, &b| {
                let qa = counts[a] as f64 / (per_class[a] + 1) as f64;
                let qb = counts[b] as f64 / (per_class[b] + 1) as f64;
                qa.total_cmp(&qb).then(b.cmp(&a))
            })
            .expect("enough examples for every shard");
        per_class[c] += 1;
    }

    // shard s belongs to class shard_class[s]; owner[s] is the client holding it
    let shard_class: Vec<usize> = present
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, per_class[c]))
        .collect();
    let mut slots: Vec<usize> = (0..shard_count).collect();
    slots.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(
        spec.seed,
        &[0x7a, 2],
    )));
    let mut owner = vec![0usize; shard_count];
    for (pos, &s) in slots.iter().enumerate() {
        owner[s] = pos / cpc;
    }

    let client_weight: Vec<f64> = match spec.size_mode {
        SizeMode::Balanced => vec![1.0; k],
        SizeMode::Unbalanced => power_law_ranks(k, spec.seed)
            .iter()
            .map(|&r| (r as f64).powf(-spec.power_exponent))
            .collect(),
    };

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); counts.len()];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut groups = vec![Vec::new(); k];
    let mut s = 0;
    for &c in &present {
        let shards: Vec<usize> = (s..s + per_class[c]).collect();
        s += per_class[c];
        let weights: Vec<f64> = shards.iter().map(|&sh| client_weight[owner[sh]]).collect();
        let mut sizes = apportion(counts[c], &weights);
        if sizes.len() > 1 {
            enforce_minimum(&mut sizes, 1);
        }
        let mut start = 0;
        for (&sh, size) in shards.iter().zip(sizes) {
            debug_assert_eq!(shard_class[sh], c);
            groups[owner[sh]].extend_from_slice(&by_class[c][start..start + size]);
            start += size;
        }
    }
    Ok(groups)
}
