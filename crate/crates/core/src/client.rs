//! Local training on one client and aggregation-weight assignment.

use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::nn::{gradient, prox_gradient_addend, sgd_step, NetworkSpec};
use crate::params::{delta, ParamVector};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    /// Learning rate.
    pub eta: f64,
    /// Coupled weight decay.
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Proximal coefficient; 0 disables the proximal term.
    pub mu: f64,
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!(
                "eta must be a finite non-negative number, got {}",
                self.eta
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad(format!("mu must be >= 0, got {}", self.mu));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// What a client sends back after a round of local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub trained: ParamVector,
    pub delta: ParamVector,
    pub sample_count: usize,
    pub agg_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// `n_k / Σ n_j`.
    BySampleCount,
    /// `1 / m` for each of the `m` participating clients.
    #[default]
    Uniform,
}

/// Seed for the batch shuffle of `epoch` on `client_id` in the round keyed by `round_seed`.
pub fn epoch_seed(round_seed: u64, client_id: usize, epoch: usize) -> u64 {
    seed::derive(round_seed, &[seed::TRAIN, client_id as u64, epoch as u64])
}

/// Runs `cfg.epochs` passes of mini-batch SGD starting from `w_t`.
///
/// When `cfg.mu > 0` the gradient of `(mu/2) * ||w - w_t||^2` is added to
/// every step, anchored at the received `w_t` for the whole round.
pub fn local_train(
    w_t: &ParamVector,
    spec: &NetworkSpec,
    data: &Dataset,
    cfg: &ClientConfig,
    round_seed: u64,
    client_id: usize,
) -> Result<ClientUpdate> {
    ParamVector::zeros(spec.layout()).check_compatible(w_t)?;
    if data.is_empty() {
        return Err(Error::Usage(format!("client {client_id} has no data")));
    }
    let mut w = w_t.clone();
    for epoch in 1..=cfg.epochs {
        for batch in batches(
            data,
            cfg.batch_size,
            epoch_seed(round_seed, client_id, epoch),
        )? {
            let mut g = gradient(spec, &w, &batch.inputs, &batch.labels)?;
            if cfg.mu > 0.0 {
                g = g.add(&prox_gradient_addend(&w, w_t, cfg.mu)?)?;
            }
            w = sgd_step(&w, &g, cfg.eta, cfg.lambda)?;
        }
    }
    let delta = delta(&w, w_t)?;
    Ok(ClientUpdate {
        client_id,
        trained: w,
        delta,
        sample_count: data.len(),
        agg_weight: 0.0,
    })
}

/// Fills in `agg_weight` for every update.
pub fn assign_weights(
    mut updates: Vec<ClientUpdate>,
    mode: WeightMode,
) -> Result<Vec<ClientUpdate>> {
    if updates.is_empty() {
        return Err(Error::Usage("no client updates to weight".into()));
    }
    match mode {
        WeightMode::Uniform => {
            let w = 1.0 / updates.len() as f64;
            updates.iter_mut().for_each(|u| u.agg_weight = w);
        }
        WeightMode::BySampleCount => {
            let total: usize = updates.iter().map(|u| u.sample_count).sum();
            if total == 0 {
                return Err(Error::Usage(
                    "all client updates report zero samples".into(),
                ));
            }
            for u in &mut updates {
                u.agg_weight = u.sample_count as f64 / total as f64;
            }
        }
    }
    Ok(updates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{normalize, partition, synth_dataset, LabelMode, PartitionSpec, SizeMode};
    use crate::nn::init_params;
    use crate::params::l2_norm;

    fn setup() -> (NetworkSpec, Dataset, ParamVector) {
        let (ds, _) = normalize(&synth_dataset(3, 20, 4, 5)).unwrap();
        let spec = NetworkSpec::new(vec![4, 6, 3]).unwrap();
        let w = init_params(&spec, 1);
        (spec, ds, w)
    }

    fn cfg(eta: f64, batch_size: usize, epochs: usize, mu: f64) -> ClientConfig {
        ClientConfig {
            eta,
            lambda: 0.0,
            batch_size,
            epochs,
            mu,
        }
    }

    fn update(id: usize, n: usize) -> ClientUpdate {
        let v = ParamVector::from_vec(vec![0.0]);
        ClientUpdate {
            client_id: id,
            trained: v.clone(),
            delta: v,
            sample_count: n,
            agg_weight: 0.0,
        }
    }

    #[test]
    fn frozen_learning_rate_returns_the_input() {
        let (spec, ds, w) = setup();
        let u = local_train(&w, &spec, &ds, &cfg(0.0, 7, 2, 0.0), 3, 0).unwrap();
        assert_eq!(u.trained, w);
        assert!(u.delta.values().iter().all(|&v| v == 0.0));
        assert_eq!(u.sample_count, 60);
    }

    #[test]
    fn single_step_matches_hand_trace() {
        let (spec, ds, w) = setup();
        let c = ClientConfig {
            lambda: 0.01,
            ..cfg(0.1, 1000, 1, 0.0)
        };
        let u = local_train(&w, &spec, &ds, &c, 9, 2).unwrap();
        let g = gradient(&spec, &w, &ds.inputs, &ds.labels).unwrap();
        for i in 0..w.len() {
            let want = -0.1 * (g.values()[i] + 0.01 * w.values()[i]);
            assert!((u.delta.values()[i] - want).abs() <= 1e-15 + 1e-12 * want.abs());
        }
    }

    #[test]
    fn strong_proximal_term_shrinks_the_update() {
        let (spec, ds, w) = setup();
        // eta * mu must stay below 2 or the proximal pull itself oscillates
        let free = local_train(&w, &spec, &ds, &cfg(0.001, 10, 3, 0.0), 4, 1).unwrap();
        let pulled = local_train(&w, &spec, &ds, &cfg(0.001, 10, 3, 1e3), 4, 1).unwrap();
        assert!(l2_norm(&pulled.delta) < l2_norm(&free.delta));

        let free = local_train(&w, &spec, &ds, &cfg(0.05, 10, 3, 0.0), 4, 1).unwrap();
        let pulled = local_train(&w, &spec, &ds, &cfg(0.05, 10, 3, 10.0), 4, 1).unwrap();
        assert!(l2_norm(&pulled.delta) < l2_norm(&free.delta));
    }

    #[test]
    fn deterministic_and_delta_consistent() {
        let (spec, ds, w) = setup();
        let c = cfg(0.05, 8, 2, 0.01);
        let a = local_train(&w, &spec, &ds, &c, 17, 3).unwrap();
        let b = local_train(&w, &spec, &ds, &c, 17, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.delta, delta(&a.trained, &w).unwrap());
        assert_ne!(a, local_train(&w, &spec, &ds, &c, 18, 3).unwrap());
    }

    #[test]
    fn training_equals_manual_sgd_steps_bitwise() {
        let (spec, ds, w) = setup();
        for batch_size in [60, 8] {
            let u = local_train(&w, &spec, &ds, &cfg(0.05, batch_size, 4, 0.0), 6, 2).unwrap();
            let mut manual = w.clone();
            for epoch in 1..=4 {
                for b in batches(&ds, batch_size, epoch_seed(6, 2, epoch)).unwrap() {
                    let g = gradient(&spec, &manual, &b.inputs, &b.labels).unwrap();
                    manual = sgd_step(&manual, &g, 0.05, 0.0).unwrap();
                }
            }
            assert_eq!(u.trained, manual);
        }
    }

    #[test]
    fn rejects_mismatched_model() {
        let (spec, ds, _) = setup();
        let wrong = ParamVector::from_vec(vec![0.0; 3]);
        assert!(matches!(
            local_train(&wrong, &spec, &ds, &cfg(0.1, 5, 1, 0.0), 0, 0),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn weight_modes() {
        let w = assign_weights(
            vec![update(0, 10), update(1, 30)],
            WeightMode::BySampleCount,
        )
        .unwrap();
        assert_eq!(w[0].agg_weight, 0.25);
        assert_eq!(w[1].agg_weight, 0.75);
        let w = assign_weights(
            (0..4).map(|i| update(i, i + 1)).collect(),
            WeightMode::Uniform,
        )
        .unwrap();
        assert!(w.iter().all(|u| u.agg_weight == 0.25));
        assert!(assign_weights(vec![], WeightMode::Uniform).is_err());
    }

    #[test]
    fn sample_count_weights_follow_partition_ratios() {
        let ds = synth_dataset(4, 50, 2, 0);
        let spec = PartitionSpec {
            label_mode: LabelMode::Iid,
            size_mode: SizeMode::Unbalanced,
            ..PartitionSpec::default()
        };
        let parts = partition(&ds, &spec, 6).unwrap();
        let updates = parts
            .iter()
            .enumerate()
            .map(|(i, p)| update(i, p.len()))
            .collect();
        let w = assign_weights(updates, WeightMode::BySampleCount).unwrap();
        let total: f64 = w.iter().map(|u| u.agg_weight).sum();
        assert!((total - 1.0).abs() <= 1e-12);
        for (u, p) in w.iter().zip(&parts) {
            assert_eq!(u.agg_weight, p.len() as f64 / 200.0);
        }
    }
}
