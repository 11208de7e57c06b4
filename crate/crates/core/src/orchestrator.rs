//! The federated round loop.
//!
//! Each round samples `m = max(floor(C * K), 1)` clients, trains them from the
//! current distributed model, aggregates their updates with the configured
//! strategy and evaluates on the held-out test set. For the normalizing
//! strategies the plain weighted average of the same updates can be evaluated
//! alongside the distributed model (`eval_dual`); the averaged model is only
//! observed, it is never sent to clients.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregationStrategy, MomentumState, NwdaReport, StrategyKind};
use crate::client::{assign_weights, local_train, ClientConfig, ClientUpdate, WeightMode};
use crate::data::{partition, Dataset, PartitionSpec};
use crate::error::{Error, Result};
use crate::nn::{init_params, loss_and_accuracy, NetworkSpec};
use crate::params::ParamVector;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub rounds: usize,
    /// Fraction of clients sampled per round (`C`).
    pub fraction: f64,
    /// Total number of clients (`K`).
    pub clients: usize,
    pub client: ClientConfig,
    pub strategy: AggregationStrategy,
    pub partition: PartitionSpec,
    pub network: NetworkSpec,
    pub seed: u64,
    pub weight_mode: WeightMode,
    pub eval_dual: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "client fraction C must be in (0, 1], got {}",
                self.fraction
            )));
        }
        if self.clients == 0 {
            return Err(Error::Config("client count K must be at least 1".into()));
        }
        self.client.validate()?;
        self.strategy.validate()?;
        self.network.validate()?;
        self.partition.validate(self.network.class_count())?;
        if self.client.mu > 0.0 && self.strategy.kind != StrategyKind::FedProx {
            return Err(Error::Config(format!(
                "mu = {} only applies to fedprox, strategy is {}",
                self.client.mu, self.strategy.kind
            )));
        }
        Ok(())
    }

    pub fn clients_per_round(&self) -> usize {
        clients_per_round(self.clients, self.fraction)
    }

    /// Whether a separate averaged model is evaluated each round.
    pub fn evaluates_average(&self) -> bool {
        self.eval_dual && self.strategy.kind.normalizes()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub nwda: NwdaReport,
    /// Sum of server step norms up to and including this round.
    pub integrated_norm: f64,
    /// Test accuracy of the model distributed to clients next round.
    pub eval_acc_distributed: f64,
    /// Test accuracy of the plain average of this round's updates.
    pub eval_acc_averaged: Option<f64>,
    pub participants: Vec<usize>,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Receives each round's metrics as soon as the round completes.
pub trait MetricsSink {
    fn record(&mut self, metrics: &RoundMetrics) -> Result<()>;
}

impl MetricsSink for Vec<RoundMetrics> {
    fn record(&mut self, metrics: &RoundMetrics) -> Result<()> {
        self.push(metrics.clone());
        Ok(())
    }
}

/// `max(floor(C * K), 1)`. A tolerance of 1e-9 absorbs products such as
/// `0.29 * 100 = 28.999999999999996`.
pub fn clients_per_round(k: usize, c: f64) -> usize {
    ((c * k as f64 + 1e-9).floor() as usize).clamp(1, k.max(1))
}

/// Ascending indices of the clients participating in a round.
pub fn sample_clients(k: usize, c: f64, round_seed: u64) -> Vec<usize> {
    let m = clients_per_round(k, c);
    if m >= k {
        return (0..k).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(round_seed, &[seed::SAMPLE]));
    let mut chosen = rand::seq::index::sample(&mut rng, k, m).into_vec();
    chosen.sort_unstable();
    chosen
}

pub fn round_seed(experiment_seed: u64, round: usize) -> u64 {
    seed::derive(experiment_seed, &[round as u64])
}

/// Test accuracy of `w`.
pub fn evaluate(w: &ParamVector, spec: &NetworkSpec, test: &Dataset) -> Result<f64> {
    Ok(loss_and_accuracy(spec, w, &test.inputs, &test.labels)?.1)
}

/// Server-side state carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub w: ParamVector,
    pub momentum: MomentumState,
    pub integrated_norm: f64,
}

pub struct Simulation<'a> {
    cfg: &'a ExperimentConfig,
    clients: Vec<Dataset>,
    test: &'a Dataset,
    state: ServerState,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Simulation<'a> {
    /// Validates the configuration, partitions `train` and initializes `w_0`, `d_0 = 0`.
    pub fn new(cfg: &'a ExperimentConfig, train: &Dataset, test: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        for (what, ds) in [("training", train), ("test", test)] {
            if ds.feature_dim() != cfg.network.input_size() {
                return Err(Error::Config(format!(
                    "{what} data has {} features but the network input is {}",
                    ds.feature_dim(),
                    cfg.network.input_size()
                )));
            }
            if ds.class_count > cfg.network.class_count() {
                return Err(Error::Config(format!(
                    "{what} data has {} classes but the network outputs {}",
                    ds.class_count,
                    cfg.network.class_count()
                )));
            }
        }
        if test.is_empty() {
            return Err(Error::Config("test set is empty".into()));
        }
        let clients = partition(train, &cfg.partition, cfg.clients)?;
        let w = init_params(&cfg.network, seed::derive(cfg.seed, &[seed::INIT]));
        Ok(Simulation {
            cfg,
            clients,
            test,
            state: ServerState {
                momentum: MomentumState::zeros_like(&w),
                w,
                integrated_norm: 0.0,
            },
            pool: None,
        })
    }

    /// Trains clients on `workers` threads. Results do not depend on the count.
    pub fn with_workers(mut self, workers: usize) -> Result<Self> {
        self.pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(self)
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn client_data(&self) -> &[Dataset] {
        &self.clients
    }

    /// Local training of the sampled clients, in ascending client order.
    pub fn train_clients(&self, round: usize) -> Result<Vec<ClientUpdate>> {
        let rs = round_seed(self.cfg.seed, round);
        let chosen = sample_clients(self.cfg.clients, self.cfg.fraction, rs);
        let w = &self.state.w;
        let train = |&k: &usize| {
            local_train(
                w,
                &self.cfg.network,
                &self.clients[k],
                &self.cfg.client,
                rs,
                k,
            )
        };
        let updates: Result<Vec<ClientUpdate>> = match &self.pool {
            Some(pool) => pool.install(|| chosen.par_iter().map(train).collect()),
            None => chosen.iter().map(train).collect(),
        };
        assign_weights(updates?, self.cfg.weight_mode)
    }

    pub fn run_round(&mut self, round: usize) -> Result<RoundMetrics> {
        self.step(round).map_err(|e| e.in_round(round))
    }

    fn step(&mut self, round: usize) -> Result<RoundMetrics> {
        let started = Instant::now();
        let updates = self.train_clients(round)?;
        let participants = updates.iter().map(|u| u.client_id).collect();
        let out = self
            .cfg
            .strategy
            .aggregate(&self.state.w, &updates, &self.state.momentum)?;

        let eval_acc_averaged = if self.cfg.evaluates_average() {
            let averaged = self.state.w.add(&out.average)?;
            Some(evaluate(&averaged, &self.cfg.network, self.test)?)
        } else {
            None
        };
        let eval_acc_distributed = evaluate(&out.next, &self.cfg.network, self.test)?;

        let step_norm = out.report.server_step_norm.unwrap_or(0.0);
        self.state.integrated_norm += step_norm;
        self.state.w = out.next;
        self.state.momentum = out.state;

        Ok(RoundMetrics {
            round,
            nwda: out.report,
            integrated_norm: self.state.integrated_norm,
            eval_acc_distributed,
            eval_acc_averaged,
            participants,
            wall_time: started.elapsed(),
        })
    }
}

/// Runs every round, handing each round's metrics to `sink` as it completes.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    workers: usize,
    sink: &mut dyn MetricsSink,
) -> Result<ServerState> {
    let mut sim = Simulation::new(cfg, train, test)?.with_workers(workers)?;
    for t in 0..cfg.rounds {
        let m = sim.run_round(t)?;
        sink.record(&m)?;
    }
    Ok(sim.state)
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<RoundMetrics>> {
    let mut out = Vec::with_capacity(cfg.rounds);
    run_experiment_with(cfg, train, test, 1, &mut out)?;
    Ok(out)
}
