//! Deterministic federated-learning simulation with pluggable server
//! aggregation (FedAvg, FedProx, norm-normalized, momentum, FedNNNN) and
//! per-round norm-based weight-divergence analysis.

pub mod aggregate;
pub mod client;
pub mod data;
pub mod error;
pub mod matrix;
pub mod nn;
pub mod orchestrator;
pub mod params;
pub mod seed;

pub use aggregate::{AggregationStrategy, MomentumState, NwdaReport, StrategyKind};
pub use client::{ClientConfig, ClientUpdate, WeightMode};
pub use data::{Dataset, PartitionSpec};
pub use error::{Error, IdxError, Result};
pub use nn::NetworkSpec;
pub use orchestrator::{ExperimentConfig, RoundMetrics};
pub use params::ParamVector;
