//! Server-side aggregation and norm-based weight-divergence analysis (NWDA).
//!
//! Every strategy starts from the weighted average of the client update
//! vectors, `u = Σ α_k Δw_k`, and from two norms of the round:
//!
//! * `N = ||u||`, the distance the averaged model actually moves;
//! * `E = Σ α_k ||Δw_k||`, the average distance the clients moved.
//!
//! By the triangle inequality `N <= E`, with equality only when all client
//! updates point the same way. Diverging client directions cancel in `u` and
//! leave `N << E`.
//!
//! The strategies then differ only in how `u` becomes the server step:
//!
//! | strategy  | step                                  |
//! |-----------|---------------------------------------|
//! | FedAvg    | `u`                                   |
//! | FedProx   | `u` (the proximal term lives on the clients) |
//! | NormNorm  | `β (E/N) u`                           |
//! | Momentum  | `d' = γ d + u`                        |
//! | FedNNNN   | `d' = γ d + β (E/N) u`                |
//!
//! The rescaled step has norm exactly `β E`. When `N <= ε max(1, E)` the
//! rescaling is skipped: NormNorm leaves the model where it is, and FedNNNN
//! only lets its momentum decay.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::client::ClientUpdate;
use crate::error::{Error, Result};
use crate::params::{axpy, l2_norm, weighted_sum, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    FedAvg,
    FedProx,
    #[serde(rename = "normnorm")]
    NormNorm,
    Momentum,
    #[serde(rename = "fednnnn")]
    FedNnnn,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::FedAvg,
        StrategyKind::FedProx,
        StrategyKind::NormNorm,
        StrategyKind::Momentum,
        StrategyKind::FedNnnn,
    ];

    /// Short lowercase identifier used in configs and file names.
    pub fn id(self) -> &'static str {
        match self {
            StrategyKind::FedAvg => "fedavg",
            StrategyKind::FedProx => "fedprox",
            StrategyKind::NormNorm => "normnorm",
            StrategyKind::Momentum => "momentum",
            StrategyKind::FedNnnn => "fednnnn",
        }
    }

    /// Display name as used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::FedAvg => "FedAvg",
            StrategyKind::FedProx => "FedProx",
            StrategyKind::NormNorm => "Norm-Norm",
            StrategyKind::Momentum => "Momentum",
            StrategyKind::FedNnnn => "FedNNNN",
        }
    }

    pub fn normalizes(self) -> bool {
        matches!(self, StrategyKind::NormNorm | StrategyKind::FedNnnn)
    }

    pub fn uses_momentum(self) -> bool {
        matches!(self, StrategyKind::Momentum | StrategyKind::FedNnnn)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.id() == lower)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy {s:?} (expected one of fedavg, fedprox, normnorm, momentum, fednnnn)"
                ))
            })
    }
}

/// Whether the E/N rescaling uses whole-model norms or per-layer norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormScope {
    #[default]
    Global,
    PerLayer,
}

/// What FedNNNN's momentum does in a round where the small-N guard fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuardMomentum {
    /// `d' = γ d`
    #[default]
    Decay,
    /// `d' = d`
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationStrategy {
    pub kind: StrategyKind,
    pub beta: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub scope: NormScope,
    pub guard_momentum: GuardMomentum,
}

pub const DEFAULT_EPSILON: f64 = 1e-9;

impl AggregationStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        AggregationStrategy {
            kind,
            beta: 1.0,
            gamma: 0.0,
            epsilon: DEFAULT_EPSILON,
            scope: NormScope::Global,
            guard_momentum: GuardMomentum::Decay,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.normalizes() && !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if self.kind.uses_momentum() && !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must be in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Applies this strategy to one round of updates.
    pub fn aggregate(
        &self,
        w_t: &ParamVector,
        updates: &[ClientUpdate],
        state: &MomentumState,
    ) -> Result<Aggregation> {
        let round = RoundAverage::new(w_t, updates)?;
        let mut report = round.report.clone();
        let (step, state) = match self.kind {
            StrategyKind::FedAvg | StrategyKind::FedProx => (round.average.clone(), state.clone()),
            StrategyKind::NormNorm => {
                let step = round
                    .normalized(self.beta, self.epsilon, self.scope)
                    .unwrap_or_else(|| w_t.zeros_like());
                (step, state.clone())
            }
            StrategyKind::Momentum => {
                let d = axpy(self.gamma, &state.d, &round.average)?;
                (d.clone(), MomentumState { d })
            }
            StrategyKind::FedNnnn => {
                let d = match round.normalized(self.beta, self.epsilon, self.scope) {
                    Some(step) => axpy(self.gamma, &state.d, &step)?,
                    None => match self.guard_momentum {
                        GuardMomentum::Decay => state.d.scale(self.gamma),
                        GuardMomentum::Hold => state.d.clone(),
                    },
                };
                (d.clone(), MomentumState { d })
            }
        };
        report.server_step_norm = Some(l2_norm(&step));
        let next = w_t.add(&step)?;
        if !next.is_finite() {
            return Err(Error::DegenerateData(format!(
                "{} aggregation produced non-finite weights",
                self.kind.label()
            )));
        }
        Ok(Aggregation {
            next,
            step,
            average: round.average,
            state,
            report,
        })
    }
}

/// Server momentum `d`, all zeros before the first round.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub d: ParamVector,
}

impl MomentumState {
    pub fn zeros_like(w: &ParamVector) -> Self {
        MomentumState { d: w.zeros_like() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorms {
    pub name: String,
    pub n: f64,
    pub e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NwdaReport {
    /// Norm of the weighted average update.
    pub n: f64,
    /// Weighted average of the update norms.
    pub e: f64,
    pub per_layer: Vec<LayerNorms>,
    /// `||w_{t+1} - w_t||` of the step the strategy applied.
    pub server_step_norm: Option<f64>,
}

impl NwdaReport {
    /// `N / E`, or `None` when `E = 0`.
    pub fn ratio(&self) -> Option<f64> {
        (self.e > 0.0).then(|| self.n / self.e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub next: ParamVector,
    /// `next - w_t` as computed by the strategy.
    pub step: ParamVector,
    /// Plain weighted average update `Σ α_k Δw_k`.
    pub average: ParamVector,
    pub state: MomentumState,
    pub report: NwdaReport,
}

fn check_updates(w_t: Option<&ParamVector>, updates: &[ClientUpdate]) -> Result<()> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Usage("aggregation needs at least one client update".into()))?;
    if let Some(w) = w_t {
        w.check_compatible(&first.delta)?;
    }
    for u in updates {
        first.delta.check_compatible(&u.delta)?;
        if !(u.agg_weight > 0.0 && u.agg_weight <= 1.0) {
            return Err(Error::Usage(format!(
                "client {} has aggregation weight {} outside (0, 1]",
                u.client_id, u.agg_weight
            )));
        }
    }
    Ok(())
}

/// The weighted average update of a round together with its NWDA report.
struct RoundAverage {
    average: ParamVector,
    report: NwdaReport,
}

impl RoundAverage {
    fn new(w_t: &ParamVector, updates: &[ClientUpdate]) -> Result<Self> {
        check_updates(Some(w_t), updates)?;
        Self::from_checked(updates)
    }

    fn from_checked(updates: &[ClientUpdate]) -> Result<Self> {
        let average = weighted_sum(updates.iter().map(|u| (u.agg_weight, &u.delta)))?;
        let n = l2_norm(&average);
        let e = updates
            .iter()
            .fold(0.0, |acc, u| acc + u.agg_weight * l2_norm(&u.delta));
        let segments = average.segments();
        let mut per_layer: Vec<LayerNorms> = segments
            .iter()
            .enumerate()
            .map(|(i, seg)| LayerNorms {
                name: seg.name.clone(),
                n: norm(average.segment_values(i)),
                e: 0.0,
            })
            .collect();
        for u in updates {
            for (i, layer) in per_layer.iter_mut().enumerate() {
                layer.e += u.agg_weight * norm(u.delta.segment_values(i));
            }
        }
        Ok(RoundAverage {
            average,
            report: NwdaReport {
                n,
                e,
                per_layer,
                server_step_norm: None,
            },
        })
    }

    /// `β (E/N) u`, or `None` when the guard fires. Per-layer scope rescales
    /// each segment by its own `E_l / N_l` and zeroes guarded segments.
    fn normalized(&self, beta: f64, epsilon: f64, scope: NormScope) -> Option<ParamVector> {
        let guarded = |n: f64, e: f64| n <= epsilon * e.max(1.0);
        match scope {
            NormScope::Global => {
                let (n, e) = (self.report.n, self.report.e);
                (!guarded(n, e)).then(|| self.average.scale(beta * (e / n)))
            }
            NormScope::PerLayer => {
                if guarded(self.report.n, self.report.e) {
                    return None;
                }
                let mut out = self.average.clone();
                let values = out.values_mut();
                for (seg, layer) in self.average.segments().iter().zip(&self.report.per_layer) {
                    let factor = if guarded(layer.n, layer.e) {
                        0.0
                    } else {
                        beta * (layer.e / layer.n)
                    };
                    for v in &mut values[seg.offset..seg.offset + seg.len] {
                        *v *= factor;
                    }
                }
                Some(out)
            }
        }
    }
}

fn norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v * v).sqrt()
}

/// `N`, `E` and their per-layer counterparts for one round of updates.
pub fn nwda(updates: &[ClientUpdate]) -> Result<NwdaReport> {
    check_updates(None, updates)?;
    Ok(RoundAverage::from_checked(updates)?.report)
}

/// `w_t + Σ α_k Δw_k`.
pub fn apply_fedavg(w_t: &ParamVector, updates: &[ClientUpdate]) -> Result<ParamVector> {
    let round = RoundAverage::new(w_t, updates)?;
    w_t.add(&round.average)
}

/// `w_t + β (E/N) Σ α_k Δw_k`, or `w_t` unchanged when `N <= ε max(1, E)`.
pub fn apply_norm_norm(
    w_t: &ParamVector,
    updates: &[ClientUpdate],
    beta: f64,
    epsilon: f64,
) -> Result<(ParamVector, NwdaReport)> {
    let strategy = AggregationStrategy {
        epsilon,
        ..AggregationStrategy::new(StrategyKind::NormNorm).with_beta(beta)
    };
    let out = strategy.aggregate(w_t, updates, &MomentumState::zeros_like(w_t))?;
    Ok((out.next, out.report))
}

/// `d' = γ d + Σ α_k Δw_k`, `w_{t+1} = w_t + d'`.
pub fn apply_momentum(
    w_t: &ParamVector,
    updates: &[ClientUpdate],
    state: &MomentumState,
    gamma: f64,
) -> Result<(ParamVector, MomentumState)> {
    let strategy = AggregationStrategy::new(StrategyKind::Momentum).with_gamma(gamma);
    let out = strategy.aggregate(w_t, updates, state)?;
    Ok((out.next, out.state))
}

/// `d' = γ d + β (E/N) Σ α_k Δw_k` (or `γ d` when guarded), `w_{t+1} = w_t + d'`.
pub fn apply_fednnnn(
    w_t: &ParamVector,
    updates: &[ClientUpdate],
    state: &MomentumState,
    beta: f64,
    gamma: f64,
    epsilon: f64,
) -> Result<(ParamVector, MomentumState, NwdaReport)> {
    let strategy = AggregationStrategy {
        epsilon,
        ..AggregationStrategy::new(StrategyKind::FedNnnn)
            .with_beta(beta)
            .with_gamma(gamma)
    };
    let out = strategy.aggregate(w_t, updates, state)?;
    Ok((out.next, out.state, out.report))
}

/// Running totals of the server step norms.
pub fn integrated_norm(step_norms: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = step_norms.iter().find(|v| v.is_nan() || **v < 0.0) {
        return Err(Error::Usage(format!(
            "step norms must be non-negative, got {bad}"
        )));
    }
    Ok(step_norms
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{delta, Layout};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn upd(id: usize, d: Vec<f64>, w: f64) -> ClientUpdate {
        let delta = ParamVector::from_vec(d);
        ClientUpdate {
            client_id: id,
            trained: delta.clone(),
            delta,
            sample_count: 1,
            agg_weight: w,
        }
    }

    fn updates_from(w_t: &ParamVector, deltas: &[Vec<f64>], weights: &[f64]) -> Vec<ClientUpdate> {
        deltas
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (d, &a))| {
                let delta = ParamVector::new(w_t.layout().clone(), d.clone()).unwrap();
                ClientUpdate {
                    client_id: i,
                    trained: w_t.add(&delta).unwrap(),
                    delta,
                    sample_count: 10,
                    agg_weight: a,
                }
            })
            .collect()
    }

    fn random_round(
        rng: &mut ChaCha8Rng,
        m: usize,
        dim: usize,
    ) -> (ParamVector, Vec<ClientUpdate>) {
        let layout = Layout::from_lengths([("a", dim / 2), ("b", dim - dim / 2)]);
        let w_t = ParamVector::new(
            layout,
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let deltas: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..dim).map(|_| rng.random_range(-0.1..0.1)).collect())
            .collect();
        let updates = updates_from(&w_t, &deltas, &weights);
        (w_t, updates)
    }

    #[test]
    fn nwda_examples() {
        let r = nwda(&[upd(0, vec![3.0, 4.0], 1.0)]).unwrap();
        assert_eq!((r.n, r.e), (5.0, 5.0));
        assert_eq!(r.server_step_norm, None);

        let r = nwda(&[upd(0, vec![1.0, 0.0], 0.5), upd(1, vec![-1.0, 0.0], 0.5)]).unwrap();
        assert_eq!((r.n, r.e), (0.0, 1.0));
        assert_eq!(r.ratio(), Some(0.0));

        let r = nwda(&[upd(0, vec![1.0, 0.0], 0.5), upd(1, vec![0.0, 1.0], 0.5)]).unwrap();
        assert!((r.n - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.e, 1.0);
    }

    #[test]
    fn nwda_rejects_bad_input() {
        assert!(nwda(&[]).is_err());
        assert!(matches!(
            nwda(&[upd(0, vec![1.0], 0.5), upd(1, vec![1.0, 2.0], 0.5)]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(nwda(&[upd(0, vec![1.0], 0.0)]).is_err());
    }

    #[test]
    fn per_layer_norms_reassemble_global_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, updates) = random_round(&mut rng, 7, 50);
        let r = nwda(&updates).unwrap();
        let rss = r.per_layer.iter().map(|l| l.n * l.n).sum::<f64>().sqrt();
        assert!((rss - r.n).abs() <= 1e-10 * r.n);
        assert_eq!(r.per_layer.len(), 2);
        assert!(r.per_layer.iter().all(|l| l.n <= l.e * (1.0 + 1e-12)));
    }

    #[test]
    fn fedavg_examples() {
        let w_t = ParamVector::from_vec(vec![0.5, -1.0]);
        let one = updates_from(&w_t, &[vec![0.25, 2.0]], &[1.0]);
        let next = apply_fedavg(&w_t, &one).unwrap();
        for (a, b) in next.values().iter().zip(one[0].trained.values()) {
            assert!((a - b).abs() <= 1e-15);
        }
        let opposing = updates_from(&w_t, &[vec![1.0, 0.0], vec![-1.0, 0.0]], &[0.5, 0.5]);
        assert_eq!(apply_fedavg(&w_t, &opposing).unwrap(), w_t);
    }

    #[test]
    fn fedavg_matches_direct_model_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (w_t, updates) = random_round(&mut rng, 3, 40);
        let next = apply_fedavg(&w_t, &updates).unwrap();
        for i in 0..w_t.len() {
            let direct: f64 = updates
                .iter()
                .map(|u| u.agg_weight * u.trained.values()[i])
                .sum();
            assert!((next.values()[i] - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn norm_norm_hand_computation() {
        let w_t = ParamVector::from_vec(vec![0.0, 0.0]);
        let ups = updates_from(&w_t, &[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.5, 0.5]);
        let (next, report) = apply_norm_norm(&w_t, &ups, 1.0, DEFAULT_EPSILON).unwrap();
        let h = 0.5f64.sqrt();
        assert!((next.values()[0] - h).abs() < 1e-15 && (next.values()[1] - h).abs() < 1e-15);
        assert!((report.server_step_norm.unwrap() - 1.0).abs() < 1e-15);
        assert!((l2_norm(&next) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn norm_norm_guard_returns_model_unchanged() {
        let w_t = ParamVector::from_vec(vec![0.3, 0.7]);
        let ups = updates_from(&w_t, &[vec![1.0, 0.0], vec![-1.0, 0.0]], &[0.5, 0.5]);
        let (next, report) = apply_norm_norm(&w_t, &ups, 0.9, DEFAULT_EPSILON).unwrap();
        assert_eq!(next, w_t);
        assert_eq!(report.server_step_norm, Some(0.0));
    }

    #[test]
    fn single_client_norm_norm_is_fedavg() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (w_t, mut updates) = random_round(&mut rng, 1, 30);
        updates[0].agg_weight = 1.0;
        let (nn, _) = apply_norm_norm(&w_t, &updates, 1.0, DEFAULT_EPSILON).unwrap();
        let avg = apply_fedavg(&w_t, &updates).unwrap();
        for (a, b) in nn.values().iter().zip(avg.values()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn momentum_reduces_to_fedavg_without_memory() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (w_t, updates) = random_round(&mut rng, 4, 20);
        let state = MomentumState {
            d: ParamVector::new(w_t.layout().clone(), vec![0.3; 20]).unwrap(),
        };
        let (next, new_state) = apply_momentum(&w_t, &updates, &state, 0.0).unwrap();
        assert_eq!(next, apply_fedavg(&w_t, &updates).unwrap());
        let avg = weighted_sum(updates.iter().map(|u| (u.agg_weight, &u.delta))).unwrap();
        assert_eq!(new_state.d, avg);
    }

    #[test]
    fn momentum_decays_geometrically_without_updates() {
        let layout = Layout::single("x", 2);
        let v = ParamVector::new(layout.clone(), vec![1.0, -2.0]).unwrap();
        let mut w = ParamVector::zeros(layout.clone());
        let mut state = MomentumState { d: v.clone() };
        let gamma: f64 = 0.9;
        let zero = updates_from(&w, &[vec![0.0, 0.0]], &[1.0]);
        for t in 1..=5 {
            let before = w.clone();
            (w, state) = apply_momentum(&w, &zero, &state, gamma).unwrap();
            let gained = delta(&w, &before).unwrap();
            for (g, v0) in gained.values().iter().zip(v.values()) {
                assert!((g - gamma.powi(t) * v0).abs() <= 1e-15);
            }
        }
        // total displacement is the partial geometric series
        let series: f64 = (1..=5).map(|t| gamma.powi(t)).sum();
        assert!((w.values()[0] - series).abs() <= 1e-14);
    }

    #[test]
    fn momentum_two_round_trace() {
        let w0 = ParamVector::from_vec(vec![1.0]);
        let gamma = 0.9;
        let s0 = MomentumState::zeros_like(&w0);
        let r1 = updates_from(&w0, &[vec![0.2], vec![0.4]], &[0.5, 0.5]);
        let (w1, s1) = apply_momentum(&w0, &r1, &s0, gamma).unwrap();
        // d1 = 0.3, w1 = 1.3
        assert!((s1.d.values()[0] - 0.3).abs() < 1e-15);
        assert!((w1.values()[0] - 1.3).abs() < 1e-15);
        let r2 = updates_from(&w1, &[vec![-0.1], vec![0.3]], &[0.25, 0.75]);
        let (w2, s2) = apply_momentum(&w1, &r2, &s1, gamma).unwrap();
        // d2 = 0.9*0.3 + (-0.025 + 0.225) = 0.47, w2 = 1.77
        assert!((s2.d.values()[0] - 0.47).abs() < 1e-15);
        assert!((w2.values()[0] - 1.77).abs() < 1e-15);
    }

    /// Straight-line rendition of the FedNNNN recursion on raw slices.
    fn fednnnn_oracle(
        w: &[f64],
        d: &[f64],
        deltas: &[Vec<f64>],
        alpha: &[f64],
        beta: f64,
        gamma: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let dim = w.len();
        let mut u = vec![0.0; dim];
        let mut e = 0.0;
        for (dk, a) in deltas.iter().zip(alpha) {
            for i in 0..dim {
                u[i] += a * dk[i];
            }
            e += a * dk.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let d_next: Vec<f64> = (0..dim)
            .map(|i| gamma * d[i] + beta * e / n * u[i])
            .collect();
        let w_next = (0..dim).map(|i| w[i] + d_next[i]).collect();
        (w_next, d_next)
    }

    #[test]
    fn fednnnn_matches_recursion_oracle() {
        let (beta, gamma) = (0.7, 0.8);
        let w0 = vec![0.1, -0.2, 0.3];
        let rounds = [
            vec![vec![0.5, 0.1, -0.2], vec![-0.3, 0.2, 0.1]],
            vec![vec![0.05, -0.4, 0.2], vec![0.1, 0.1, -0.1]],
            vec![vec![-0.2, 0.0, 0.3], vec![0.25, 0.1, 0.0]],
        ];
        let alpha = [0.4, 0.6];
        let mut w = ParamVector::from_vec(w0.clone());
        let mut state = MomentumState::zeros_like(&w);
        let (mut ow, mut od) = (w0, vec![0.0; 3]);
        for deltas in &rounds {
            let ups = updates_from(&w, deltas, &alpha);
            let (nw, ns, report) =
                apply_fednnnn(&w, &ups, &state, beta, gamma, DEFAULT_EPSILON).unwrap();
            (ow, od) = fednnnn_oracle(&ow, &od, deltas, &alpha, beta, gamma);
            for i in 0..3 {
                assert!((nw.values()[i] - ow[i]).abs() <= 1e-12);
                assert!((ns.d.values()[i] - od[i]).abs() <= 1e-12);
            }
            assert_eq!(report.server_step_norm, Some(l2_norm(&ns.d)));
            (w, state) = (nw, ns);
        }
    }

    #[test]
    fn fednnnn_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (w_t, updates) = random_round(&mut rng, 5, 24);
        let state = MomentumState {
            d: ParamVector::new(
                w_t.layout().clone(),
                (0..24).map(|i| i as f64 * 0.01).collect(),
            )
            .unwrap(),
        };
        let (a, _, ra) = apply_fednnnn(&w_t, &updates, &state, 0.8, 0.0, DEFAULT_EPSILON).unwrap();
        let (b, rb) = apply_norm_norm(&w_t, &updates, 0.8, DEFAULT_EPSILON).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);

        let (_, mut one) = random_round(&mut rng, 1, 24);
        one[0].agg_weight = 1.0;
        let (a, _, _) = apply_fednnnn(
            &w_t,
            &one,
            &MomentumState::zeros_like(&w_t),
            1.0,
            0.0,
            DEFAULT_EPSILON,
        )
        .unwrap();
        let b = apply_fedavg(&w_t, &one).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-15);
        }
    }

    #[test]
    fn fednnnn_guard_lets_momentum_decay() {
        let w_t = ParamVector::from_vec(vec![0.0, 0.0]);
        let ups = updates_from(&w_t, &[vec![1.0, 0.0], vec![-1.0, 0.0]], &[0.5, 0.5]);
        let state = MomentumState {
            d: ParamVector::from_vec(vec![0.5, 1.0]),
        };
        let (next, s, report) =
            apply_fednnnn(&w_t, &ups, &state, 0.7, 0.8, DEFAULT_EPSILON).unwrap();
        assert_eq!(s.d.values(), &[0.4, 0.8]);
        assert_eq!(next.values(), &[0.4, 0.8]);
        assert_eq!(report.n, 0.0);

        let hold = AggregationStrategy {
            guard_momentum: GuardMomentum::Hold,
            ..AggregationStrategy::new(StrategyKind::FedNnnn)
                .with_beta(0.7)
                .with_gamma(0.8)
        };
        let out = hold.aggregate(&w_t, &ups, &state).unwrap();
        assert_eq!(out.state.d, state.d);
    }

    #[test]
    fn per_layer_scope_gives_each_layer_beta_e_l() {
        let layout = Layout::from_lengths([("a", 2), ("b", 2)]);
        let w_t = ParamVector::zeros(layout);
        let ups = updates_from(
            &w_t,
            &[vec![1.0, 0.0, 2.0, 0.0], vec![0.0, 1.0, -2.0, 0.0]],
            &[0.5, 0.5],
        );
        let strategy = AggregationStrategy {
            scope: NormScope::PerLayer,
            ..AggregationStrategy::new(StrategyKind::NormNorm).with_beta(0.5)
        };
        let out = strategy
            .aggregate(&w_t, &ups, &MomentumState::zeros_like(&w_t))
            .unwrap();
        // layer a: E = 1, so the step norm is 0.5; layer b cancels exactly and is guarded
        let a = norm(out.step.segment_values(0));
        assert!((a - 0.5).abs() < 1e-15);
        assert!(out.step.segment_values(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nwda_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, mut updates) = random_round(&mut rng, 9, 100);
        let a = nwda(&updates).unwrap();
        updates.reverse();
        let b = nwda(&updates).unwrap();
        assert!((a.n - b.n).abs() <= 1e-12 * a.n);
        assert!((a.e - b.e).abs() <= 1e-12 * a.e);
    }

    #[test]
    fn integrated_norm_examples() {
        assert_eq!(
            integrated_norm(&[1.0, 2.0, 3.0]).unwrap(),
            vec![1.0, 3.0, 6.0]
        );
        assert!(integrated_norm(&[]).unwrap().is_empty());
        assert!(integrated_norm(&[1.0, -0.5]).is_err());
        assert!(integrated_norm(&[f64::NAN]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let steps: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..3.0)).collect();
        let got = integrated_norm(&steps).unwrap();
        let mut acc = 0.0;
        for (g, s) in got.iter().zip(&steps) {
            acc += s;
            assert_eq!(*g, acc);
        }
        assert!(got.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.id().parse::<StrategyKind>().unwrap(), k);
        }
        assert_eq!(
            "FedNNNN".parse::<StrategyKind>().unwrap(),
            StrategyKind::FedNnnn
        );
        assert_eq!(
            "norm-norm".parse::<StrategyKind>().unwrap(),
            StrategyKind::NormNorm
        );
        assert!("fedadam".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn validation_ranges() {
        assert!(AggregationStrategy::new(StrategyKind::FedNnnn)
            .with_gamma(1.2)
            .validate()
            .is_err());
        assert!(AggregationStrategy::new(StrategyKind::FedNnnn)
            .with_gamma(1.0)
            .validate()
            .is_err());
        assert!(AggregationStrategy::new(StrategyKind::NormNorm)
            .with_beta(0.0)
            .validate()
            .is_err());
        // ignored parameters are not validated
        assert!(AggregationStrategy::new(StrategyKind::FedAvg)
            .with_gamma(5.0)
            .validate()
            .is_ok());
        assert!(AggregationStrategy::new(StrategyKind::Momentum)
            .with_gamma(0.9)
            .validate()
            .is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn averaged_norm_never_exceeds_average_norm(seed in any::<u64>(), m in 1usize..20, dim in 2usize..200) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (_, updates) = random_round(&mut rng, m, dim);
                let r = nwda(&updates).unwrap();
                prop_assert!(r.n <= r.e * (1.0 + 1e-12));
            }

            #[test]
            fn normalized_step_keeps_direction_and_has_norm_beta_e(
                seed in any::<u64>(), m in 2usize..10, dim in 2usize..100, beta in 0.1f64..2.0,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (w_t, updates) = random_round(&mut rng, m, dim);
                let strategy = AggregationStrategy::new(StrategyKind::NormNorm).with_beta(beta);
                let out = strategy.aggregate(&w_t, &updates, &MomentumState::zeros_like(&w_t)).unwrap();
                let u = weighted_sum(updates.iter().map(|u| (u.agg_weight, &u.delta))).unwrap();
                let dot: f64 = out.step.values().iter().zip(u.values()).map(|(a, b)| a * b).sum();
                let cos = dot / (l2_norm(&out.step) * l2_norm(&u));
                prop_assert!((cos - 1.0).abs() <= 1e-12);
                let moved = l2_norm(&delta(&out.next, &w_t).unwrap());
                prop_assert!((moved - beta * out.report.e).abs() <= 1e-10 * beta * out.report.e);
            }
        }
    }
}
