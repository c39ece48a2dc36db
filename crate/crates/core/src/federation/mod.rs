//! Round-based synchronous federation: clients train against the current
//! global parameters, noise their deltas, submit authenticated updates; the
//! aggregator verifies, averages accepted deltas with zero-padding, applies
//! the round and accounts the privacy budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod dp;
pub mod mac;

pub use dp::{dp_noise, epsilon_of_sigma, sigma_for_budget, DpConfig, DpError};
pub use mac::{
    canonical_update_bytes, constant_time_eq, mac_tag, make_update, verify_update, KeyStore,
    MacError, MacKey, ModelUpdate, RejectReason, VerifyOutcome, KEY_LEN, TAG_LEN,
};

use crate::risk::RiskLevel;
use crate::seed::derive_seed;
use crate::similarity::SimilarityVector;
use crate::trainer::{train_from, RiskModel, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("no accepted updates to aggregate")]
    NoAcceptedUpdates,
    #[error("no eligible clients")]
    NoEligibleClients,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("update dimension {got} exceeds global dimension {global}")]
    OversizedUpdate { got: usize, global: usize },
    #[error("client {user_id}: {source}")]
    ClientTraining {
        user_id: String,
        #[source]
        source: TrainError,
    },
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Mac(#[from] MacError),
}

/// Flat parameter layout shared by the global model and all client deltas:
/// one weight row per class (feature-major), then one bias per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub classes: Vec<RiskLevel>,
    pub feature_ids: Vec<String>,
}

impl ParamLayout {
    pub fn new(classes: Vec<RiskLevel>, feature_ids: Vec<String>) -> Self {
        ParamLayout {
            classes,
            feature_ids,
        }
    }

    pub fn dimension(&self) -> usize {
        self.classes.len() * (self.feature_ids.len() + 1)
    }

    pub fn pack(&self, weights: &[Vec<f64>], bias: &[f64]) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.dimension());
        for row in weights {
            flat.extend_from_slice(row);
        }
        flat.extend_from_slice(bias);
        flat
    }

    pub fn unpack(&self, flat: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n_features = self.feature_ids.len();
        let weights = self
            .classes
            .iter()
            .enumerate()
            .map(|(c, _)| flat[c * n_features..(c + 1) * n_features].to_vec())
            .collect();
        let bias = flat[self.classes.len() * n_features..].to_vec();
        (weights, bias)
    }

    /// View the flat global parameters as a risk model.
    pub fn as_model(&self, parameters: &[f64], reg_lambda: f64) -> RiskModel {
        let (weights, bias) = self.unpack(parameters);
        RiskModel {
            classes: self.classes.clone(),
            feature_ids: self.feature_ids.clone(),
            weights,
            bias,
            reg_lambda,
            trained_on: 0,
        }
    }
}

/// One aggregation round in the budget ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub participants: usize,
    pub sigma: f64,
    pub epsilon_increment: f64,
}

/// The aggregator's model state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub parameters: Vec<f64>,
    pub round: u64,
    pub dimension: usize,
    pub history: Vec<RoundRecord>,
}

impl GlobalModel {
    pub fn new(dimension: usize) -> Self {
        GlobalModel {
            parameters: vec![0.0; dimension],
            round: 0,
            dimension,
            history: Vec::new(),
        }
    }

    /// Linear sum of per-round budget increments (conservative composition).
    pub fn cumulative_epsilon(&self) -> f64 {
        self.history.iter().map(|r| r.epsilon_increment).sum()
    }
}

/// One verification event in the audit log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub round: u64,
    pub user_id: String,
    pub accepted: bool,
    pub reason: Option<String>,
    pub sigma: f64,
    pub epsilon_cumulative: f64,
}

/// Coordinate-wise mean of accepted deltas, each zero-padded to
/// `global_dim`. Summation runs in ascending `user_id` order so results do
/// not depend on arrival order.
pub fn fed_avg(updates: &[ModelUpdate], global_dim: usize) -> Result<Vec<f64>, FederationError> {
    if updates.is_empty() {
        return Err(FederationError::NoAcceptedUpdates);
    }
    let mut ordered: Vec<&ModelUpdate> = updates.iter().collect();
    ordered.sort_by(|a, b| a.user_id.cmp(&b.user_id));

    let mut sum = vec![0.0; global_dim];
    for update in &ordered {
        if update.delta.len() > global_dim {
            return Err(FederationError::OversizedUpdate {
                got: update.delta.len(),
                global: global_dim,
            });
        }
        for (acc, v) in sum.iter_mut().zip(&update.delta) {
            *acc += v;
        }
    }
    let n = ordered.len() as f64;
    for acc in &mut sum {
        *acc /= n;
    }
    Ok(sum)
}

/// Apply an aggregated delta: `parameters += aggregated`, advance the round
/// and append the budget record. With `sigma > 0` the increment is the
/// closed-form single-release epsilon, else 0.
pub fn apply_round(
    mut global: GlobalModel,
    aggregated: &[f64],
    cfg: &DpConfig,
    participants: usize,
) -> Result<GlobalModel, FederationError> {
    if aggregated.len() != global.dimension {
        return Err(FederationError::DimensionMismatch {
            expected: global.dimension,
            got: aggregated.len(),
        });
    }
    for (p, d) in global.parameters.iter_mut().zip(aggregated) {
        *p += d;
    }
    global.round += 1;
    let epsilon_increment = if cfg.sigma > 0.0 {
        epsilon_of_sigma(cfg)?
    } else {
        0.0
    };
    global.history.push(RoundRecord {
        participants,
        sigma: cfg.sigma,
        epsilon_increment,
    });
    Ok(global)
}

/// A trained user pipeline participating in federation: its labeled train
/// split plus training hyperparameters.
#[derive(Debug, Clone)]
pub struct ClientTask {
    pub user_id: String,
    pub samples: Vec<(SimilarityVector, RiskLevel)>,
    pub train: TrainConfig,
}

/// Classes of the layout observed in this client's labels, in layout order.
fn observed_classes(layout: &ParamLayout, samples: &[(SimilarityVector, RiskLevel)]) -> Vec<usize> {
    layout
        .classes
        .iter()
        .enumerate()
        .filter(|(_, class)| samples.iter().any(|(_, l)| l == *class))
        .map(|(idx, _)| idx)
        .collect()
}

/// One client's round: warm-start local training from the current global
/// parameters, compute the delta in the global layout (zero rows for classes
/// the client never observed), noise it, and authenticate it.
pub fn client_round_update(
    client: &ClientTask,
    global: &GlobalModel,
    layout: &ParamLayout,
    round: u64,
    dp_cfg: &DpConfig,
    key: &MacKey,
) -> Result<ModelUpdate, FederationError> {
    let (global_w, global_b) = layout.unpack(&global.parameters);
    let class_rows = observed_classes(layout, &client.samples);

    let init_w: Vec<Vec<f64>> = class_rows.iter().map(|&c| global_w[c].clone()).collect();
    let init_b: Vec<f64> = class_rows.iter().map(|&c| global_b[c]).collect();

    let local = train_from(&client.samples, &client.train, Some((&init_w, &init_b))).map_err(
        |source| FederationError::ClientTraining {
            user_id: client.user_id.clone(),
            source,
        },
    )?;

    let n_features = layout.feature_ids.len();
    let mut delta = vec![0.0; layout.dimension()];
    for (local_idx, &global_idx) in class_rows.iter().enumerate() {
        for f in 0..n_features {
            delta[global_idx * n_features + f] =
                local.weights[local_idx][f] - global_w[global_idx][f];
        }
        delta[layout.classes.len() * n_features + global_idx] =
            local.bias[local_idx] - global_b[global_idx];
    }

    let noise_cfg = DpConfig {
        seed: derive_seed(
            dp_cfg.seed,
            &[b"noise", &round.to_le_bytes(), client.user_id.as_bytes()],
        ),
        ..dp_cfg.clone()
    };
    let noised = dp_noise(&delta, &noise_cfg)?;
    Ok(make_update(
        client.user_id.clone(),
        round,
        noised,
        key,
        round,
    )?)
}

/// Verify a round's updates in canonical user order, aggregate the accepted
/// ones and apply them. Returns the advanced global model and one audit
/// record per submitted update. A round with zero accepted updates still
/// advances, with unchanged parameters and no budget charge.
pub fn run_round(
    global: GlobalModel,
    updates: &[ModelUpdate],
    store: &mut KeyStore,
    dp_cfg: &DpConfig,
) -> Result<(GlobalModel, Vec<AuditRecord>), FederationError> {
    let current_round = global.round;
    let mut ordered: Vec<&ModelUpdate> = updates.iter().collect();
    ordered.sort_by(|a, b| a.user_id.cmp(&b.user_id));

    let mut accepted = Vec::new();
    let mut audit = Vec::new();
    let epsilon_so_far = global.cumulative_epsilon();
    let round_epsilon = if dp_cfg.sigma > 0.0 {
        epsilon_of_sigma(dp_cfg)?
    } else {
        0.0
    };
    for update in ordered {
        let outcome = verify_update(update, store, current_round);
        audit.push(AuditRecord {
            round: current_round,
            user_id: update.user_id.clone(),
            accepted: outcome.accepted(),
            reason: outcome.reason().map(|r| r.as_str().to_string()),
            sigma: dp_cfg.sigma,
            epsilon_cumulative: epsilon_so_far + round_epsilon,
        });
        if outcome.accepted() {
            accepted.push(update.clone());
        }
    }

    if accepted.is_empty() {
        let mut advanced = global;
        advanced.round += 1;
        advanced.history.push(RoundRecord {
            participants: 0,
            sigma: dp_cfg.sigma,
            epsilon_increment: 0.0,
        });
        return Ok((advanced, audit));
    }

    let aggregated = fed_avg(&accepted, global.dimension)?;
    let advanced = apply_round(global, &aggregated, dp_cfg, accepted.len())?;
    Ok((advanced, audit))
}

/// Outcome of a full federation run.
#[derive(Debug, Clone)]
pub struct FederationRun {
    pub global: GlobalModel,
    pub audit: Vec<AuditRecord>,
}

/// Drive `rounds` synchronous rounds over the given clients. Client deltas
/// are computed in parallel; verification and aggregation happen at the
/// single logical aggregator in canonical user order.
pub fn run_federation(
    clients: &[ClientTask],
    rounds: u64,
    dp_cfg: &DpConfig,
    store: &mut KeyStore,
    layout: &ParamLayout,
) -> Result<FederationRun, FederationError> {
    if clients.is_empty() {
        return Err(FederationError::NoEligibleClients);
    }
    let mut ordered: Vec<&ClientTask> = clients.iter().collect();
    ordered.sort_by(|a, b| a.user_id.cmp(&b.user_id));

    let mut global = GlobalModel::new(layout.dimension());
    let mut audit = Vec::new();

    for round in 0..rounds {
        let updates: Result<Vec<ModelUpdate>, FederationError> = ordered
            .par_iter()
            .map(|client| {
                let key = store
                    .key_for(&client.user_id)
                    .ok_or_else(|| MacError::MissingKey(client.user_id.clone()))?;
                client_round_update(client, &global, layout, round, dp_cfg, key)
            })
            .collect();
        let (next, mut round_audit) = run_round(global, &updates?, store, dp_cfg)?;
        global = next;
        audit.append(&mut round_audit);
    }
    Ok(FederationRun { global, audit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::train;

    fn sv(session: &str, scores: &[f64]) -> SimilarityVector {
        SimilarityVector::new(
            "u",
            session,
            (0..scores.len()).map(|i| format!("f{i}")).collect(),
            scores.to_vec(),
        )
        .unwrap()
    }

    fn separable_samples() -> Vec<(SimilarityVector, RiskLevel)> {
        let mut samples = Vec::new();
        for i in 0..8 {
            let jitter = i as f64 * 0.004;
            samples.push((sv(&format!("h{i}"), &[0.1 + jitter]), RiskLevel::High));
            samples.push((sv(&format!("l{i}"), &[0.9 - jitter]), RiskLevel::Low));
        }
        samples
    }

    fn layout_1d() -> ParamLayout {
        ParamLayout::new(
            vec![RiskLevel::High, RiskLevel::Medium, RiskLevel::Low],
            vec!["f0".into()],
        )
    }

    #[test]
    fn pack_unpack_round_trip() {
        let layout = layout_1d();
        let weights = vec![vec![1.0], vec![2.0], vec![3.0]];
        let bias = vec![4.0, 5.0, 6.0];
        let flat = layout.pack(&weights, &bias);
        assert_eq!(flat.len(), layout.dimension());
        let (w, b) = layout.unpack(&flat);
        assert_eq!(w, weights);
        assert_eq!(b, bias);
    }

    #[test]
    fn fed_avg_single_update_identity() {
        let store = KeyStore::generate(["a"], 0, 1);
        let u = make_update("a", 0, vec![2.0, 4.0], store.key_for("a").unwrap(), 0).unwrap();
        assert_eq!(fed_avg(&[u], 2).unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn fed_avg_mean_and_padding() {
        let store = KeyStore::generate(["a", "b"], 0, 1);
        let a = make_update("a", 0, vec![2.0], store.key_for("a").unwrap(), 0).unwrap();
        let b = make_update("b", 0, vec![4.0], store.key_for("b").unwrap(), 0).unwrap();
        assert_eq!(fed_avg(&[a.clone(), b], 1).unwrap(), vec![3.0]);

        // A dim-3 delta padded into global_dim 5 contributes zeros at 4-5.
        let c = make_update("a", 0, vec![1.0, 2.0, 3.0], store.key_for("a").unwrap(), 0).unwrap();
        assert_eq!(fed_avg(&[c], 5).unwrap(), vec![1.0, 2.0, 3.0, 0.0, 0.0]);
        assert!(matches!(fed_avg(&[a], 0), Err(FederationError::OversizedUpdate { .. })));
    }

    #[test]
    fn fed_avg_empty_rejected() {
        assert!(matches!(
            fed_avg(&[], 3),
            Err(FederationError::NoAcceptedUpdates)
        ));
    }

    #[test]
    fn apply_round_advances_and_accounts() {
        let global = GlobalModel::new(2);
        let cfg = DpConfig {
            sigma: 1.0,
            ..DpConfig::default()
        };
        let g1 = apply_round(global, &[0.0, 0.0], &cfg, 3).unwrap();
        assert_eq!(g1.parameters, vec![0.0, 0.0]);
        assert_eq!(g1.round, 1);
        let g2 = apply_round(g1, &[1.0, -1.0], &cfg, 2).unwrap();
        assert_eq!(g2.round, 2);
        assert_eq!(g2.history.len(), 2);
        assert!(g2.cumulative_epsilon() > 0.0);
        assert_eq!(g2.parameters, vec![1.0, -1.0]);
    }

    #[test]
    fn zero_sigma_round_charges_nothing() {
        let g = apply_round(GlobalModel::new(1), &[0.5], &DpConfig::default(), 1).unwrap();
        assert_eq!(g.history[0].epsilon_increment, 0.0);
    }

    #[test]
    fn degenerate_single_client_federation() {
        // 1 client, 1 round, sigma = 0: the global parameters equal the
        // client's local optimum delta applied to the zero init.
        let samples = separable_samples();
        let layout = ParamLayout::new(
            vec![RiskLevel::High, RiskLevel::Low],
            vec!["f0".into()],
        );
        let train_cfg = TrainConfig {
            reg_lambda: 0.1,
            ..TrainConfig::default()
        };
        let client = ClientTask {
            user_id: "solo".into(),
            samples: samples.clone(),
            train: train_cfg.clone(),
        };
        let mut store = KeyStore::generate(["solo"], 9, 1);
        let run = run_federation(&[client], 1, &DpConfig::default(), &mut store, &layout).unwrap();

        let local = train(&samples, &train_cfg).unwrap();
        let expect = layout.pack(&local.weights, &local.bias);
        for (got, want) in run.global.parameters.iter().zip(&expect) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        assert_eq!(run.global.round, 1);
        assert!(run.audit.iter().all(|r| r.accepted));
    }

    #[test]
    fn tampered_client_excluded_from_aggregate() {
        let layout = layout_1d();
        let mk_client = |name: &str, offset: f64| ClientTask {
            user_id: name.into(),
            samples: separable_samples()
                .into_iter()
                .map(|(mut v, l)| {
                    v.scores[0] = (v.scores[0] + offset).clamp(0.0, 1.0);
                    (v, l)
                })
                .collect(),
            train: TrainConfig::default(),
        };
        let honest = [mk_client("a", 0.0), mk_client("b", 0.05)];
        let all = [mk_client("a", 0.0), mk_client("b", 0.05), mk_client("mallory", 0.1)];
        let dp_cfg = DpConfig::default();

        // Clean run over the two honest clients only.
        let mut store_clean = KeyStore::generate(["a", "b"], 4, 1);
        let clean = run_federation(&honest, 2, &dp_cfg, &mut store_clean, &layout).unwrap();

        // Full run where mallory's update is tampered after tagging.
        let mut store = KeyStore::generate(["a", "b", "mallory"], 4, 1);
        let mut global = GlobalModel::new(layout.dimension());
        let mut rejected = 0;
        for round in 0..2 {
            let mut updates = Vec::new();
            for client in &all {
                let key = store.key_for(&client.user_id).unwrap();
                let mut update =
                    client_round_update(client, &global, &layout, round, &dp_cfg, key).unwrap();
                if client.user_id == "mallory" {
                    update.delta[0] += 1000.0;
                }
                updates.push(update);
            }
            let (next, audit) = run_round(global, &updates, &mut store, &dp_cfg).unwrap();
            global = next;
            rejected += audit.iter().filter(|r| !r.accepted).count();
        }
        assert_eq!(rejected, 2);
        assert_eq!(global.parameters, clean.global.parameters);
    }

    #[test]
    fn replayed_update_changes_nothing() {
        let layout = layout_1d();
        let client = ClientTask {
            user_id: "a".into(),
            samples: separable_samples(),
            train: TrainConfig::default(),
        };
        let dp_cfg = DpConfig::default();
        let mut store = KeyStore::generate(["a"], 2, 1);
        let global = GlobalModel::new(layout.dimension());
        let key = *store.key_for("a").unwrap();
        let update = client_round_update(&client, &global, &layout, 0, &dp_cfg, &key).unwrap();

        let (after_one, _) =
            run_round(global.clone(), &[update.clone()], &mut store, &dp_cfg).unwrap();
        // Same payload again within the same logical round is a replay.
        let outcome = verify_update(&update, &mut store, 0);
        assert_eq!(outcome, VerifyOutcome::Rejected(RejectReason::Replay));
        let (after_replay, audit) = run_round(
            GlobalModel {
                round: 0,
                ..after_one.clone()
            },
            &[update],
            &mut store,
            &dp_cfg,
        )
        .unwrap();
        assert_eq!(after_replay.parameters, after_one.parameters);
        assert!(audit.iter().all(|r| !r.accepted));
    }

    #[test]
    fn aggregate_noise_variance_scales_inversely_with_n() {
        // Mean of n noised zero vectors has std sigma / sqrt(n).
        let dims = 4;
        let trials = 2000;
        for n in [2usize, 5] {
            let mut samples = Vec::with_capacity(trials * dims);
            for trial in 0..trials {
                let mut acc = vec![0.0; dims];
                for client in 0..n {
                    let cfg = DpConfig {
                        sigma: 1.0,
                        seed: derive_seed(99, &[&(trial as u64).to_le_bytes(), &(client as u64).to_le_bytes()]),
                        ..DpConfig::default()
                    };
                    let noised = dp_noise(&vec![0.0; dims], &cfg).unwrap();
                    for (a, v) in acc.iter_mut().zip(noised) {
                        *a += v;
                    }
                }
                for a in acc {
                    samples.push(a / n as f64);
                }
            }
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            let std = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / samples.len() as f64)
                .sqrt();
            let expect = 1.0 / (n as f64).sqrt();
            assert!(
                (std - expect).abs() / expect < 0.05,
                "n={n}: std {std} vs {expect}"
            );
        }
    }

    #[test]
    fn budget_monotone_in_rounds_and_sigma() {
        let layout = layout_1d();
        let client = ClientTask {
            user_id: "a".into(),
            samples: separable_samples(),
            train: TrainConfig {
                max_iter: 5,
                ..TrainConfig::default()
            },
        };
        let mut eps_by_sigma = Vec::new();
        for sigma in [0.5, 1.0, 2.0] {
            let dp_cfg = DpConfig {
                sigma,
                ..DpConfig::default()
            };
            let mut store = KeyStore::generate(["a"], 0, 1);
            let run = run_federation(&[client.clone()], 3, &dp_cfg, &mut store, &layout).unwrap();
            let mut cumulative = 0.0;
            for record in &run.global.history {
                assert!(record.epsilon_increment >= 0.0);
                cumulative += record.epsilon_increment;
            }
            assert_eq!(run.global.history.len(), 3);
            eps_by_sigma.push(cumulative);
        }
        assert!(eps_by_sigma[0] > eps_by_sigma[1] && eps_by_sigma[1] > eps_by_sigma[2]);
    }

    #[test]
    fn no_clients_rejected() {
        let layout = layout_1d();
        let mut store = KeyStore::generate(Vec::<String>::new(), 0, 1);
        assert!(matches!(
            run_federation(&[], 1, &DpConfig::default(), &mut store, &layout),
            Err(FederationError::NoEligibleClients)
        ));
    }
}
