//! End-to-end orchestration: group sessions per user, partition into
//! reference and test splits, build references, compute and scale similarity
//! vectors, pseudo-label by clustering, train eligible users locally, run
//! the federation rounds, and evaluate the resulting global model on the
//! held-out split.
//!
//! Every randomized stage derives its seed from the run seed, so a config
//! fully determines all outputs.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{compute_metrics, EvalError, MetricsReport};
use crate::federation::{
    run_federation, AuditRecord, ClientTask, DpConfig, FederationError, GlobalModel, KeyStore,
    ParamLayout,
};
use crate::ingest::{
    apply_exclusions, build_contextual_reference, fit_scaling, group_by_user, ContextualRefConfig,
    ExclusionReport, ExclusionThresholds, GroundTruth, IngestError, KeystrokeLayout, Modality,
    SessionRecord,
};
use crate::ingest::apply_scaling;
use crate::risk::{kmeans, rank_risk, risk_ladder, ClusterModel, RiskError, RiskLevel};
use crate::seed::derive_seed;
use crate::similarity::{
    assemble_similarity_vector, dtw::dba_centroid, dtw::dtw_exact, dtw::dtw_fast, sim_sequence,
    sim_topk, FeaturePayload, Sequence, SimilarityConfig, SimilarityError, SimilarityVector,
};
use crate::trainer::{argmax_risk, split, predict_proba_scores, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("similarity stage, user {user_id}: {source}")]
    Similarity {
        user_id: String,
        #[source]
        source: SimilarityError,
    },
    #[error("labeling stage, user {user_id}: {source}")]
    Labeling {
        user_id: String,
        #[source]
        source: RiskError,
    },
    #[error("split stage, user {user_id}: {source}")]
    Split {
        user_id: String,
        #[source]
        source: TrainError,
    },
    #[error("ingest stage: {0}")]
    Ingest(#[from] IngestError),
    #[error("federation stage: {0}")]
    Federation(#[from] FederationError),
    #[error("evaluation stage: {0}")]
    Eval(#[from] EvalError),
    #[error("no users left after exclusions")]
    NoUsableUsers,
    #[error("user {user_id} produced a feature layout inconsistent with the modality's")]
    InconsistentFeatures { user_id: String },
    #[error("no test sessions available for evaluation")]
    NoTestSessions,
}

/// Similarity-stage knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityParams {
    pub dtw_radius: usize,
    /// Reference matches per mouse session.
    pub top_k: usize,
    pub dba_iterations: usize,
    /// Element value of the constant fallback sequence used to derive
    /// max-DTW when a user has a single reference session.
    pub fallback_scale: f64,
    pub keystroke_layout: KeystrokeLayout,
    pub contextual: ContextualRefConfig,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        SimilarityParams {
            dtw_radius: 10,
            top_k: 5,
            dba_iterations: 10,
            fallback_scale: 0.0,
            keystroke_layout: KeystrokeLayout::SingleSequence,
            contextual: ContextualRefConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusteringParams {
    /// 2 or 3.
    pub k: usize,
    /// Cluster all users' vectors together instead of per user.
    pub global: bool,
}

impl Default for ClusteringParams {
    fn default() -> Self {
        ClusteringParams { k: 3, global: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FederationParams {
    pub rounds: u64,
    pub dp: DpConfig,
    pub freshness_window: u64,
    /// Labeled train sessions a user needs before participating.
    pub min_sessions: usize,
}

impl Default for FederationParams {
    fn default() -> Self {
        FederationParams {
            rounds: 3,
            dp: DpConfig::default(),
            freshness_window: 1,
            min_sessions: 6,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub modality: Modality,
    pub seed: u64,
    pub similarity: SimilarityParams,
    pub clustering: ClusteringParams,
    pub training: TrainConfig,
    pub federation: FederationParams,
    pub exclusions: ExclusionThresholds,
    /// Worker threads for per-user stages; 0 uses the default pool.
    pub workers: usize,
}

impl PipelineConfig {
    pub fn new(modality: Modality, seed: u64) -> Self {
        PipelineConfig {
            modality,
            seed,
            similarity: SimilarityParams::default(),
            clustering: ClusteringParams::default(),
            training: TrainConfig::default(),
            federation: FederationParams::default(),
            exclusions: ExclusionThresholds::default(),
            workers: 0,
        }
    }
}

/// Parsed dataset plus optional withheld ground truth (synthetic runs).
#[derive(Debug, Clone)]
pub struct IngestedDataset {
    pub records: Vec<SessionRecord>,
    pub truth: Option<GroundTruth>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserSummary {
    pub user_id: String,
    pub sessions: usize,
    pub train_sessions: usize,
    pub test_sessions: usize,
    pub labeled: bool,
    pub eligible: bool,
}

/// One held-out session's classification under the final global model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub user_id: String,
    pub session_id: String,
    pub predicted: String,
    /// Ground-truth (synthetic) or pseudo-label class.
    pub reference: String,
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub global: GlobalModel,
    pub layout: ParamLayout,
    pub audit: Vec<AuditRecord>,
    pub metrics: MetricsReport,
    pub exclusions: ExclusionReport,
    pub users: Vec<UserSummary>,
    pub predictions: Vec<PredictionRecord>,
}

/// One user's computed vectors, pre-labeling.
struct UserVectors {
    user_id: String,
    train: Vec<SimilarityVector>,
    test: Vec<SimilarityVector>,
}

fn session_sequences(record: &SessionRecord) -> Vec<(String, &Sequence)> {
    record
        .observations
        .iter()
        .filter_map(|obs| match &obs.payload {
            FeaturePayload::Sequence(seq) => Some((obs.feature_id.clone(), seq)),
            _ => None,
        })
        .collect()
}

fn constant_like(seq: &Sequence, value: f64) -> Sequence {
    seq.iter().map(|elem| vec![value; elem.len()]).collect()
}

/// Per-user max observed DTW distance among reference sequences; with a
/// single reference, the distance to a constant fallback sequence.
fn max_dtw_of(
    refs: &[Sequence],
    radius: usize,
    exact: bool,
    fallback_scale: f64,
) -> Result<f64, SimilarityError> {
    let mut max = 0.0f64;
    if refs.len() == 1 {
        let fallback = constant_like(&refs[0], fallback_scale);
        max = dtw_exact(&refs[0], &fallback)?;
    } else {
        for i in 0..refs.len() {
            for j in (i + 1)..refs.len() {
                let d = if exact {
                    dtw_exact(&refs[i], &refs[j])?
                } else {
                    dtw_fast(&refs[i], &refs[j], radius)?
                };
                max = max.max(d);
            }
        }
    }
    if max <= 0.0 {
        max = 1.0;
    }
    Ok(max)
}

/// Keystroke vectors: one coordinate per sequence feature, the normalized
/// FastDTW similarity to that feature's barycenter.
fn keystroke_vectors(
    user_id: &str,
    train: &[SessionRecord],
    test: &[SessionRecord],
    params: &SimilarityParams,
) -> Result<UserVectors, SimilarityError> {
    let feature_ids: Vec<String> = session_sequences(&train[0])
        .into_iter()
        .map(|(id, _)| id)
        .collect();

    let mut centroids: BTreeMap<String, (Sequence, f64)> = BTreeMap::new();
    for feature in &feature_ids {
        let refs: Vec<Sequence> = train
            .iter()
            .flat_map(|r| {
                session_sequences(r)
                    .into_iter()
                    .filter(|(id, _)| id == feature)
                    .map(|(_, seq)| seq.clone())
            })
            .collect();
        let centroid = dba_centroid(&refs, params.dba_iterations)?;
        let max_dtw = max_dtw_of(&refs, params.dtw_radius, true, params.fallback_scale)?;
        centroids.insert(feature.clone(), (centroid, max_dtw));
    }

    let score_session = |record: &SessionRecord| -> Result<SimilarityVector, SimilarityError> {
        let present: BTreeMap<String, &Sequence> =
            session_sequences(record).into_iter().collect();
        let mut scores = Vec::with_capacity(feature_ids.len());
        for feature in &feature_ids {
            let (centroid, max_dtw) = &centroids[feature];
            let score = match present.get(feature) {
                Some(seq) => sim_sequence(seq, centroid, *max_dtw, params.dtw_radius)?,
                None => 0.0,
            };
            scores.push(score);
        }
        SimilarityVector::new(user_id, record.session_id.clone(), feature_ids.clone(), scores)
    };

    Ok(UserVectors {
        user_id: user_id.to_string(),
        train: train.iter().map(score_session).collect::<Result<_, _>>()?,
        test: test.iter().map(score_session).collect::<Result<_, _>>()?,
    })
}

/// Mouse vectors: the top-k normalized FastDTW matches of each session
/// against the user's reference trajectories. Reference sessions are scored
/// leave-one-out so a session never matches itself at distance zero.
fn mouse_vectors(
    user_id: &str,
    train: &[SessionRecord],
    test: &[SessionRecord],
    params: &SimilarityParams,
) -> Result<UserVectors, SimilarityError> {
    let refs: Vec<Sequence> = train
        .iter()
        .flat_map(|r| session_sequences(r).into_iter().map(|(_, seq)| seq.clone()))
        .collect();
    let max_dtw = max_dtw_of(&refs, params.dtw_radius, false, params.fallback_scale)?;
    let feature_ids: Vec<String> = (1..=params.top_k)
        .map(|i| format!("top{i}_match"))
        .collect();

    let score = |record: &SessionRecord, exclude: Option<usize>| {
        let seqs = session_sequences(record);
        let scores = match seqs.first() {
            Some((_, seq)) => match exclude {
                Some(skip) if refs.len() > 1 => {
                    let loo: Vec<Sequence> = refs
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != skip)
                        .map(|(_, s)| s.clone())
                        .collect();
                    sim_topk(seq, &loo, params.top_k, max_dtw, params.dtw_radius)?
                }
                _ => sim_topk(seq, &refs, params.top_k, max_dtw, params.dtw_radius)?,
            },
            None => vec![0.0; params.top_k],
        };
        SimilarityVector::new(user_id, record.session_id.clone(), feature_ids.clone(), scores)
    };

    Ok(UserVectors {
        user_id: user_id.to_string(),
        train: train
            .iter()
            .enumerate()
            .map(|(i, r)| score(r, Some(i)))
            .collect::<Result<_, _>>()?,
        test: test.iter().map(|r| score(r, None)).collect::<Result<_, _>>()?,
    })
}

fn contextual_vectors(
    user_id: &str,
    train: &[SessionRecord],
    test: &[SessionRecord],
    params: &SimilarityParams,
) -> Result<UserVectors, SimilarityError> {
    let reference = build_contextual_reference(user_id, train, &params.contextual)?;
    let sim_cfg = SimilarityConfig {
        dtw_radius: params.dtw_radius,
        ..SimilarityConfig::default()
    };
    let score = |record: &SessionRecord| {
        assemble_similarity_vector(&record.observations, &reference, &sim_cfg, &record.session_id)
    };
    Ok(UserVectors {
        user_id: user_id.to_string(),
        train: train.iter().map(score).collect::<Result<_, _>>()?,
        test: test.iter().map(score).collect::<Result<_, _>>()?,
    })
}

fn with_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        job()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("worker pool")
            .install(job)
    }
}

/// Run the full pipeline over an ingested dataset.
pub fn run_pipeline(
    data: &IngestedDataset,
    cfg: &PipelineConfig,
) -> Result<PipelineOutcome, PipelineError> {
    let grouped = group_by_user(&data.records);

    // Record-level exclusion rules first; the variance rule needs vectors.
    let (retained, mut exclusion_report) =
        apply_exclusions(&grouped, None, &cfg.exclusions);
    if retained.is_empty() {
        return Err(PipelineError::NoUsableUsers);
    }

    // Per-user: split, references, similarity vectors, scaling.
    let users: Vec<(&String, &Vec<SessionRecord>)> = retained.iter().collect();
    let per_user: Vec<Result<UserVectors, PipelineError>> = with_pool(cfg.workers, || {
        users
            .par_iter()
            .map(|(user_id, sessions)| {
                let split_seed = derive_seed(cfg.seed, &[b"split", user_id.as_bytes()]);
                let (train, test) = if sessions.len() < 2 {
                    ((*sessions).clone(), Vec::new())
                } else {
                    split(sessions, cfg.training.split_ratio, split_seed).map_err(|source| {
                        PipelineError::Split {
                            user_id: (*user_id).clone(),
                            source,
                        }
                    })?
                };
                let mut vectors = match cfg.modality {
                    Modality::Keystroke => {
                        keystroke_vectors(user_id, &train, &test, &cfg.similarity)
                    }
                    Modality::Mouse => mouse_vectors(user_id, &train, &test, &cfg.similarity),
                    Modality::Contextual => {
                        contextual_vectors(user_id, &train, &test, &cfg.similarity)
                    }
                }
                .map_err(|source| PipelineError::Similarity {
                    user_id: (*user_id).clone(),
                    source,
                })?;
                Ok(vectors)
            })
            .collect()
    });

    let mut computed: BTreeMap<String, UserVectors> = BTreeMap::new();
    for result in per_user {
        let vectors = result?;
        computed.insert(vectors.user_id.clone(), vectors);
    }

    // Min-max scaling, fitted on train vectors only. Contextual vectors use
    // one population-wide scaler so coordinates that are constant for a
    // single user (their registered device, their one UA string) keep their
    // population-level signal. Behavioral vectors are rescaled per user:
    // their coordinates only mean anything relative to the user's own DTW
    // spread.
    match cfg.modality {
        Modality::Contextual => {
            let pooled_train: Vec<SimilarityVector> = computed
                .values()
                .flat_map(|v| v.train.iter().cloned())
                .collect();
            if !pooled_train.is_empty() {
                let scaling = fit_scaling(&pooled_train)?;
                for vectors in computed.values_mut() {
                    vectors.train = apply_scaling(&vectors.train, &scaling)?;
                    vectors.test = apply_scaling(&vectors.test, &scaling)?;
                }
            }
        }
        Modality::Keystroke | Modality::Mouse => {
            for vectors in computed.values_mut() {
                if vectors.train.is_empty() {
                    continue;
                }
                let scaling = fit_scaling(&vectors.train)?;
                vectors.train = apply_scaling(&vectors.train, &scaling)?;
                vectors.test = apply_scaling(&vectors.test, &scaling)?;
            }
        }
    }

    // Variance-rule exclusions now that vectors exist.
    let all_vectors: BTreeMap<String, Vec<SimilarityVector>> = computed
        .iter()
        .map(|(user, v)| {
            let mut list = v.train.clone();
            list.extend(v.test.iter().cloned());
            (user.clone(), list)
        })
        .collect();
    let (final_retained, variance_report) =
        apply_exclusions(&retained, Some(&all_vectors), &cfg.exclusions);
    for excluded in variance_report.excluded {
        if !exclusion_report
            .excluded
            .iter()
            .any(|e| e.user_id == excluded.user_id)
        {
            exclusion_report.excluded.push(excluded);
        }
    }
    exclusion_report.retained = final_retained.keys().cloned().collect();
    computed.retain(|user, _| final_retained.contains_key(user));
    if computed.is_empty() {
        return Err(PipelineError::NoUsableUsers);
    }

    // Shared feature layout across users of this modality.
    let feature_ids = computed
        .values()
        .next()
        .and_then(|v| v.train.first().or(v.test.first()))
        .map(|v| v.feature_ids.clone())
        .ok_or(PipelineError::NoUsableUsers)?;
    for (user, vectors) in &computed {
        let ok = vectors
            .train
            .iter()
            .chain(&vectors.test)
            .all(|v| v.feature_ids == feature_ids);
        if !ok {
            return Err(PipelineError::InconsistentFeatures {
                user_id: user.clone(),
            });
        }
    }

    // Pseudo-labels via clustering, per user or global.
    let k = cfg.clustering.k;
    let mut cluster_models: BTreeMap<String, ClusterModel> = BTreeMap::new();
    if cfg.clustering.global {
        let pooled: Vec<SimilarityVector> = computed
            .values()
            .flat_map(|v| v.train.iter().cloned())
            .collect();
        let model = rank_risk(
            kmeans(
                &pooled,
                k,
                derive_seed(cfg.seed, &[b"cluster-global"]),
                100,
            )
            .map_err(|source| PipelineError::Labeling {
                user_id: "<global>".to_string(),
                source,
            })?,
        )
        .map_err(|source| PipelineError::Labeling {
            user_id: "<global>".to_string(),
            source,
        })?;
        for user in computed.keys() {
            cluster_models.insert(user.clone(), model.clone());
        }
    } else {
        for (user, vectors) in &computed {
            if vectors.train.len() < k {
                continue;
            }
            let seed = derive_seed(cfg.seed, &[b"cluster", user.as_bytes()]);
            match kmeans(&vectors.train, k, seed, 100).and_then(rank_risk) {
                Ok(model) => {
                    cluster_models.insert(user.clone(), model);
                }
                // Users whose vectors collapse to identical points cannot be
                // pseudo-labeled; they sit out training (cold start).
                Err(RiskError::DegenerateClustering)
                | Err(RiskError::EmptyClusterUnrecoverable(_))
                | Err(RiskError::TooFewSamples { .. }) => continue,
                Err(source) => {
                    return Err(PipelineError::Labeling {
                        user_id: user.clone(),
                        source,
                    })
                }
            }
        }
    }

    // Eligibility and client tasks.
    let ladder = risk_ladder(k).to_vec();
    let mut clients = Vec::new();
    let mut summaries = Vec::new();
    for (user, vectors) in &computed {
        let labeled = cluster_models.contains_key(user);
        let mut eligible = false;
        if let Some(model) = cluster_models.get(user) {
            let ranking = model.risk_of_cluster.as_ref().expect("ranked");
            let samples: Vec<(SimilarityVector, RiskLevel)> = vectors
                .train
                .iter()
                .map(|v| {
                    let cluster = model
                        .assignments
                        .get(&v.session_id)
                        .copied()
                        .unwrap_or_else(|| model.assign_point(&v.scores));
                    (v.clone(), ranking[cluster])
                })
                .collect();
            let mut counts: BTreeMap<RiskLevel, usize> = BTreeMap::new();
            for (_, label) in &samples {
                *counts.entry(*label).or_insert(0) += 1;
            }
            // Threshold sized for ~2 sessions per class at k=3; training
            // itself only needs two distinct labels.
            let enough_total = samples.len() >= cfg.federation.min_sessions;
            let enough_classes = counts.len() >= 2;
            eligible = enough_total && enough_classes;
            if eligible {
                clients.push(ClientTask {
                    user_id: user.clone(),
                    samples,
                    train: cfg.training.clone(),
                });
            }
        }
        summaries.push(UserSummary {
            user_id: user.clone(),
            sessions: vectors.train.len() + vectors.test.len(),
            train_sessions: vectors.train.len(),
            test_sessions: vectors.test.len(),
            labeled,
            eligible,
        });
    }

    // Federation over eligible clients.
    let layout = ParamLayout::new(ladder.clone(), feature_ids.clone());
    let mut keystore = KeyStore::generate(
        clients.iter().map(|c| c.user_id.clone()),
        derive_seed(cfg.seed, &[b"keys"]),
        cfg.federation.freshness_window,
    );
    let run = run_federation(
        &clients,
        cfg.federation.rounds,
        &cfg.federation.dp,
        &mut keystore,
        &layout,
    )?;

    // Evaluate the global model on every retained user's test split.
    let global_model = layout.as_model(&run.global.parameters, cfg.training.reg_lambda);
    let mut predictions: Vec<PredictionRecord> = Vec::new();
    let classes: Vec<String> = match &data.truth {
        Some(_) => vec!["high".to_string(), "legit".to_string()],
        None => ladder.iter().map(|r| r.as_str().to_string()).collect(),
    };
    for (user, vectors) in &computed {
        for vector in &vectors.test {
            let probs = predict_proba_scores(&global_model, &vector.scores);
            let predicted = argmax_risk(&global_model.classes, &probs);
            let (reference, predicted) = match &data.truth {
                Some(truth) => (
                    if truth.is_anomalous(&vector.session_id) {
                        "high".to_string()
                    } else {
                        "legit".to_string()
                    },
                    if predicted == RiskLevel::High {
                        "high".to_string()
                    } else {
                        "legit".to_string()
                    },
                ),
                None => {
                    // Pseudo-label the held-out vector by nearest centroid.
                    let Some(model) = cluster_models.get(user) else {
                        continue;
                    };
                    let y_true = model
                        .risk_of_point(&vector.scores)
                        .expect("ranked cluster model");
                    (
                        y_true.as_str().to_string(),
                        predicted.as_str().to_string(),
                    )
                }
            };
            predictions.push(PredictionRecord {
                user_id: user.clone(),
                session_id: vector.session_id.clone(),
                predicted,
                reference,
            });
        }
    }
    if predictions.is_empty() {
        return Err(PipelineError::NoTestSessions);
    }
    let pairs: Vec<(String, String)> = predictions
        .iter()
        .map(|p| (p.reference.clone(), p.predicted.clone()))
        .collect();
    let metrics = compute_metrics(&pairs, &classes)?;

    Ok(PipelineOutcome {
        global: run.global,
        layout,
        audit: run.audit,
        metrics,
        exclusions: exclusion_report,
        users: summaries,
        predictions,
    })
}
