//! Dataset ingestion: format parsers, user exclusion rules, min-max scaling
//! and the seeded synthetic generator.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::{FeatureObservation, SimilarityVector};

pub mod contextual;
pub mod keystroke;
pub mod mouse;
pub mod synth;

pub use contextual::{
    build_contextual_reference, parse_contextual, ContextualRefConfig, GeoTable,
    CONTEXTUAL_FEATURES,
};
pub use keystroke::{parse_keystroke, KeystrokeLayout, KEYSTROKE_FEATURE};
pub use mouse::{parse_mouse, MOUSE_TRAJECTORY_FEATURE};
pub use synth::{synth_generate, GroundTruth, SynthDataset, SynthProfile};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: expected {expected} columns, got {got}")]
    MalformedRow {
        line: u64,
        expected: usize,
        got: usize,
    },
    #[error("line {line}, column {column}: non-numeric timing value {value:?}")]
    NonNumericTiming {
        line: u64,
        column: String,
        value: String,
    },
    #[error("missing required column {0:?}")]
    MissingColumn(String),
    #[error("session {0} has no valid events after filtering")]
    EmptySessionAfterFiltering(String),
    #[error("line {line}: {message}")]
    BadValue { line: u64, message: String },
    #[error("geo table: {0}")]
    MissingGeoTable(String),
    #[error("scaling params cover {expected} features, vectors have {got}")]
    UnfittedParams { expected: usize, got: usize },
    #[error("cannot fit scaling on an empty vector set")]
    EmptyFit,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Which dataset family a session belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Keystroke,
    Mouse,
    Contextual,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Keystroke => "keystroke",
            Modality::Mouse => "mouse",
            Modality::Contextual => "contextual",
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One authentication session: a bag of feature observations plus identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRecord {
    pub user_id: String,
    pub session_id: String,
    pub modality: Modality,
    pub observations: Vec<FeatureObservation>,
    pub wall_time: Option<i64>,
}

/// Records grouped per user, sessions ordered by wall time then session id.
pub fn group_by_user(records: &[SessionRecord]) -> BTreeMap<String, Vec<SessionRecord>> {
    let mut by_user: BTreeMap<String, Vec<SessionRecord>> = BTreeMap::new();
    for record in records {
        by_user
            .entry(record.user_id.clone())
            .or_default()
            .push(record.clone());
    }
    for sessions in by_user.values_mut() {
        sessions.sort_by(|a, b| {
            (a.wall_time, &a.session_id).cmp(&(b.wall_time, &b.session_id))
        });
    }
    by_user
}

/// Thresholds for the user exclusion rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExclusionThresholds {
    /// Minimum number of sessions.
    pub min_events: usize,
    /// Minimum number of distinct observation profiles.
    pub min_profiles: usize,
    /// Users whose similarity vectors have mean per-coordinate variance
    /// below this are dropped.
    pub low_variance: f64,
}

impl Default for ExclusionThresholds {
    fn default() -> Self {
        ExclusionThresholds {
            min_events: 2,
            min_profiles: 3,
            low_variance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserExclusion {
    pub user_id: String,
    /// Every rule the user failed.
    pub rules: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub retained: Vec<String>,
    pub excluded: Vec<UserExclusion>,
}

/// A stable fingerprint of a session's observations, used to count distinct
/// profiles.
fn profile_fingerprint(record: &SessionRecord) -> String {
    serde_json::to_string(&record.observations).expect("observations serialize")
}

/// Drop users failing any exclusion rule. `min_events` and `min_profiles`
/// come from the raw records; the low-variance rule additionally needs the
/// users' similarity vectors and is skipped when they are not supplied yet.
pub fn apply_exclusions(
    per_user: &BTreeMap<String, Vec<SessionRecord>>,
    sim_vectors: Option<&BTreeMap<String, Vec<SimilarityVector>>>,
    thresholds: &ExclusionThresholds,
) -> (BTreeMap<String, Vec<SessionRecord>>, ExclusionReport) {
    let mut retained = BTreeMap::new();
    let mut report = ExclusionReport::default();

    for (user, sessions) in per_user {
        let mut rules = Vec::new();
        if sessions.len() < thresholds.min_events {
            rules.push("min_events".to_string());
        }
        let profiles: BTreeSet<String> = sessions.iter().map(profile_fingerprint).collect();
        if profiles.len() < thresholds.min_profiles {
            rules.push("min_profiles".to_string());
        }
        if let Some(vectors) = sim_vectors.and_then(|m| m.get(user)) {
            if let Some(var) = mean_coordinate_variance(vectors) {
                if var < thresholds.low_variance {
                    rules.push("low_variance".to_string());
                }
            }
        }
        if rules.is_empty() {
            retained.insert(user.clone(), sessions.clone());
            report.retained.push(user.clone());
        } else {
            report.excluded.push(UserExclusion {
                user_id: user.clone(),
                rules,
            });
        }
    }
    (retained, report)
}

fn mean_coordinate_variance(vectors: &[SimilarityVector]) -> Option<f64> {
    let first = vectors.first()?;
    let dim = first.scores.len();
    if dim == 0 {
        return None;
    }
    let n = vectors.len() as f64;
    let mut total = 0.0;
    for col in 0..dim {
        let mean = vectors.iter().map(|v| v.scores[col]).sum::<f64>() / n;
        total += vectors
            .iter()
            .map(|v| (v.scores[col] - mean).powi(2))
            .sum::<f64>()
            / n;
    }
    Some(total / dim as f64)
}

/// Per-coordinate min/max fitted on the training split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingParams {
    pub feature_ids: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Coordinates where max == min; they map to 0.5.
    pub degenerate: Vec<bool>,
}

/// Fit min-max scaling on the training vectors only.
pub fn fit_scaling(vectors: &[SimilarityVector]) -> Result<ScalingParams, IngestError> {
    let first = vectors.first().ok_or(IngestError::EmptyFit)?;
    let dim = first.scores.len();
    let mut min = vec![f64::INFINITY; dim];
    let mut max = vec![f64::NEG_INFINITY; dim];
    for v in vectors {
        if v.scores.len() != dim {
            return Err(IngestError::UnfittedParams {
                expected: dim,
                got: v.scores.len(),
            });
        }
        for (i, &s) in v.scores.iter().enumerate() {
            min[i] = min[i].min(s);
            max[i] = max[i].max(s);
        }
    }
    let degenerate = min.iter().zip(&max).map(|(lo, hi)| lo == hi).collect();
    Ok(ScalingParams {
        feature_ids: first.feature_ids.clone(),
        min,
        max,
        degenerate,
    })
}

/// Apply fitted scaling: `(x - min) / (max - min)` clamped to `[0, 1]`;
/// degenerate coordinates map to 0.5.
pub fn apply_scaling(
    vectors: &[SimilarityVector],
    params: &ScalingParams,
) -> Result<Vec<SimilarityVector>, IngestError> {
    let dim = params.min.len();
    let mut out = Vec::with_capacity(vectors.len());
    for v in vectors {
        if v.scores.len() != dim {
            return Err(IngestError::UnfittedParams {
                expected: dim,
                got: v.scores.len(),
            });
        }
        let scores: Vec<f64> = v
            .scores
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                if params.degenerate[i] {
                    0.5
                } else {
                    ((s - params.min[i]) / (params.max[i] - params.min[i])).clamp(0.0, 1.0)
                }
            })
            .collect();
        let mut scaled = v.clone();
        scaled.scores = scores;
        out.push(scaled);
    }
    Ok(out)
}
