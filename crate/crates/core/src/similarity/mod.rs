//! Per-feature similarity scoring against per-user references.
//!
//! Every operation maps a (reference, live) feature pair into `[0, 1]`,
//! larger meaning more similar. Normalized-distance formulas are clamped
//! after evaluation, so distances beyond the configured maximum saturate
//! at 0 instead of going negative.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod correlation;
pub mod dtw;
pub mod geo;

pub use correlation::{cross_group_correlation, CrossGroupReport};
pub use dtw::{dba_centroid, dtw_exact, dtw_fast, DtwError, Sequence};
pub use geo::{geo_centroid, haversine, GeoError, GeoPoint, EARTH_RADIUS_KM};

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("vector dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vector has zero norm")]
    ZeroNormVector,
    #[error("max DTW distance must be positive, got {0}")]
    NonPositiveMaxDtw(f64),
    #[error("max distance must be positive, got {0}")]
    NonPositiveMaxDistance(f64),
    #[error("decay factor must be in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("top-k requires k >= 1")]
    ZeroK,
    #[error("version must be nonnegative, got {0}")]
    NegativeVersion(f64),
    #[error("score {score} for feature {feature_id} outside [0, 1]")]
    ScoreOutOfRange { feature_id: String, score: f64 },
    #[error("duplicate feature id {0}")]
    DuplicateFeature(String),
    #[error("unknown feature {0}: not present in the user reference")]
    UnknownFeature(String),
    #[error("feature {feature_id}: observation kind {observed} does not match reference kind {expected}")]
    KindMismatch {
        feature_id: String,
        expected: &'static str,
        observed: &'static str,
    },
    #[error("feature {feature_id}: {source}")]
    Feature {
        feature_id: String,
        #[source]
        source: Box<SimilarityError>,
    },
    #[error(transparent)]
    Dtw(#[from] DtwError),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

impl SimilarityError {
    fn for_feature(self, feature_id: &str) -> SimilarityError {
        SimilarityError::Feature {
            feature_id: feature_id.to_string(),
            source: Box::new(self),
        }
    }
}

/// Feature kinds, one per payload shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    Binary,
    Vector,
    Sequence,
    SetMember,
    Geo,
    Version,
    CategorySet,
    Scalar,
}

/// One observed feature value of one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeaturePayload {
    /// Equality-comparable token (password hash, component name, flag).
    Token(String),
    /// Real-valued embedding, compared by cosine.
    Vector(Vec<f64>),
    /// Time-ordered sequence of equally sized real vectors.
    Sequence(Sequence),
    /// Candidate member of an enrolled set (device id, IP, ASN).
    Member(String),
    /// Location in radians.
    Geo(GeoPoint),
    /// Nonnegative numeric software version.
    Version(f64),
    /// Finite set of categorical values.
    CategorySet(BTreeSet<String>),
    /// Plain real value compared against a historical centroid.
    Scalar(f64),
}

impl FeaturePayload {
    pub fn kind(&self) -> FeatureKind {
        match self {
            FeaturePayload::Token(_) => FeatureKind::Binary,
            FeaturePayload::Vector(_) => FeatureKind::Vector,
            FeaturePayload::Sequence(_) => FeatureKind::Sequence,
            FeaturePayload::Member(_) => FeatureKind::SetMember,
            FeaturePayload::Geo(_) => FeatureKind::Geo,
            FeaturePayload::Version(_) => FeatureKind::Version,
            FeaturePayload::CategorySet(_) => FeatureKind::CategorySet,
            FeaturePayload::Scalar(_) => FeatureKind::Scalar,
        }
    }

    fn kind_name(&self) -> &'static str {
        match self.kind() {
            FeatureKind::Binary => "binary",
            FeatureKind::Vector => "vector",
            FeatureKind::Sequence => "sequence",
            FeatureKind::SetMember => "set-member",
            FeatureKind::Geo => "geo",
            FeatureKind::Version => "version",
            FeatureKind::CategorySet => "category-set",
            FeatureKind::Scalar => "scalar",
        }
    }

    pub fn validate(&self) -> Result<(), SimilarityError> {
        match self {
            FeaturePayload::Sequence(seq) => {
                dtw::dtw_exact(seq, seq)?;
                Ok(())
            }
            FeaturePayload::Geo(p) => Ok(p.validate()?),
            FeaturePayload::Version(v) => {
                if *v < 0.0 || !v.is_finite() {
                    Err(SimilarityError::NegativeVersion(*v))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureObservation {
    pub feature_id: String,
    pub payload: FeaturePayload,
}

impl FeatureObservation {
    pub fn new(feature_id: impl Into<String>, payload: FeaturePayload) -> Self {
        FeatureObservation {
            feature_id: feature_id.into(),
            payload,
        }
    }
}

/// Per-feature reference state captured at enrollment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FeatureReference {
    /// Registered token for binary match.
    Token(String),
    /// Reference embedding for cosine comparison.
    Vector(Vec<f64>),
    /// Enrolled behavior: raw reference sequences, their barycenter, and the
    /// per-user normalization constant.
    SequenceSet {
        references: Vec<Sequence>,
        centroid: Sequence,
        max_dtw: f64,
    },
    /// Enrolled device/IP/ASN set.
    DeviceSet(BTreeSet<String>),
    /// Historical location centroid with the distance at which similarity
    /// reaches zero.
    GeoCentroid { centroid: GeoPoint, max_distance: f64 },
    /// Reference software version.
    Version(f64),
    /// Baseline category set for Jaccard comparison.
    CategorySet(BTreeSet<String>),
    /// Historical scalar centroid; `period` selects circular distance
    /// (e.g. 24 for hour of day), otherwise absolute difference.
    ScalarCentroid {
        value: f64,
        max_distance: f64,
        period: Option<f64>,
    },
    /// No reference data could be built for this feature; any observation
    /// scores 0 while the vector keeps its fixed dimensionality.
    Unavailable,
}

impl FeatureReference {
    fn kind_name(&self) -> &'static str {
        match self {
            FeatureReference::Token(_) => "binary",
            FeatureReference::Vector(_) => "vector",
            FeatureReference::SequenceSet { .. } => "sequence",
            FeatureReference::DeviceSet(_) => "set-member",
            FeatureReference::GeoCentroid { .. } => "geo",
            FeatureReference::Version(_) => "version",
            FeatureReference::CategorySet(_) => "category-set",
            FeatureReference::ScalarCentroid { .. } => "scalar",
            FeatureReference::Unavailable => "unavailable",
        }
    }
}

/// Reference plus its decay factor for temporal centroid updates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub reference: FeatureReference,
    pub decay_alpha: f64,
}

impl ReferenceEntry {
    pub fn new(reference: FeatureReference, decay_alpha: f64) -> Result<Self, SimilarityError> {
        if !(0.0..=1.0).contains(&decay_alpha) {
            return Err(SimilarityError::AlphaOutOfRange(decay_alpha));
        }
        if let FeatureReference::SequenceSet { max_dtw, .. } = &reference {
            if !(*max_dtw > 0.0) {
                return Err(SimilarityError::NonPositiveMaxDtw(*max_dtw));
            }
        }
        Ok(ReferenceEntry {
            reference,
            decay_alpha,
        })
    }
}

/// All reference state for one user, with a declared feature order that
/// fixes the similarity-vector layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserReference {
    pub user_id: String,
    feature_order: Vec<String>,
    features: BTreeMap<String, ReferenceEntry>,
}

impl UserReference {
    pub fn new(
        user_id: impl Into<String>,
        entries: Vec<(String, ReferenceEntry)>,
    ) -> Result<Self, SimilarityError> {
        let mut feature_order = Vec::with_capacity(entries.len());
        let mut features = BTreeMap::new();
        for (id, entry) in entries {
            if features.contains_key(&id) {
                return Err(SimilarityError::DuplicateFeature(id));
            }
            feature_order.push(id.clone());
            features.insert(id, entry);
        }
        Ok(UserReference {
            user_id: user_id.into(),
            feature_order,
            features,
        })
    }

    pub fn feature_order(&self) -> &[String] {
        &self.feature_order
    }

    pub fn entry(&self, feature_id: &str) -> Option<&ReferenceEntry> {
        self.features.get(feature_id)
    }
}

/// Per-session vector of similarity scores, one coordinate per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityVector {
    pub user_id: String,
    pub session_id: String,
    pub feature_ids: Vec<String>,
    pub scores: Vec<f64>,
}

impl SimilarityVector {
    pub fn new(
        user_id: impl Into<String>,
        session_id: impl Into<String>,
        feature_ids: Vec<String>,
        scores: Vec<f64>,
    ) -> Result<Self, SimilarityError> {
        if feature_ids.len() != scores.len() {
            return Err(SimilarityError::DimensionMismatch {
                left: feature_ids.len(),
                right: scores.len(),
            });
        }
        let mut seen = BTreeSet::new();
        for id in &feature_ids {
            if !seen.insert(id) {
                return Err(SimilarityError::DuplicateFeature(id.clone()));
            }
        }
        for (id, &score) in feature_ids.iter().zip(&scores) {
            if !(0.0..=1.0).contains(&score) {
                return Err(SimilarityError::ScoreOutOfRange {
                    feature_id: id.clone(),
                    score,
                });
            }
        }
        Ok(SimilarityVector {
            user_id: user_id.into(),
            session_id: session_id.into(),
            feature_ids,
            scores,
        })
    }
}

/// Knobs shared by every per-feature scoring call.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityConfig {
    /// FastDTW locality radius.
    pub dtw_radius: usize,
    /// Sphere radius used by haversine, in km.
    pub earth_radius: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            dtw_radius: 10,
            earth_radius: EARTH_RADIUS_KM,
        }
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Exact-match similarity for knowledge-based tokens: 1 on equality, else 0.
pub fn sim_binary(reference: &str, live: &str) -> f64 {
    if reference == live {
        1.0
    } else {
        0.0
    }
}

/// Cosine similarity clamped to `[0, 1]`; negative cosines score 0.
pub fn sim_cosine(reference: &[f64], live: &[f64]) -> Result<f64, SimilarityError> {
    if reference.len() != live.len() {
        return Err(SimilarityError::DimensionMismatch {
            left: reference.len(),
            right: live.len(),
        });
    }
    let mut dot = 0.0;
    let mut norm_r = 0.0;
    let mut norm_l = 0.0;
    for (r, l) in reference.iter().zip(live) {
        dot += r * l;
        norm_r += r * r;
        norm_l += l * l;
    }
    if norm_r == 0.0 || norm_l == 0.0 {
        return Err(SimilarityError::ZeroNormVector);
    }
    Ok(clamp01(dot / (norm_r.sqrt() * norm_l.sqrt())))
}

/// DTW-based sequence similarity normalized by the per-user max distance.
pub fn sim_sequence(
    live: &[Vec<f64>],
    centroid: &[Vec<f64>],
    max_dtw: f64,
    radius: usize,
) -> Result<f64, SimilarityError> {
    if !(max_dtw > 0.0) {
        return Err(SimilarityError::NonPositiveMaxDtw(max_dtw));
    }
    let distance = dtw::dtw_fast(live, centroid, radius)?;
    Ok(clamp01(1.0 - distance / max_dtw))
}

/// The `k` best normalized DTW similarities of `live` against a reference
/// set, descending, zero-padded when fewer than `k` references exist.
pub fn sim_topk(
    live: &[Vec<f64>],
    references: &[Sequence],
    k: usize,
    max_dtw: f64,
    radius: usize,
) -> Result<Vec<f64>, SimilarityError> {
    if k == 0 {
        return Err(SimilarityError::ZeroK);
    }
    if references.is_empty() {
        return Err(DtwError::EmptyReferenceSet.into());
    }
    let mut scores = Vec::with_capacity(references.len());
    for reference in references {
        scores.push(sim_sequence(live, reference, max_dtw, radius)?);
    }
    scores.sort_by(|a, b| b.partial_cmp(a).expect("scores are finite"));
    scores.truncate(k);
    scores.resize(k, 0.0);
    Ok(scores)
}

/// Set-membership similarity: 1 iff `live` is enrolled. An empty enrollment
/// set matches nothing.
pub fn sim_set_member(live: &str, reference_set: &BTreeSet<String>) -> f64 {
    if reference_set.contains(live) {
        1.0
    } else {
        0.0
    }
}

/// Linear distance-to-similarity transform, clamped to `[0, 1]`.
pub fn sim_distance_normalized(distance: f64, max_distance: f64) -> Result<f64, SimilarityError> {
    if !(max_distance > 0.0) {
        return Err(SimilarityError::NonPositiveMaxDistance(max_distance));
    }
    Ok(clamp01(1.0 - distance / max_distance))
}

/// Version drift similarity `1 - |a - b| / max(a, b)`; two zero versions are
/// defined equal.
pub fn sim_version(reference: f64, live: f64) -> f64 {
    let denom = reference.max(live);
    if denom == 0.0 {
        return 1.0;
    }
    clamp01(1.0 - (reference - live).abs() / denom)
}

/// Jaccard similarity of two categorical sets; two empty sets count as
/// identical.
pub fn sim_jaccard(reference: &BTreeSet<String>, live: &BTreeSet<String>) -> f64 {
    let union = reference.union(live).count();
    if union == 0 {
        return 1.0;
    }
    let intersection = reference.intersection(live).count();
    intersection as f64 / union as f64
}

/// Decayed centroid update `alpha * hist + (1 - alpha) * live`, element-wise.
pub fn decay_update(
    hist_centroid: &[f64],
    live: &[f64],
    alpha: f64,
) -> Result<Vec<f64>, SimilarityError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SimilarityError::AlphaOutOfRange(alpha));
    }
    if hist_centroid.len() != live.len() {
        return Err(SimilarityError::DimensionMismatch {
            left: hist_centroid.len(),
            right: live.len(),
        });
    }
    Ok(hist_centroid
        .iter()
        .zip(live)
        .map(|(h, l)| {
            if alpha == 1.0 {
                *h
            } else if alpha == 0.0 {
                *l
            } else {
                alpha * h + (1.0 - alpha) * l
            }
        })
        .collect())
}

/// Circular distance on a period (e.g. hours on a 24h clock).
pub fn circular_distance(a: f64, b: f64, period: f64) -> f64 {
    let diff = (a - b).rem_euclid(period);
    diff.min(period - diff)
}

fn score_feature(
    entry: &ReferenceEntry,
    payload: &FeaturePayload,
    cfg: &SimilarityConfig,
) -> Result<f64, SimilarityError> {
    payload.validate()?;
    let reference = &entry.reference;
    let mismatch = || SimilarityError::KindMismatch {
        feature_id: String::new(),
        expected: reference.kind_name(),
        observed: payload.kind_name(),
    };
    match (reference, payload) {
        (FeatureReference::Unavailable, _) => Ok(0.0),
        (FeatureReference::Token(r), FeaturePayload::Token(l)) => Ok(sim_binary(r, l)),
        (FeatureReference::Vector(r), FeaturePayload::Vector(l)) => sim_cosine(r, l),
        (
            FeatureReference::SequenceSet {
                centroid, max_dtw, ..
            },
            FeaturePayload::Sequence(l),
        ) => sim_sequence(l, centroid, *max_dtw, cfg.dtw_radius),
        (FeatureReference::DeviceSet(set), FeaturePayload::Member(l)) => {
            Ok(sim_set_member(l, set))
        }
        (
            FeatureReference::GeoCentroid {
                centroid,
                max_distance,
            },
            FeaturePayload::Geo(l),
        ) => {
            let d = haversine(*centroid, *l, cfg.earth_radius)?;
            sim_distance_normalized(d, *max_distance)
        }
        (FeatureReference::Version(r), FeaturePayload::Version(l)) => Ok(sim_version(*r, *l)),
        (FeatureReference::CategorySet(r), FeaturePayload::CategorySet(l)) => {
            Ok(sim_jaccard(r, l))
        }
        (
            FeatureReference::ScalarCentroid {
                value,
                max_distance,
                period,
            },
            FeaturePayload::Scalar(l),
        ) => {
            let d = match period {
                Some(p) => circular_distance(*value, *l, *p),
                None => (value - l).abs(),
            };
            sim_distance_normalized(d, *max_distance)
        }
        _ => Err(mismatch()),
    }
}

/// Assemble the per-session similarity vector in the reference's declared
/// feature order. Features without an observation score 0 (maximally
/// suspicious) so dimensionality stays fixed; observations for features the
/// reference does not know are an error.
pub fn assemble_similarity_vector(
    observations: &[FeatureObservation],
    reference: &UserReference,
    cfg: &SimilarityConfig,
    session_id: &str,
) -> Result<SimilarityVector, SimilarityError> {
    let mut by_id: BTreeMap<&str, &FeatureObservation> = BTreeMap::new();
    for obs in observations {
        if reference.entry(&obs.feature_id).is_none() {
            return Err(SimilarityError::UnknownFeature(obs.feature_id.clone()));
        }
        if by_id.insert(obs.feature_id.as_str(), obs).is_some() {
            return Err(SimilarityError::DuplicateFeature(obs.feature_id.clone()));
        }
    }
    let mut scores = Vec::with_capacity(reference.feature_order().len());
    for feature_id in reference.feature_order() {
        let entry = reference
            .entry(feature_id)
            .expect("feature order entries always resolve");
        let score = match by_id.get(feature_id.as_str()) {
            Some(obs) => score_feature(entry, &obs.payload, cfg).map_err(|e| match e {
                SimilarityError::KindMismatch { expected, observed, .. } => {
                    SimilarityError::KindMismatch {
                        feature_id: feature_id.clone(),
                        expected,
                        observed,
                    }
                }
                other => other.for_feature(feature_id),
            })?,
            None => 0.0,
        };
        scores.push(score);
    }
    SimilarityVector::new(
        reference.user_id.clone(),
        session_id,
        reference.feature_order().to_vec(),
        scores,
    )
}
