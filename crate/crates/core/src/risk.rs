//! Unsupervised risk pseudo-labeling: KMeans over similarity vectors, then
//! inverse centroid-norm ranking.
//!
//! Legitimate sessions have large similarity coordinates, so their cluster
//! centroids sit far from the origin; clusters whose centroid norm is small
//! are ranked as higher risk.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::SimilarityVector;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("need at least {k} vectors for k={k}, got {n}")]
    TooFewSamples { k: usize, n: usize },
    #[error("k must be 2 or 3, got {0}")]
    UnsupportedK(usize),
    #[error("vectors disagree on dimension: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("duplicate session id {0}")]
    DuplicateSession(String),
    #[error("clustering degenerated: centroids are not pairwise distinct")]
    DegenerateClustering,
    #[error("empty cluster could not be recovered after {0} re-seedings")]
    EmptyClusterUnrecoverable(usize),
    #[error("risk ranking requested before centroids were computed")]
    NoCentroids,
}

/// Discrete risk levels, most severe first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskLevel {
    High,
    Medium,
    Low,
}

impl RiskLevel {
    /// Severity rank: higher means stricter.
    pub fn severity(self) -> u8 {
        match self {
            RiskLevel::High => 2,
            RiskLevel::Medium => 1,
            RiskLevel::Low => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskLevel::High => "high",
            RiskLevel::Medium => "medium",
            RiskLevel::Low => "low",
        }
    }

    /// Stable wire code used by canonical model serialization.
    pub fn code(self) -> u8 {
        match self {
            RiskLevel::High => 0,
            RiskLevel::Medium => 1,
            RiskLevel::Low => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<RiskLevel> {
        match code {
            0 => Some(RiskLevel::High),
            1 => Some(RiskLevel::Medium),
            2 => Some(RiskLevel::Low),
            _ => None,
        }
    }
}

impl std::fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Risk levels assigned to `k` clusters, strictest first by ascending
/// centroid norm.
pub fn risk_ladder(k: usize) -> &'static [RiskLevel] {
    match k {
        2 => &[RiskLevel::High, RiskLevel::Low],
        _ => &[RiskLevel::High, RiskLevel::Medium, RiskLevel::Low],
    }
}

/// KMeans result over per-session similarity vectors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// session id → cluster index.
    pub assignments: BTreeMap<String, usize>,
    /// cluster index → risk level, populated by [`rank_risk`].
    pub risk_of_cluster: Option<Vec<RiskLevel>>,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub wcss_history: Vec<f64>,
    /// Whether equal-norm tie-breaking was applied during ranking.
    pub tie_break_applied: bool,
}

impl ClusterModel {
    /// Nearest-centroid cluster index for an arbitrary point.
    pub fn assign_point(&self, point: &[f64]) -> usize {
        nearest(point, &self.centroids).0
    }

    /// Risk of an arbitrary point via its nearest centroid.
    pub fn risk_of_point(&self, point: &[f64]) -> Result<RiskLevel, RiskError> {
        let ranking = self
            .risk_of_cluster
            .as_ref()
            .ok_or(RiskError::NoCentroids)?;
        Ok(ranking[self.assign_point(point)])
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (idx, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best_d {
            best_d = d;
            best = idx;
        }
    }
    (best, best_d)
}

/// Farthest-point seeding: a seeded random first centroid, then repeatedly
/// the point farthest from its nearest chosen centroid (ties to the lower
/// index).
fn seed_centroids(points: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..points.len());
    let mut chosen = vec![points[first].clone()];
    while chosen.len() < k {
        let mut best_idx = 0;
        let mut best_d = -1.0;
        for (idx, p) in points.iter().enumerate() {
            let (_, d) = nearest(p, &chosen);
            if d > best_d {
                best_d = d;
                best_idx = idx;
            }
        }
        chosen.push(points[best_idx].clone());
    }
    chosen
}

const CONVERGENCE_SHIFT: f64 = 1e-6;
const MAX_RESEEDS: usize = 3;

/// Lloyd iterations over raw points. Internal driver shared by [`kmeans`];
/// accepts any `k >= 1`.
pub(crate) fn lloyd(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<(Vec<Vec<f64>>, Vec<usize>, Vec<f64>), RiskError> {
    if points.len() < k {
        return Err(RiskError::TooFewSamples {
            k,
            n: points.len(),
        });
    }
    let dim = points[0].len();
    for p in points {
        if p.len() != dim {
            return Err(RiskError::DimensionMismatch {
                left: dim,
                right: p.len(),
            });
        }
    }

    let mut centroids = seed_centroids(points, k, seed);
    let mut assignments = vec![0usize; points.len()];
    let mut wcss_history = Vec::new();
    let mut reseeds = 0usize;

    for _ in 0..max_iter.max(1) {
        for (i, p) in points.iter().enumerate() {
            assignments[i] = nearest(p, &centroids).0;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }

        let mut new_centroids = centroids.clone();
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed the empty cluster at the point farthest from its
                // nearest current centroid.
                reseeds += 1;
                if reseeds > MAX_RESEEDS {
                    return Err(RiskError::EmptyClusterUnrecoverable(MAX_RESEEDS));
                }
                let mut far_idx = 0;
                let mut far_d = -1.0;
                for (idx, p) in points.iter().enumerate() {
                    let (_, d) = nearest(p, &centroids);
                    if d > far_d {
                        far_d = d;
                        far_idx = idx;
                    }
                }
                new_centroids[c] = points[far_idx].clone();
            } else {
                for (dst, s) in new_centroids[c].iter_mut().zip(&sums[c]) {
                    *dst = s / counts[c] as f64;
                }
            }
        }

        let wcss: f64 = points
            .iter()
            .zip(&assignments)
            .map(|(p, &a)| squared_distance(p, &new_centroids[a]))
            .sum();
        wcss_history.push(wcss);

        let shift = centroids
            .iter()
            .zip(&new_centroids)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0f64, f64::max);
        centroids = new_centroids;
        if shift < CONVERGENCE_SHIFT {
            break;
        }
    }

    for (i, p) in points.iter().enumerate() {
        assignments[i] = nearest(p, &centroids).0;
    }
    for a in 0..k {
        for b in (a + 1)..k {
            if squared_distance(&centroids[a], &centroids[b]) < 1e-24 {
                return Err(RiskError::DegenerateClustering);
            }
        }
    }
    Ok((centroids, assignments, wcss_history))
}

/// Seeded KMeans over similarity vectors. Deterministic for a fixed seed and
/// input order; the risk mapping is left empty until [`rank_risk`].
pub fn kmeans(
    vectors: &[SimilarityVector],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterModel, RiskError> {
    if !(k == 2 || k == 3) {
        return Err(RiskError::UnsupportedK(k));
    }
    let points: Vec<Vec<f64>> = vectors.iter().map(|v| v.scores.clone()).collect();
    let (centroids, raw_assignments, wcss_history) = lloyd(&points, k, seed, max_iter)?;

    let mut assignments = BTreeMap::new();
    for (v, a) in vectors.iter().zip(raw_assignments) {
        if assignments.insert(v.session_id.clone(), a).is_some() {
            return Err(RiskError::DuplicateSession(v.session_id.clone()));
        }
    }
    Ok(ClusterModel {
        k,
        centroids,
        assignments,
        risk_of_cluster: None,
        wcss_history,
        tie_break_applied: false,
    })
}

const NORM_TIE_TOLERANCE: f64 = 1e-9;

/// Assign risk levels by inverse centroid-norm ranking: the cluster with the
/// smallest Euclidean centroid norm is High, the largest Low. Ties within
/// `1e-9` break toward the lexicographically smaller centroid and set
/// `tie_break_applied`.
pub fn rank_risk(mut model: ClusterModel) -> Result<ClusterModel, RiskError> {
    if model.centroids.is_empty() {
        return Err(RiskError::NoCentroids);
    }
    let norms: Vec<f64> = model
        .centroids
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();

    let mut order: Vec<usize> = (0..model.centroids.len()).collect();
    let mut tie_break = false;
    order.sort_by(|&a, &b| {
        if (norms[a] - norms[b]).abs() <= NORM_TIE_TOLERANCE {
            tie_break = true;
            model.centroids[a]
                .partial_cmp(&model.centroids[b])
                .expect("finite centroids")
        } else {
            norms[a].partial_cmp(&norms[b]).expect("finite norms")
        }
    });

    let ladder = risk_ladder(model.k);
    let mut risk_of_cluster = vec![RiskLevel::Low; model.centroids.len()];
    for (rank, &cluster) in order.iter().enumerate() {
        risk_of_cluster[cluster] = ladder[rank.min(ladder.len() - 1)];
    }
    model.risk_of_cluster = Some(risk_of_cluster);
    model.tie_break_applied = tie_break;
    Ok(model)
}

/// Cluster, rank and label every session. Input order does not matter:
/// vectors are sorted by session id before clustering.
pub fn label_sessions(
    vectors: &[SimilarityVector],
    k: usize,
    seed: u64,
) -> Result<Vec<(String, RiskLevel)>, RiskError> {
    let mut sorted: Vec<&SimilarityVector> = vectors.iter().collect();
    sorted.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    let owned: Vec<SimilarityVector> = sorted.into_iter().cloned().collect();
    let model = rank_risk(kmeans(&owned, k, seed, 100)?)?;
    let ranking = model.risk_of_cluster.as_ref().expect("ranked above");
    Ok(model
        .assignments
        .iter()
        .map(|(session, &cluster)| (session.clone(), ranking[cluster]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(points: &[(&str, &[f64])]) -> Vec<SimilarityVector> {
        points
            .iter()
            .map(|(id, scores)| {
                SimilarityVector::new(
                    "u",
                    *id,
                    (0..scores.len()).map(|i| format!("f{i}")).collect(),
                    scores.to_vec(),
                )
                .unwrap()
            })
            .collect()
    }

    fn three_clouds() -> Vec<SimilarityVector> {
        let mut out = Vec::new();
        for (base, tag) in [(0.1, "a"), (0.5, "b"), (0.9, "c")] {
            for i in 0..4 {
                let jitter = 0.01 * i as f64;
                out.push(
                    SimilarityVector::new(
                        "u",
                        format!("{tag}{i}"),
                        vec!["x".into(), "y".into()],
                        vec![base + jitter, base + jitter],
                    )
                    .unwrap(),
                );
            }
        }
        out
    }

    #[test]
    fn separated_clouds_cluster_apart() {
        let vectors = three_clouds();
        let model = kmeans(&vectors, 3, 1, 100).unwrap();
        // All sessions of one cloud share a cluster.
        for tag in ["a", "b", "c"] {
            let clusters: Vec<usize> = model
                .assignments
                .iter()
                .filter(|(s, _)| s.starts_with(tag))
                .map(|(_, &c)| c)
                .collect();
            assert!(clusters.windows(2).all(|w| w[0] == w[1]), "{tag}: {clusters:?}");
        }
    }

    #[test]
    fn mean_property_with_single_cluster() {
        let points = vec![vec![1.0, 3.0], vec![3.0, 5.0], vec![5.0, 1.0]];
        let (centroids, _, _) = lloyd(&points, 1, 0, 50).unwrap();
        assert_eq!(centroids[0], vec![3.0, 3.0]);
    }

    #[test]
    fn duplicated_dataset_same_centroids() {
        let vectors = three_clouds();
        let mut doubled = vectors.clone();
        for v in &vectors {
            let mut copy = v.clone();
            copy.session_id = format!("{}-dup", v.session_id);
            doubled.push(copy);
        }
        let a = kmeans(&vectors, 3, 5, 100).unwrap();
        let b = kmeans(&doubled, 3, 5, 100).unwrap();
        let mut ca = a.centroids.clone();
        let mut cb = b.centroids.clone();
        ca.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cb.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (x, y) in ca.iter().zip(&cb) {
            for (u, v) in x.iter().zip(y) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn wcss_non_increasing() {
        let vectors = three_clouds();
        let model = kmeans(&vectors, 3, 3, 100).unwrap();
        for pair in model.wcss_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "wcss rose: {pair:?}");
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let vectors = three_clouds();
        let a = kmeans(&vectors, 3, 11, 100).unwrap();
        let b = kmeans(&vectors, 3, 11, 100).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn rank_by_inverse_norm() {
        let model = ClusterModel {
            k: 3,
            centroids: vec![vec![0.5, 0.0], vec![0.2, 0.0], vec![0.9, 0.0]],
            assignments: BTreeMap::new(),
            risk_of_cluster: None,
            wcss_history: vec![],
            tie_break_applied: false,
        };
        let ranked = rank_risk(model).unwrap();
        assert_eq!(
            ranked.risk_of_cluster,
            Some(vec![RiskLevel::Medium, RiskLevel::High, RiskLevel::Low])
        );
        assert!(!ranked.tie_break_applied);
    }

    #[test]
    fn rank_two_clusters() {
        let model = ClusterModel {
            k: 2,
            centroids: vec![vec![0.8, 0.0], vec![0.3, 0.0]],
            assignments: BTreeMap::new(),
            risk_of_cluster: None,
            wcss_history: vec![],
            tie_break_applied: false,
        };
        let ranked = rank_risk(model).unwrap();
        assert_eq!(
            ranked.risk_of_cluster,
            Some(vec![RiskLevel::Low, RiskLevel::High])
        );
    }

    #[test]
    fn equal_norms_tie_break() {
        let model = ClusterModel {
            k: 2,
            centroids: vec![vec![0.0, 0.5], vec![0.5, 0.0]],
            assignments: BTreeMap::new(),
            risk_of_cluster: None,
            wcss_history: vec![],
            tie_break_applied: false,
        };
        let ranked = rank_risk(model).unwrap();
        assert!(ranked.tie_break_applied);
        // Lexicographically smaller centroid [0.0, 0.5] ranks first (High).
        assert_eq!(
            ranked.risk_of_cluster,
            Some(vec![RiskLevel::High, RiskLevel::Low])
        );
    }

    #[test]
    fn label_extremes() {
        let vectors = vecs(&[
            ("ones-1", &[1.0, 1.0]),
            ("ones-2", &[0.98, 0.99]),
            ("zeros-1", &[0.0, 0.01]),
            ("zeros-2", &[0.02, 0.0]),
        ]);
        let labels = label_sessions(&vectors, 2, 4).unwrap();
        let map: BTreeMap<_, _> = labels.into_iter().collect();
        assert_eq!(map["zeros-1"], RiskLevel::High);
        assert_eq!(map["zeros-2"], RiskLevel::High);
        assert_eq!(map["ones-1"], RiskLevel::Low);
        assert_eq!(map["ones-2"], RiskLevel::Low);
    }

    #[test]
    fn labels_invariant_under_permutation() {
        let vectors = three_clouds();
        let mut reversed = vectors.clone();
        reversed.reverse();
        let a: BTreeMap<_, _> = label_sessions(&vectors, 3, 8).unwrap().into_iter().collect();
        let b: BTreeMap<_, _> = label_sessions(&reversed, 3, 8).unwrap().into_iter().collect();
        assert_eq!(a, b);
    }

    #[test]
    fn norm_ordering_law() {
        let vectors = three_clouds();
        let model = rank_risk(kmeans(&vectors, 3, 2, 100).unwrap()).unwrap();
        let ranking = model.risk_of_cluster.as_ref().unwrap();
        let norm = |c: &Vec<f64>| c.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..model.centroids.len() {
            for j in 0..model.centroids.len() {
                if ranking[i].severity() > ranking[j].severity() {
                    assert!(
                        norm(&model.centroids[i]) <= norm(&model.centroids[j]) + NORM_TIE_TOLERANCE
                    );
                }
            }
        }
    }

    #[test]
    fn too_few_samples() {
        let vectors = vecs(&[("a", &[0.1]), ("b", &[0.9])]);
        assert!(matches!(
            kmeans(&vectors, 3, 0, 10),
            Err(RiskError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn identical_points_degenerate() {
        let vectors = vecs(&[("a", &[0.5]), ("b", &[0.5]), ("c", &[0.5])]);
        assert!(matches!(
            kmeans(&vectors, 2, 0, 10),
            Err(RiskError::DegenerateClustering) | Err(RiskError::EmptyClusterUnrecoverable(_))
        ));
    }

    #[test]
    fn unsupported_k() {
        let vectors = three_clouds();
        assert_eq!(kmeans(&vectors, 4, 0, 10).unwrap_err(), RiskError::UnsupportedK(4));
    }
}
