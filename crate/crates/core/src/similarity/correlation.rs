//! Empirical cross-group correlation diagnostic for similarity vectors.
//!
//! Features are partitioned into semantic groups; the diagnostic reports the
//! worst mean absolute Pearson correlation between standardized coordinates
//! of any two groups, and the total-variation bound `m(m-1)/2 * eps_avg`
//! with the unspecified absolute constant taken as 1.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use super::SimilarityVector;

#[derive(Debug, Error, PartialEq)]
pub enum CorrelationError {
    #[error("need at least 2 groups and 3 vectors, got {groups} groups / {vectors} vectors")]
    InsufficientSamples { groups: usize, vectors: usize },
    #[error("feature {0} is not assigned to exactly one group")]
    NotAPartition(String),
    #[error("vectors disagree on feature layout")]
    InconsistentVectors,
    #[error("every coordinate is constant; no correlations can be computed")]
    DegenerateAll,
}

/// Mean absolute correlation for one group pair.
#[derive(Debug, Clone, Serialize)]
pub struct GroupPairCorrelation {
    pub group_a: String,
    pub group_b: String,
    pub mean_abs_correlation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossGroupReport {
    /// Worst-pair mean absolute cross-group correlation.
    pub eps_avg: f64,
    /// `m(m-1)/2 * eps_avg` with the theorem constant treated as 1.
    pub bound: f64,
    pub pairs: Vec<GroupPairCorrelation>,
    /// Zero-variance coordinates excluded from the estimate.
    pub degenerate_features: Vec<String>,
}

/// Pearson correlation of two standardized columns (already zero-mean,
/// unit-variance).
fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / n
}

pub fn cross_group_correlation(
    vectors: &[SimilarityVector],
    groups: &[(String, Vec<String>)],
) -> Result<CrossGroupReport, CorrelationError> {
    if groups.len() < 2 || vectors.len() < 3 {
        return Err(CorrelationError::InsufficientSamples {
            groups: groups.len(),
            vectors: vectors.len(),
        });
    }
    let layout = &vectors[0].feature_ids;
    for v in vectors {
        if v.feature_ids != *layout {
            return Err(CorrelationError::InconsistentVectors);
        }
    }

    // Every feature of the layout must land in exactly one group.
    let mut assigned: BTreeMap<&str, usize> = BTreeMap::new();
    for (gi, (_, members)) in groups.iter().enumerate() {
        for feature in members {
            if assigned.insert(feature.as_str(), gi).is_some() {
                return Err(CorrelationError::NotAPartition(feature.clone()));
            }
        }
    }
    let mut column_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (idx, feature) in layout.iter().enumerate() {
        if !assigned.contains_key(feature.as_str()) {
            return Err(CorrelationError::NotAPartition(feature.clone()));
        }
        column_of.insert(feature.as_str(), idx);
    }
    for feature in assigned.keys() {
        if !column_of.contains_key(feature) {
            return Err(CorrelationError::NotAPartition(feature.to_string()));
        }
    }

    // Standardize columns; constant columns are excluded and reported.
    let n = vectors.len();
    let dim = layout.len();
    let mut standardized: Vec<Option<Vec<f64>>> = Vec::with_capacity(dim);
    let mut degenerate = Vec::new();
    for col in 0..dim {
        let values: Vec<f64> = vectors.iter().map(|v| v.scores[col]).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        if var < 1e-24 {
            degenerate.push(layout[col].clone());
            standardized.push(None);
        } else {
            let sd = var.sqrt();
            standardized.push(Some(values.iter().map(|v| (v - mean) / sd).collect()));
        }
    }

    let live: BTreeSet<usize> = (0..dim).filter(|c| standardized[*c].is_some()).collect();
    if live.is_empty() {
        return Err(CorrelationError::DegenerateAll);
    }

    let mut pairs = Vec::new();
    let mut eps_avg: Option<f64> = None;
    for a in 0..groups.len() {
        for b in (a + 1)..groups.len() {
            let cols_a: Vec<usize> = groups[a]
                .1
                .iter()
                .filter_map(|f| column_of.get(f.as_str()).copied())
                .filter(|c| live.contains(c))
                .collect();
            let cols_b: Vec<usize> = groups[b]
                .1
                .iter()
                .filter_map(|f| column_of.get(f.as_str()).copied())
                .filter(|c| live.contains(c))
                .collect();
            if cols_a.is_empty() || cols_b.is_empty() {
                continue;
            }
            let mut total = 0.0;
            for &ca in &cols_a {
                for &cb in &cols_b {
                    let xa = standardized[ca].as_ref().expect("live column");
                    let xb = standardized[cb].as_ref().expect("live column");
                    total += correlation(xa, xb).abs();
                }
            }
            let mean = total / (cols_a.len() * cols_b.len()) as f64;
            pairs.push(GroupPairCorrelation {
                group_a: groups[a].0.clone(),
                group_b: groups[b].0.clone(),
                mean_abs_correlation: mean,
            });
            eps_avg = Some(eps_avg.map_or(mean, |e: f64| e.max(mean)));
        }
    }

    let eps_avg = eps_avg.ok_or(CorrelationError::DegenerateAll)?;
    let m = groups.len() as f64;
    Ok(CrossGroupReport {
        eps_avg,
        bound: m * (m - 1.0) / 2.0 * eps_avg,
        pairs,
        degenerate_features: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn vector(session: usize, ids: &[&str], scores: Vec<f64>) -> SimilarityVector {
        SimilarityVector::new(
            "u",
            format!("s{session}"),
            ids.iter().map(|s| s.to_string()).collect(),
            scores,
        )
        .unwrap()
    }

    fn group(name: &str, features: &[&str]) -> (String, Vec<String>) {
        (
            name.to_string(),
            features.iter().map(|s| s.to_string()).collect(),
        )
    }

    #[test]
    fn independent_coordinates_have_small_eps() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let ids = ["a1", "a2", "b1", "b2"];
        let vectors: Vec<_> = (0..1000)
            .map(|i| vector(i, &ids, (0..4).map(|_| rng.gen_range(0.0..1.0)).collect()))
            .collect();
        let groups = [group("ga", &["a1", "a2"]), group("gb", &["b1", "b2"])];
        let report = cross_group_correlation(&vectors, &groups).unwrap();
        assert!(report.eps_avg < 0.1, "eps_avg = {}", report.eps_avg);
        // m = 2 → bound equals eps_avg.
        assert_eq!(report.bound, report.eps_avg);
    }

    #[test]
    fn duplicated_feature_across_groups_is_perfectly_correlated() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let ids = ["a1", "b1"];
        let vectors: Vec<_> = (0..100)
            .map(|i| {
                let v = rng.gen_range(0.0..1.0);
                vector(i, &ids, vec![v, v])
            })
            .collect();
        let groups = [group("ga", &["a1"]), group("gb", &["b1"])];
        let report = cross_group_correlation(&vectors, &groups).unwrap();
        assert!((report.eps_avg - 1.0).abs() < 1e-9);
    }

    #[test]
    fn eps_shrinks_with_more_samples() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let ids = ["a1", "b1"];
        let mut eps_for = |n: usize| {
            let vectors: Vec<_> = (0..n)
                .map(|i| {
                    vector(
                        i,
                        &ids,
                        vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                    )
                })
                .collect();
            cross_group_correlation(&vectors, &[group("ga", &["a1"]), group("gb", &["b1"])])
                .unwrap()
                .eps_avg
        };
        let small = eps_for(30);
        let large = eps_for(3000);
        assert!(large < small, "eps {large} should shrink below {small}");
    }

    #[test]
    fn degenerate_coordinates_reported() {
        let ids = ["a1", "a2", "b1"];
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let vectors: Vec<_> = (0..50)
            .map(|i| {
                vector(
                    i,
                    &ids,
                    vec![0.5, rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                )
            })
            .collect();
        let groups = [group("ga", &["a1", "a2"]), group("gb", &["b1"])];
        let report = cross_group_correlation(&vectors, &groups).unwrap();
        assert_eq!(report.degenerate_features, vec!["a1".to_string()]);
    }

    #[test]
    fn all_constant_is_an_error() {
        let ids = ["a1", "b1"];
        let vectors: Vec<_> = (0..10).map(|i| vector(i, &ids, vec![0.3, 0.7])).collect();
        let groups = [group("ga", &["a1"]), group("gb", &["b1"])];
        assert_eq!(
            cross_group_correlation(&vectors, &groups).unwrap_err(),
            CorrelationError::DegenerateAll
        );
    }

    #[test]
    fn partition_violations_rejected() {
        let ids = ["a1", "b1"];
        let vectors: Vec<_> = (0..5)
            .map(|i| vector(i, &ids, vec![0.1 * i as f64, 0.2]))
            .collect();
        // Feature in two groups.
        let double = [group("ga", &["a1", "b1"]), group("gb", &["b1"])];
        assert!(matches!(
            cross_group_correlation(&vectors, &double),
            Err(CorrelationError::NotAPartition(_))
        ));
        // Feature missing from all groups.
        let missing = [group("ga", &["a1"]), group("gb", &[])];
        assert!(matches!(
            cross_group_correlation(&vectors, &missing),
            Err(CorrelationError::NotAPartition(_))
        ));
    }

    #[test]
    fn too_few_inputs_rejected() {
        let ids = ["a1", "b1"];
        let vectors: Vec<_> = (0..2)
            .map(|i| vector(i, &ids, vec![0.1, 0.2]))
            .collect();
        assert!(matches!(
            cross_group_correlation(&vectors, &[group("ga", &["a1"]), group("gb", &["b1"])]),
            Err(CorrelationError::InsufficientSamples { .. })
        ));
    }
}
