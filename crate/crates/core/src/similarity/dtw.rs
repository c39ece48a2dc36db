//! Dynamic time warping over multivariate sequences.
//!
//! `dtw_exact` fills the full accumulated-cost matrix
//! `D(i,j) = C(i,j) + min(D(i-1,j), D(i,j-1), D(i-1,j-1))` with Euclidean
//! element cost. `dtw_fast` is the multilevel approximation: coarsen both
//! sequences, solve recursively, then re-solve at full resolution inside a
//! radius-expanded corridor around the projected path. Because the corridor
//! restricts the search to a subset of valid warping paths, the approximate
//! cost is never below the exact one.
//!
//! `dba_centroid` computes a barycenter sequence by iteratively aligning the
//! set against the current centroid and averaging the elements mapped onto
//! each centroid slot, keeping an update only when it does not worsen the
//! mean distance to the set.

use thiserror::Error;

/// A time-ordered sequence of equally sized real vectors.
pub type Sequence = Vec<Vec<f64>>;

#[derive(Debug, Error, PartialEq)]
pub enum DtwError {
    #[error("sequence is empty")]
    EmptySequence,
    #[error("element dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("radius must be at least 1")]
    ZeroRadius,
    #[error("reference set is empty")]
    EmptyReferenceSet,
}

fn element_dim(seq: &[Vec<f64>]) -> Result<usize, DtwError> {
    let first = seq.first().ok_or(DtwError::EmptySequence)?;
    let dim = first.len();
    for elem in seq {
        if elem.len() != dim {
            return Err(DtwError::DimensionMismatch {
                left: dim,
                right: elem.len(),
            });
        }
    }
    Ok(dim)
}

fn check_pair(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(), DtwError> {
    let da = element_dim(a)?;
    let db = element_dim(b)?;
    if da != db {
        return Err(DtwError::DimensionMismatch { left: da, right: db });
    }
    Ok(())
}

fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Per-row column window `[lo, hi]` (inclusive) restricting the cost matrix.
struct Window {
    lo: Vec<usize>,
    hi: Vec<usize>,
}

impl Window {
    fn full(rows: usize, cols: usize) -> Self {
        Window {
            lo: vec![0; rows],
            hi: vec![cols - 1; rows],
        }
    }
}

/// Solve DTW restricted to `window`, returning the cost and one optimal path
/// of matrix cells from `(0, 0)` to `(m-1, n-1)`.
fn dtw_windowed(a: &[Vec<f64>], b: &[Vec<f64>], window: &Window) -> (f64, Vec<(usize, usize)>) {
    let m = a.len();
    let n = b.len();
    let mut acc = vec![vec![f64::INFINITY; n]; m];
    for i in 0..m {
        for j in window.lo[i]..=window.hi[i].min(n - 1) {
            let cost = euclidean(&a[i], &b[j]);
            let best_prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 {
                    best = best.min(acc[i - 1][j]);
                }
                if j > 0 {
                    best = best.min(acc[i][j - 1]);
                }
                if i > 0 && j > 0 {
                    best = best.min(acc[i - 1][j - 1]);
                }
                best
            };
            acc[i][j] = cost + best_prev;
        }
    }

    let mut path = Vec::with_capacity(m + n);
    let (mut i, mut j) = (m - 1, n - 1);
    path.push((i, j));
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 {
            acc[i - 1][j - 1]
        } else {
            f64::INFINITY
        };
        let up = if i > 0 { acc[i - 1][j] } else { f64::INFINITY };
        let left = if j > 0 { acc[i][j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    (acc[m - 1][n - 1], path)
}

/// Exact DTW distance between `a` and `b` under Euclidean element cost.
pub fn dtw_exact(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, DtwError> {
    check_pair(a, b)?;
    Ok(dtw_windowed(a, b, &Window::full(a.len(), b.len())).0)
}

/// Exact DTW with the optimal alignment path.
pub fn dtw_exact_with_path(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
) -> Result<(f64, Vec<(usize, usize)>), DtwError> {
    check_pair(a, b)?;
    Ok(dtw_windowed(a, b, &Window::full(a.len(), b.len())))
}

/// Halve the resolution by averaging adjacent element pairs; an odd trailing
/// element is kept as its own coarse point.
fn coarsen(seq: &[Vec<f64>]) -> Sequence {
    let dim = seq[0].len();
    seq.chunks(2)
        .map(|chunk| {
            let mut mean = vec![0.0; dim];
            for elem in chunk {
                for (m, v) in mean.iter_mut().zip(elem) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= chunk.len() as f64;
            }
            mean
        })
        .collect()
}

/// Expand the coarse path into a full-resolution corridor, widened by
/// `radius` cells in every direction.
fn project_window(
    coarse_path: &[(usize, usize)],
    rows: usize,
    cols: usize,
    radius: usize,
) -> Window {
    let mut lo = vec![usize::MAX; rows];
    let mut hi = vec![0usize; rows];
    let mut mark = |i: usize, j: usize| {
        if i < rows {
            let j = j.min(cols - 1);
            lo[i] = lo[i].min(j);
            hi[i] = hi[i].max(j);
        }
    };
    for &(ci, cj) in coarse_path {
        for di in 0..2 {
            for dj in 0..2 {
                mark(2 * ci + di, 2 * cj + dj);
            }
        }
    }
    // Rows beyond the projected blocks (odd-length tails) borrow the last
    // covered row so the corridor always reaches the final cell.
    let mut last = (0usize, cols - 1);
    for i in 0..rows {
        if lo[i] > hi[i] {
            lo[i] = last.0;
            hi[i] = last.1;
        } else {
            last = (lo[i], hi[i]);
        }
    }
    let mut wlo = vec![usize::MAX; rows];
    let mut whi = vec![0usize; rows];
    for i in 0..rows {
        let row_lo = i.saturating_sub(radius);
        let row_hi = (i + radius).min(rows - 1);
        let mut min_j = usize::MAX;
        let mut max_j = 0usize;
        for r in row_lo..=row_hi {
            min_j = min_j.min(lo[r]);
            max_j = max_j.max(hi[r]);
        }
        wlo[i] = min_j.saturating_sub(radius);
        whi[i] = (max_j + radius).min(cols - 1);
    }
    Window { lo: wlo, hi: whi }
}

fn dtw_fast_inner(a: &[Vec<f64>], b: &[Vec<f64>], radius: usize) -> (f64, Vec<(usize, usize)>) {
    let base = 2 * radius + 2;
    if a.len() <= base || b.len() <= base {
        return dtw_windowed(a, b, &Window::full(a.len(), b.len()));
    }
    let coarse_a = coarsen(a);
    let coarse_b = coarsen(b);
    let (_, coarse_path) = dtw_fast_inner(&coarse_a, &coarse_b, radius);
    let window = project_window(&coarse_path, a.len(), b.len(), radius);
    dtw_windowed(a, b, &window)
}

/// FastDTW approximation with locality `radius`. Equals `dtw_exact` whenever
/// either sequence is at or below the base-case length `2 * radius + 2`.
pub fn dtw_fast(a: &[Vec<f64>], b: &[Vec<f64>], radius: usize) -> Result<f64, DtwError> {
    if radius == 0 {
        return Err(DtwError::ZeroRadius);
    }
    check_pair(a, b)?;
    Ok(dtw_fast_inner(a, b, radius).0)
}

/// Mean exact DTW distance from `center` to every sequence in `set`.
pub fn mean_dtw(center: &[Vec<f64>], set: &[Sequence]) -> Result<f64, DtwError> {
    if set.is_empty() {
        return Err(DtwError::EmptyReferenceSet);
    }
    let mut total = 0.0;
    for seq in set {
        total += dtw_exact(center, seq)?;
    }
    Ok(total / set.len() as f64)
}

/// Barycenter averaging: seed with the medoid, then repeatedly average the
/// elements aligned onto each centroid slot. Returns the centroid and the
/// mean-DTW objective after the seed and after each accepted iteration; the
/// trace is non-increasing because worsening updates are discarded.
pub fn dba_centroid_trace(
    sequences: &[Sequence],
    iterations: usize,
) -> Result<(Sequence, Vec<f64>), DtwError> {
    if sequences.is_empty() {
        return Err(DtwError::EmptyReferenceSet);
    }
    let dim = element_dim(&sequences[0])?;
    for seq in sequences {
        let d = element_dim(seq)?;
        if d != dim {
            return Err(DtwError::DimensionMismatch { left: dim, right: d });
        }
    }

    // Medoid seed: the member with the smallest mean distance to the set.
    let mut best_idx = 0;
    let mut best_obj = f64::INFINITY;
    for (idx, candidate) in sequences.iter().enumerate() {
        let obj = mean_dtw(candidate, sequences)?;
        if obj < best_obj {
            best_obj = obj;
            best_idx = idx;
        }
    }
    let mut centroid = sequences[best_idx].clone();
    let mut trace = vec![best_obj];

    for _ in 0..iterations {
        let mut sums = vec![vec![0.0; dim]; centroid.len()];
        let mut counts = vec![0usize; centroid.len()];
        for seq in sequences {
            let (_, path) = dtw_exact_with_path(&centroid, seq)?;
            for (ci, sj) in path {
                for (acc, v) in sums[ci].iter_mut().zip(&seq[sj]) {
                    *acc += v;
                }
                counts[ci] += 1;
            }
        }
        let candidate: Sequence = sums
            .into_iter()
            .zip(&counts)
            .map(|(sum, &count)| sum.into_iter().map(|v| v / count as f64).collect())
            .collect();
        let obj = mean_dtw(&candidate, sequences)?;
        if obj <= best_obj {
            let converged = obj == best_obj && candidate == centroid;
            best_obj = obj;
            centroid = candidate;
            trace.push(obj);
            if converged {
                break;
            }
        } else {
            break;
        }
    }
    Ok((centroid, trace))
}

/// Barycenter sequence minimizing (locally) the mean DTW distance to `sequences`.
pub fn dba_centroid(sequences: &[Sequence], iterations: usize) -> Result<Sequence, DtwError> {
    dba_centroid_trace(sequences, iterations).map(|(centroid, _)| centroid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(values: &[f64]) -> Sequence {
        values.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn self_distance_is_zero() {
        let s = scalar(&[1.0, 2.0, 3.0, 2.0]);
        assert_eq!(dtw_exact(&s, &s).unwrap(), 0.0);
        assert_eq!(dtw_fast(&s, &s, 2).unwrap(), 0.0);
    }

    #[test]
    fn single_cell_cost() {
        assert_eq!(dtw_exact(&scalar(&[1.0]), &scalar(&[2.0])).unwrap(), 1.0);
    }

    #[test]
    fn warped_insertion_aligns_free() {
        // [1,2,3] vs [1,2,2,3]: the duplicate 2 aligns at zero cost.
        let a = scalar(&[1.0, 2.0, 3.0]);
        let b = scalar(&[1.0, 2.0, 2.0, 3.0]);
        assert_eq!(dtw_exact(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn symmetric() {
        let a = scalar(&[0.0, 1.0, 4.0, 2.0]);
        let b = scalar(&[1.0, 3.0, 2.0]);
        assert_eq!(dtw_exact(&a, &b).unwrap(), dtw_exact(&b, &a).unwrap());
    }

    #[test]
    fn empty_sequence_rejected() {
        assert_eq!(
            dtw_exact(&scalar(&[]), &scalar(&[1.0])),
            Err(DtwError::EmptySequence)
        );
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let a = vec![vec![1.0, 2.0]];
        let b = vec![vec![1.0]];
        assert!(matches!(
            dtw_exact(&a, &b),
            Err(DtwError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fast_matches_exact_below_base_case() {
        // radius 3 → base case length 8.
        let a = scalar(&[1.0, 5.0, 2.0, 8.0, 3.0, 1.0, 4.0]);
        let b = scalar(&[2.0, 4.0, 1.0, 7.0, 2.0, 2.0]);
        assert_eq!(
            dtw_fast(&a, &b, 3).unwrap(),
            dtw_exact(&a, &b).unwrap()
        );
    }

    #[test]
    fn fast_never_below_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a: Sequence = (0..60).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
            let b: Sequence = (0..60).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
            let exact = dtw_exact(&a, &b).unwrap();
            let fast = dtw_fast(&a, &b, 4).unwrap();
            assert!(fast >= exact - 1e-9, "fast {fast} below exact {exact}");
        }
    }

    #[test]
    fn zero_radius_rejected() {
        let s = scalar(&[1.0, 2.0]);
        assert_eq!(dtw_fast(&s, &s, 0), Err(DtwError::ZeroRadius));
    }

    #[test]
    fn dba_singleton_returns_member() {
        let s = scalar(&[1.0, 2.0, 3.0]);
        let centroid = dba_centroid(&[s.clone()], 5).unwrap();
        assert_eq!(centroid, s);
    }

    #[test]
    fn dba_identical_members() {
        let s = scalar(&[0.5, 0.7, 0.9]);
        let set = vec![s.clone(), s.clone(), s.clone()];
        let centroid = dba_centroid(&set, 5).unwrap();
        assert_eq!(centroid, s);
        assert_eq!(mean_dtw(&centroid, &set).unwrap(), 0.0);
    }

    #[test]
    fn dba_two_constant_sequences() {
        let set = vec![scalar(&[0.0, 0.0, 0.0]), scalar(&[2.0, 2.0, 2.0])];
        let (centroid, trace) = dba_centroid_trace(&set, 10).unwrap();
        for elem in &centroid {
            assert!(elem[0] >= 0.0 && elem[0] <= 2.0);
        }
        let seed_obj = mean_dtw(&set[0], &set).unwrap();
        assert!(mean_dtw(&centroid, &set).unwrap() <= seed_obj);
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }

    #[test]
    fn dba_objective_monotone_on_noisy_set() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(3);
        let set: Vec<Sequence> = (0..6)
            .map(|_| {
                (0..20)
                    .map(|i| vec![(i as f64 * 0.3).sin() + rng.gen_range(-0.2..0.2)])
                    .collect()
            })
            .collect();
        let (_, trace) = dba_centroid_trace(&set, 10).unwrap();
        assert!(trace.len() >= 2, "expected at least one accepted iteration");
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
    }
}
