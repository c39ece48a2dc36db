//! Per-user risk models: class-balanced, L2-regularized multinomial logistic
//! regression over similarity vectors, trained by full-batch gradient descent
//! with backtracking line search.
//!
//! Full-batch descent keeps training deterministic: same samples, same
//! config, same parameters out. The objective is the weighted mean
//! cross-entropy plus `lambda/2 * ||W||^2`; the bias is not penalized.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::risk::RiskLevel;
use crate::similarity::SimilarityVector;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("training needs at least 2 distinct labels")]
    SingleClassData,
    #[error("sample dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("vector features do not match the model's features")]
    FeatureMismatch,
    #[error("loss became non-finite during training")]
    NonFiniteLoss,
    #[error("need at least 2 samples to split, got {0}")]
    TooFewSamples(usize),
    #[error("split ratio must be in (0, 1), got {0}")]
    InvalidSplitRatio(f64),
    #[error("no samples provided")]
    EmptySamples,
    #[error("malformed model bytes: {0}")]
    MalformedModel(String),
}

/// Canonical class order shared by every model and the federation layout.
pub const CANONICAL_CLASSES: [RiskLevel; 3] =
    [RiskLevel::High, RiskLevel::Medium, RiskLevel::Low];

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Gradient-descent iterations. Zero leaves parameters at their
    /// initialization (useful for probing the untrained model).
    pub max_iter: usize,
    pub reg_lambda: f64,
    /// Initial line-search step.
    pub learning_rate: f64,
    pub class_balanced: bool,
    /// Explicit per-class weights; overrides the balanced heuristic.
    pub class_weights: Option<BTreeMap<RiskLevel, f64>>,
    /// Relative loss-change convergence threshold.
    pub convergence_tol: f64,
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iter: 200,
            reg_lambda: 1.0,
            learning_rate: 1.0,
            class_balanced: true,
            class_weights: None,
            convergence_tol: 1e-10,
            split_ratio: 0.7,
            seed: 0,
        }
    }
}

/// A trained multinomial logistic risk model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskModel {
    pub classes: Vec<RiskLevel>,
    pub feature_ids: Vec<String>,
    /// classes × features.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub reg_lambda: f64,
    pub trained_on: usize,
}

/// The differentiable training objective, exposed so tests can check the
/// analytic gradient against finite differences at arbitrary parameters.
pub struct Objective<'a> {
    xs: &'a [Vec<f64>],
    /// Class index per sample.
    ys: &'a [usize],
    sample_weights: Vec<f64>,
    weight_total: f64,
    lambda: f64,
    n_classes: usize,
    n_features: usize,
}

fn softmax_into(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        total += *z;
    }
    for z in logits.iter_mut() {
        *z /= total;
    }
}

impl<'a> Objective<'a> {
    pub fn new(
        xs: &'a [Vec<f64>],
        ys: &'a [usize],
        sample_weights: Vec<f64>,
        lambda: f64,
        n_classes: usize,
    ) -> Self {
        let weight_total: f64 = sample_weights.iter().sum();
        Objective {
            xs,
            ys,
            sample_weights,
            weight_total,
            lambda,
            n_classes,
            n_features: xs.first().map_or(0, Vec::len),
        }
    }

    fn logits(&self, weights: &[Vec<f64>], bias: &[f64], x: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                bias[c]
                    + weights[c]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Weighted mean cross-entropy plus the ridge penalty on weights.
    pub fn loss(&self, weights: &[Vec<f64>], bias: &[f64]) -> f64 {
        let mut total = 0.0;
        for ((x, &y), &sw) in self.xs.iter().zip(self.ys).zip(&self.sample_weights) {
            let logits = self.logits(weights, bias, x);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
            total += sw * (log_sum - logits[y]);
        }
        let penalty: f64 = weights
            .iter()
            .flat_map(|row| row.iter().map(|w| w * w))
            .sum();
        total / self.weight_total + self.lambda / 2.0 * penalty
    }

    /// Analytic gradient of [`Self::loss`].
    pub fn gradient(&self, weights: &[Vec<f64>], bias: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut grad_w = vec![vec![0.0; self.n_features]; self.n_classes];
        let mut grad_b = vec![0.0; self.n_classes];
        for ((x, &y), &sw) in self.xs.iter().zip(self.ys).zip(&self.sample_weights) {
            let mut probs = self.logits(weights, bias, x);
            softmax_into(&mut probs);
            for c in 0..self.n_classes {
                let residual = sw * (probs[c] - if c == y { 1.0 } else { 0.0 });
                grad_b[c] += residual;
                for (g, v) in grad_w[c].iter_mut().zip(x) {
                    *g += residual * v;
                }
            }
        }
        for c in 0..self.n_classes {
            grad_b[c] /= self.weight_total;
            for (g, w) in grad_w[c].iter_mut().zip(&weights[c]) {
                *g = *g / self.weight_total + self.lambda * w;
            }
        }
        (grad_w, grad_b)
    }
}

/// Per-class sample weights according to config: explicit map, the balanced
/// heuristic `n / (|classes| * n_c)`, or uniform 1.
fn class_weight_table(
    cfg: &TrainConfig,
    classes: &[RiskLevel],
    counts: &BTreeMap<RiskLevel, usize>,
    n: usize,
) -> BTreeMap<RiskLevel, f64> {
    if let Some(explicit) = &cfg.class_weights {
        return classes
            .iter()
            .map(|c| (*c, explicit.get(c).copied().unwrap_or(1.0)))
            .collect();
    }
    if cfg.class_balanced {
        classes
            .iter()
            .map(|c| {
                let n_c = counts.get(c).copied().unwrap_or(0).max(1);
                (*c, n as f64 / (classes.len() as f64 * n_c as f64))
            })
            .collect()
    } else {
        classes.iter().map(|c| (*c, 1.0)).collect()
    }
}

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Train starting from explicit initial parameters (federation warm starts
/// from the current global model; `None` starts at zero).
pub fn train_from(
    samples: &[(SimilarityVector, RiskLevel)],
    cfg: &TrainConfig,
    init: Option<(&[Vec<f64>], &[f64])>,
) -> Result<RiskModel, TrainError> {
    let (ref first, _) = samples.first().ok_or(TrainError::EmptySamples)?;
    let n_features = first.scores.len();
    let feature_ids = first.feature_ids.clone();
    for (v, _) in samples {
        if v.scores.len() != n_features {
            return Err(TrainError::DimensionMismatch {
                left: n_features,
                right: v.scores.len(),
            });
        }
        if v.feature_ids != feature_ids {
            return Err(TrainError::FeatureMismatch);
        }
    }

    let mut counts: BTreeMap<RiskLevel, usize> = BTreeMap::new();
    for (_, label) in samples {
        *counts.entry(*label).or_insert(0) += 1;
    }
    if counts.len() < 2 {
        return Err(TrainError::SingleClassData);
    }
    let classes: Vec<RiskLevel> = CANONICAL_CLASSES
        .iter()
        .copied()
        .filter(|c| counts.contains_key(c))
        .collect();
    let class_index: BTreeMap<RiskLevel, usize> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, i))
        .collect();

    let xs: Vec<Vec<f64>> = samples.iter().map(|(v, _)| v.scores.clone()).collect();
    let ys: Vec<usize> = samples.iter().map(|(_, l)| class_index[l]).collect();
    let table = class_weight_table(cfg, &classes, &counts, samples.len());
    let sample_weights: Vec<f64> = samples.iter().map(|(_, l)| table[l]).collect();

    let objective = Objective::new(&xs, &ys, sample_weights, cfg.reg_lambda, classes.len());

    let (mut weights, mut bias) = match init {
        Some((w, b)) => (w.to_vec(), b.to_vec()),
        None => (vec![vec![0.0; n_features]; classes.len()], vec![0.0; classes.len()]),
    };

    let mut loss = objective.loss(&weights, &bias);
    if !loss.is_finite() {
        return Err(TrainError::NonFiniteLoss);
    }

    for _ in 0..cfg.max_iter {
        let (grad_w, grad_b) = objective.gradient(&weights, &bias);
        let grad_norm_sq: f64 = grad_w
            .iter()
            .flat_map(|row| row.iter().map(|g| g * g))
            .chain(grad_b.iter().map(|g| g * g))
            .sum();
        if grad_norm_sq.sqrt() < 1e-12 {
            break;
        }

        let mut step = cfg.learning_rate;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let cand_w: Vec<Vec<f64>> = weights
                .iter()
                .zip(&grad_w)
                .map(|(row, grow)| row.iter().zip(grow).map(|(w, g)| w - step * g).collect())
                .collect();
            let cand_b: Vec<f64> = bias
                .iter()
                .zip(&grad_b)
                .map(|(b, g)| b - step * g)
                .collect();
            let cand_loss = objective.loss(&cand_w, &cand_b);
            if !cand_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss);
            }
            if cand_loss <= loss - ARMIJO_C * step * grad_norm_sq {
                weights = cand_w;
                bias = cand_b;
                let improvement = loss - cand_loss;
                loss = cand_loss;
                accepted = true;
                if improvement <= cfg.convergence_tol * loss.abs().max(1.0) {
                    return Ok(finish(classes, feature_ids, weights, bias, cfg, samples.len())?);
                }
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            break;
        }
    }
    finish(classes, feature_ids, weights, bias, cfg, samples.len())
}

fn finish(
    classes: Vec<RiskLevel>,
    feature_ids: Vec<String>,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    cfg: &TrainConfig,
    trained_on: usize,
) -> Result<RiskModel, TrainError> {
    let finite = weights
        .iter()
        .flat_map(|r| r.iter())
        .chain(bias.iter())
        .all(|v| v.is_finite());
    if !finite {
        return Err(TrainError::NonFiniteLoss);
    }
    Ok(RiskModel {
        classes,
        feature_ids,
        weights,
        bias,
        reg_lambda: cfg.reg_lambda,
        trained_on,
    })
}

/// Train from zero-initialized parameters.
pub fn train(
    samples: &[(SimilarityVector, RiskLevel)],
    cfg: &TrainConfig,
) -> Result<RiskModel, TrainError> {
    train_from(samples, cfg, None)
}

/// Softmax class probabilities for one similarity vector.
pub fn predict_proba(model: &RiskModel, vector: &SimilarityVector) -> Result<Vec<f64>, TrainError> {
    if vector.feature_ids != model.feature_ids {
        return Err(TrainError::FeatureMismatch);
    }
    Ok(predict_proba_scores(model, &vector.scores))
}

/// Softmax probabilities over raw scores laid out in the model's feature
/// order.
pub fn predict_proba_scores(model: &RiskModel, scores: &[f64]) -> Vec<f64> {
    let mut logits: Vec<f64> = model
        .weights
        .iter()
        .zip(&model.bias)
        .map(|(row, b)| b + row.iter().zip(scores).map(|(w, v)| w * v).sum::<f64>())
        .collect();
    softmax_into(&mut logits);
    logits
}

/// Most probable risk level; exact ties break toward the stricter level.
pub fn classify(model: &RiskModel, vector: &SimilarityVector) -> Result<RiskLevel, TrainError> {
    let probs = predict_proba(model, vector)?;
    Ok(argmax_risk(&model.classes, &probs))
}

pub fn argmax_risk(classes: &[RiskLevel], probs: &[f64]) -> RiskLevel {
    let mut best = classes[0];
    let mut best_p = probs[0];
    for (c, &p) in classes.iter().zip(probs).skip(1) {
        if p > best_p || (p == best_p && c.severity() > best.severity()) {
            best = *c;
            best_p = p;
        }
    }
    best
}

/// Seeded shuffle-then-split. The first part holds `ceil(ratio * n)` samples.
pub fn split<T: Clone>(samples: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), TrainError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(TrainError::InvalidSplitRatio(ratio));
    }
    if samples.len() < 2 {
        return Err(TrainError::TooFewSamples(samples.len()));
    }
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    let n_train = (ratio * samples.len() as f64).ceil() as usize;
    let train = indices[..n_train].iter().map(|&i| samples[i].clone()).collect();
    let test = indices[n_train..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, test))
}

impl RiskModel {
    /// Canonical byte layout: class codes, length-prefixed feature ids,
    /// row-major weights, bias, lambda — all little-endian. Byte-identical
    /// across runs for identical models, which is what MAC verification of
    /// stored models relies on.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend((self.classes.len() as u64).to_le_bytes());
        for class in &self.classes {
            out.push(class.code());
        }
        out.extend((self.feature_ids.len() as u64).to_le_bytes());
        for id in &self.feature_ids {
            let bytes = id.as_bytes();
            out.extend((bytes.len() as u64).to_le_bytes());
            out.extend(bytes);
        }
        for row in &self.weights {
            for w in row {
                out.extend(w.to_le_bytes());
            }
        }
        for b in &self.bias {
            out.extend(b.to_le_bytes());
        }
        out.extend(self.reg_lambda.to_le_bytes());
        out
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<RiskModel, TrainError> {
        let mut cursor = 0usize;
        let err = |msg: &str| TrainError::MalformedModel(msg.to_string());
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8], TrainError> {
            let end = *cursor + n;
            if end > bytes.len() {
                return Err(TrainError::MalformedModel("truncated".into()));
            }
            let slice = &bytes[*cursor..end];
            *cursor = end;
            Ok(slice)
        };
        let read_u64 = |cursor: &mut usize| -> Result<u64, TrainError> {
            Ok(u64::from_le_bytes(take(cursor, 8)?.try_into().unwrap()))
        };
        let read_f64 = |cursor: &mut usize| -> Result<f64, TrainError> {
            Ok(f64::from_le_bytes(take(cursor, 8)?.try_into().unwrap()))
        };

        let n_classes = read_u64(&mut cursor)? as usize;
        if n_classes == 0 || n_classes > 3 {
            return Err(err("class count out of range"));
        }
        let mut classes = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            let code = take(&mut cursor, 1)?[0];
            classes.push(RiskLevel::from_code(code).ok_or_else(|| err("bad class code"))?);
        }
        let n_features = read_u64(&mut cursor)? as usize;
        let mut feature_ids = Vec::with_capacity(n_features);
        for _ in 0..n_features {
            let len = read_u64(&mut cursor)? as usize;
            let raw = take(&mut cursor, len)?;
            feature_ids.push(
                String::from_utf8(raw.to_vec()).map_err(|_| err("feature id not UTF-8"))?,
            );
        }
        let mut weights = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            let mut row = Vec::with_capacity(n_features);
            for _ in 0..n_features {
                row.push(read_f64(&mut cursor)?);
            }
            weights.push(row);
        }
        let mut bias = Vec::with_capacity(n_classes);
        for _ in 0..n_classes {
            bias.push(read_f64(&mut cursor)?);
        }
        let reg_lambda = read_f64(&mut cursor)?;
        if cursor != bytes.len() {
            return Err(err("trailing bytes"));
        }
        Ok(RiskModel {
            classes,
            feature_ids,
            weights,
            bias,
            reg_lambda,
            trained_on: 0,
        })
    }
}
