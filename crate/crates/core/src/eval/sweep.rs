//! Noise sweeps: re-run the full pipeline across a sigma grid with
//! decorrelated noise seeds and record metrics plus the per-sigma budget.

use serde::Serialize;
use thiserror::Error;

use super::MetricsReport;
use crate::federation::{epsilon_of_sigma, DpConfig};
use crate::pipeline::{run_pipeline, IngestedDataset, PipelineConfig, PipelineError};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sigma list must not be empty")]
    EmptySigmas,
    #[error("sigma values must be strictly increasing (offender: {0})")]
    NotStrictlyIncreasing(f64),
    #[error("sigma must be nonnegative, got {0}")]
    NegativeSigma(f64),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub sigma: f64,
    /// Closed-form single-release budget; infinite at sigma = 0.
    pub epsilon: f64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub modality: String,
    pub points: Vec<SweepPoint>,
}

pub fn validate_sigmas(sigmas: &[f64]) -> Result<(), SweepError> {
    if sigmas.is_empty() {
        return Err(SweepError::EmptySigmas);
    }
    for (i, &sigma) in sigmas.iter().enumerate() {
        if sigma < 0.0 {
            return Err(SweepError::NegativeSigma(sigma));
        }
        if i > 0 && sigma <= sigmas[i - 1] {
            return Err(SweepError::NotStrictlyIncreasing(sigma));
        }
    }
    Ok(())
}

/// Run the pipeline once per sigma. Runs share every seed except the noise
/// seed, which is derived from the base seed and the sigma's index so sweep
/// points are independent yet reproducible.
pub fn dp_sweep(
    data: &IngestedDataset,
    base_cfg: &PipelineConfig,
    sigmas: &[f64],
) -> Result<SweepResult, SweepError> {
    validate_sigmas(sigmas)?;
    let mut points = Vec::with_capacity(sigmas.len());
    for (index, &sigma) in sigmas.iter().enumerate() {
        let mut cfg = base_cfg.clone();
        cfg.federation.dp.sigma = sigma;
        cfg.federation.dp.seed = derive_seed(
            base_cfg.federation.dp.seed,
            &[b"sweep", &(index as u64).to_le_bytes()],
        );
        let outcome = run_pipeline(data, &cfg)?;
        let epsilon = if sigma == 0.0 {
            f64::INFINITY
        } else {
            epsilon_of_sigma(&DpConfig {
                sigma,
                ..cfg.federation.dp.clone()
            })
            .expect("positive sigma")
        };
        points.push(SweepPoint {
            sigma,
            epsilon,
            metrics: outcome.metrics,
        });
    }
    Ok(SweepResult {
        modality: base_cfg.modality.as_str().to_string(),
        points,
    })
}
