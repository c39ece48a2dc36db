//! Simulation library for risk-based authentication over federated clients.
//!
//! The pipeline turns raw per-session feature observations into normalized
//! similarity vectors against per-user references, derives risk pseudo-labels
//! by clustering, trains per-user logistic risk models, and aggregates model
//! updates round-by-round with Gaussian noise and MAC-authenticated,
//! replay-protected submissions.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`similarity`] — per-feature similarity scoring (binary match, cosine,
//!   DTW/FastDTW, barycenter centroids, haversine, Jaccard, version drift)
//!   and similarity-vector assembly.
//! - [`risk`] — KMeans pseudo-labeling with inverse centroid-norm ranking.
//! - [`trainer`] — class-balanced, L2-regularized multinomial logistic
//!   regression over similarity vectors.
//! - [`federation`] — DP noising, authenticated updates, FedAvg rounds and
//!   privacy-budget accounting.
//! - [`ingest`] — dataset parsers, exclusion rules, scaling and the seeded
//!   synthetic generator.
//! - [`eval`] — classification metrics, noise sweeps and report emission.
//! - [`pipeline`] — end-to-end orchestration per modality.

pub mod eval;
pub mod federation;
pub mod ingest;
pub mod pipeline;
pub mod risk;
pub mod seed;
pub mod similarity;
pub mod trainer;
