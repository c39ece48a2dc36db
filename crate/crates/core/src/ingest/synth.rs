//! Seeded synthetic datasets for desk-scale runs: per-user base patterns
//! with Gaussian jitter for legitimate sessions, and distribution-shifted
//! anomalies (shifted typing rhythms, re-routed mouse trajectories, novel
//! device/network/geo context).
//!
//! Ground-truth anomaly flags live in a separate [`GroundTruth`] value, not
//! on the session records, so labeling and training can never see them.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::contextual::{engineer_user_observations, GeoTable, LoginRow};
use super::mouse::trajectory_elements;
use super::{IngestError, Modality, SessionRecord};
use crate::seed::derive_seed;
use crate::similarity::{FeatureObservation, FeaturePayload};

/// Synthetic dataset shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthProfile {
    pub modality: Modality,
    pub users: usize,
    pub sessions_per_user: usize,
    /// Fraction of each user's sessions replaced by anomalies, in `[0, 1)`.
    pub anomaly_fraction: f64,
    pub seed: u64,
}

/// Which sessions are anomalous, kept apart from the records themselves.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    anomalous: BTreeSet<String>,
}

impl GroundTruth {
    pub fn is_anomalous(&self, session_id: &str) -> bool {
        self.anomalous.contains(session_id)
    }

    pub fn mark(&mut self, session_id: impl Into<String>) {
        self.anomalous.insert(session_id.into());
    }

    pub fn count(&self) -> usize {
        self.anomalous.len()
    }

    pub fn session_ids(&self) -> impl Iterator<Item = &String> {
        self.anomalous.iter()
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub records: Vec<SessionRecord>,
    pub truth: GroundTruth,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("user and session counts must be at least 1")]
    EmptyProfile,
    #[error("anomaly fraction must be in [0, 1), got {0}")]
    BadFraction(f64),
}

use thiserror::Error;

fn validate(profile: &SynthProfile) -> Result<(), SynthError> {
    if profile.users == 0 || profile.sessions_per_user == 0 {
        return Err(SynthError::EmptyProfile);
    }
    if !(0.0..1.0).contains(&profile.anomaly_fraction) {
        return Err(SynthError::BadFraction(profile.anomaly_fraction));
    }
    Ok(())
}

fn anomaly_positions(
    rng: &mut ChaCha20Rng,
    sessions: usize,
    fraction: f64,
) -> BTreeSet<usize> {
    let count = ((sessions as f64 * fraction).round() as usize).min(sessions);
    if count == 0 {
        return BTreeSet::new();
    }
    sample(rng, sessions, count).into_iter().collect()
}

/// Generate a seeded synthetic dataset for the profile's modality.
pub fn synth_generate(profile: &SynthProfile) -> Result<SynthDataset, SynthError> {
    validate(profile)?;
    Ok(match profile.modality {
        Modality::Keystroke => synth_keystroke(profile),
        Modality::Mouse => synth_mouse(profile),
        Modality::Contextual => synth_contextual(profile),
    })
}

fn user_rng(profile: &SynthProfile, user_idx: usize, label: &[u8]) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(
        profile.seed,
        &[label, &(user_idx as u64).to_le_bytes()],
    ))
}

const KEYSTROKE_COLUMNS: usize = 31;

fn synth_keystroke(profile: &SynthProfile) -> SynthDataset {
    let mut records = Vec::new();
    let mut truth = GroundTruth::default();
    let jitter = Normal::new(0.0, 0.01).expect("valid std");

    for u in 0..profile.users {
        let user_id = format!("u{u:03}");
        let mut rng = user_rng(profile, u, b"keystroke");

        // The user's habitual rhythm: channel means plus per-column offsets.
        let base = typing_base(&mut rng, 0.0);
        // The impostor types the same string with a visibly different
        // rhythm: slower means and fresh per-column structure.
        let shift = 0.12 + rng.gen_range(0.0..0.08);
        let attacker = typing_base(&mut rng, shift);

        let anomalies = anomaly_positions(&mut rng, profile.sessions_per_user, profile.anomaly_fraction);
        for s in 0..profile.sessions_per_user {
            let session_id = format!("{user_id}-s{s:03}");
            let pattern = if anomalies.contains(&s) { &attacker } else { &base };
            let timings: Vec<Vec<f64>> = pattern
                .iter()
                .map(|&mean| vec![(mean + jitter.sample(&mut rng)).max(0.005)])
                .collect();
            if anomalies.contains(&s) {
                truth.mark(session_id.clone());
            }
            records.push(SessionRecord {
                user_id: user_id.clone(),
                session_id,
                modality: Modality::Keystroke,
                observations: vec![FeatureObservation::new(
                    super::keystroke::KEYSTROKE_FEATURE,
                    FeaturePayload::Sequence(timings),
                )],
                wall_time: Some(s as i64),
            });
        }
    }
    SynthDataset { records, truth }
}

fn typing_base(rng: &mut ChaCha20Rng, shift: f64) -> Vec<f64> {
    let hold = 0.09 + rng.gen_range(-0.02..0.02) + shift;
    let dd = 0.25 + rng.gen_range(-0.05..0.05) + 2.0 * shift;
    let ud = 0.15 + rng.gen_range(-0.04..0.04) + 2.0 * shift;
    let mut base = Vec::with_capacity(KEYSTROKE_COLUMNS);
    for i in 0..KEYSTROKE_COLUMNS {
        let channel_mean = if i < 11 {
            hold
        } else if i < 21 {
            dd
        } else {
            ud
        };
        base.push((channel_mean + rng.gen_range(-0.015..0.015)).max(0.01));
    }
    base
}

const MOUSE_WAYPOINTS: usize = 6;
const MOUSE_POINTS: usize = 120;

fn mouse_waypoints(rng: &mut ChaCha20Rng) -> Vec<(f64, f64)> {
    (0..MOUSE_WAYPOINTS)
        .map(|_| (rng.gen_range(50.0..950.0), rng.gen_range(50.0..950.0)))
        .collect()
}

fn mouse_session(
    rng: &mut ChaCha20Rng,
    waypoints: &[(f64, f64)],
    speed: f64,
) -> Vec<(f64, f64, f64)> {
    let per_leg = MOUSE_POINTS / (waypoints.len() - 1);
    let mut events = Vec::with_capacity(MOUSE_POINTS);
    let mut t = 0.0;
    for leg in waypoints.windows(2) {
        let (x0, y0) = leg[0];
        let (x1, y1) = leg[1];
        let leg_len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt().max(1.0);
        let dt = leg_len / per_leg as f64 / speed;
        for step in 0..per_leg {
            let frac = step as f64 / per_leg as f64;
            let x = x0 + (x1 - x0) * frac + rng.gen_range(-3.0..3.0);
            let y = y0 + (y1 - y0) * frac + rng.gen_range(-3.0..3.0);
            t += dt * rng.gen_range(0.9..1.1);
            events.push((t, x.max(1.0), y.max(1.0)));
        }
    }
    events
}

fn synth_mouse(profile: &SynthProfile) -> SynthDataset {
    let mut records = Vec::new();
    let mut truth = GroundTruth::default();

    for u in 0..profile.users {
        let user_id = format!("u{u:03}");
        let mut rng = user_rng(profile, u, b"mouse");

        let waypoints = mouse_waypoints(&mut rng);
        let speed = rng.gen_range(120.0..280.0);
        // The intruder navigates different screen regions at a different
        // tempo.
        let foreign_waypoints = mouse_waypoints(&mut rng);
        let foreign_speed = speed * rng.gen_range(2.2..3.0);

        let anomalies = anomaly_positions(&mut rng, profile.sessions_per_user, profile.anomaly_fraction);
        for s in 0..profile.sessions_per_user {
            let session_id = format!("{user_id}-s{s:03}");
            let events = if anomalies.contains(&s) {
                truth.mark(session_id.clone());
                mouse_session(&mut rng, &foreign_waypoints, foreign_speed)
            } else {
                mouse_session(&mut rng, &waypoints, speed)
            };
            records.push(SessionRecord {
                user_id: user_id.clone(),
                session_id,
                modality: Modality::Mouse,
                observations: vec![FeatureObservation::new(
                    super::mouse::MOUSE_TRAJECTORY_FEATURE,
                    FeaturePayload::Sequence(trajectory_elements(&events)),
                )],
                wall_time: Some(s as i64),
            });
        }
    }
    SynthDataset { records, truth }
}

const UA_POOL: [&str; 4] = [
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/107.0.0.0 Safari/537.36",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15_7) AppleWebKit/605.1.15 (KHTML, like Gecko) Version/16.1 Safari/605.1.15",
    "Mozilla/5.0 (X11; Linux x86_64; rv:109.0) Gecko/20100101 Firefox/110.0",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/106.0.0.0 Safari/537.36 Edg/106.0.1370.52",
];

const ATTACKER_UAS: [&str; 3] = [
    "Mozilla/5.0 (X11; Linux i686) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/55.0.2883.87 Safari/537.36",
    "Mozilla/5.0 (Windows NT 6.1; rv:52.0) Gecko/20100101 Firefox/52.0",
    "python-requests/2.28.1",
];

const ATTACKER_VERSIONS: [&str; 3] = ["49.0", "55.0", "61.0"];
const FAR_PREFIXES: usize = 16;

/// Deterministic geo table covering every synthetic prefix: one "home"
/// prefix per user around Europe plus a shared pool of far-away prefixes
/// that anomalous logins originate from.
fn synth_geo_table(users: usize) -> GeoTable {
    let mut csv = String::from("ip_prefix,lat,lon,asn,country\n");
    let countries = ["DE", "FR", "GB", "NL", "SE", "IT"];
    let far_countries = ["AU", "NZ", "JP", "KR"];
    for u in 0..users {
        let lat = 42.0 + (u % 12) as f64;
        let lon = -4.0 + (u % 23) as f64;
        csv.push_str(&format!(
            "198.51.{u},{lat:.2},{lon:.2},AS{},{}\n",
            1000 + u,
            countries[u % countries.len()]
        ));
    }
    for j in 0..FAR_PREFIXES {
        let far_lat = -38.0 + (j % 10) as f64 * 1.7;
        let far_lon = 105.0 + (j % 16) as f64 * 3.1;
        csv.push_str(&format!(
            "66.77.{j},{far_lat:.2},{far_lon:.2},AS{},{}\n",
            9000 + j,
            far_countries[j % far_countries.len()]
        ));
    }
    GeoTable::from_reader(csv.as_bytes()).expect("generated table is well-formed")
}

fn synth_contextual(profile: &SynthProfile) -> SynthDataset {
    let geo = synth_geo_table(profile.users);
    let mut records = Vec::new();
    let mut truth = GroundTruth::default();

    for u in 0..profile.users {
        let user_id = format!("u{u:03}");
        let mut rng = user_rng(profile, u, b"contextual");

        let home_ips = [
            format!("198.51.{u}.{}", rng.gen_range(2..250)),
            format!("198.51.{u}.{}", rng.gen_range(2..250)),
        ];
        let ua = UA_POOL[u % UA_POOL.len()];
        let device = format!("laptop-{u:03}");
        let base_hour: f64 = rng.gen_range(0.0..24.0);
        let browser_version = 100.0 + (u % 8) as f64;
        let start = 1_700_000_000_i64 + (u as i64) * 977;

        let anomalies = anomaly_positions(&mut rng, profile.sessions_per_user, profile.anomaly_fraction);
        let mut logins = Vec::with_capacity(profile.sessions_per_user);
        for s in 0..profile.sessions_per_user {
            let day = start + (s as i64) * 86_400;
            let login = if anomalies.contains(&s) {
                // A fresh attacker identity per attempt: new host, new
                // prefix, new agent.
                let hour = (base_hour + 12.0 + rng.gen_range(-2.0..2.0)).rem_euclid(24.0);
                LoginRow {
                    user_id: user_id.clone(),
                    timestamp: day + (hour * 3600.0) as i64,
                    ip: format!(
                        "66.77.{}.{}",
                        rng.gen_range(0..FAR_PREFIXES),
                        rng.gen_range(2..250)
                    ),
                    user_agent: ATTACKER_UAS[rng.gen_range(0..ATTACKER_UAS.len())].to_string(),
                    device_type: format!("host-{:04x}", rng.gen_range(0u32..0xffff)),
                    browser_version: ATTACKER_VERSIONS[rng.gen_range(0..ATTACKER_VERSIONS.len())]
                        .to_string(),
                    os_version: "1.0".to_string(),
                }
            } else {
                let hour = (base_hour + rng.gen_range(-1.0..1.0)).rem_euclid(24.0);
                LoginRow {
                    user_id: user_id.clone(),
                    timestamp: day + (hour * 3600.0) as i64,
                    ip: home_ips[rng.gen_range(0..home_ips.len())].clone(),
                    user_agent: ua.to_string(),
                    device_type: device.clone(),
                    browser_version: format!("{browser_version:.1}"),
                    os_version: "12.5".to_string(),
                }
            };
            logins.push((login, anomalies.contains(&s)));
        }
        // Engineering assigns session ids by time order; daily spacing keeps
        // generation order and time order identical.
        let rows: Vec<LoginRow> = logins.iter().map(|(l, _)| l.clone()).collect();
        let engineered = engineer_user_observations(&rows, &geo);
        for (record, (_, is_anomaly)) in engineered.iter().zip(&logins) {
            if *is_anomaly {
                truth.mark(record.session_id.clone());
            }
        }
        records.extend(engineered);
    }
    SynthDataset { records, truth }
}

/// The synthetic contextual generator shares the real parser's geo table
/// machinery; expose it so end-to-end runs can resolve the same prefixes.
pub fn synth_contextual_geo_table(users: usize) -> GeoTable {
    synth_geo_table(users)
}

impl From<SynthError> for IngestError {
    fn from(e: SynthError) -> Self {
        IngestError::BadValue {
            line: 0,
            message: e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(modality: Modality, fraction: f64) -> SynthProfile {
        SynthProfile {
            modality,
            users: 4,
            sessions_per_user: 10,
            anomaly_fraction: fraction,
            seed: 7,
        }
    }

    #[test]
    fn zero_fraction_means_no_anomalies() {
        for modality in [Modality::Keystroke, Modality::Mouse, Modality::Contextual] {
            let data = synth_generate(&profile(modality, 0.0)).unwrap();
            assert_eq!(data.truth.count(), 0);
            assert_eq!(data.records.len(), 40);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = synth_generate(&profile(Modality::Keystroke, 0.1)).unwrap();
        let b = synth_generate(&profile(Modality::Keystroke, 0.1)).unwrap();
        assert_eq!(
            serde_json::to_string(&a.records).unwrap(),
            serde_json::to_string(&b.records).unwrap()
        );
        let ta: Vec<&String> = a.truth.session_ids().collect();
        let tb: Vec<&String> = b.truth.session_ids().collect();
        assert_eq!(ta, tb);
    }

    #[test]
    fn anomaly_count_is_exact() {
        let data = synth_generate(&SynthProfile {
            modality: Modality::Contextual,
            users: 20,
            sessions_per_user: 30,
            anomaly_fraction: 0.1,
            seed: 3,
        })
        .unwrap();
        assert_eq!(data.truth.count(), 60);
        assert_eq!(data.records.len(), 600);
    }

    #[test]
    fn bad_profiles_rejected() {
        let mut p = profile(Modality::Mouse, 0.5);
        p.users = 0;
        assert!(matches!(synth_generate(&p), Err(SynthError::EmptyProfile)));
        let mut p = profile(Modality::Mouse, 1.0);
        p.anomaly_fraction = 1.0;
        assert!(matches!(synth_generate(&p), Err(SynthError::BadFraction(_))));
    }

    #[test]
    fn keystroke_anomalies_are_shifted() {
        let data = synth_generate(&profile(Modality::Keystroke, 0.2)).unwrap();
        // Mean timing of anomalous sessions is visibly above legitimate ones
        // for the same user.
        let mean_of = |r: &SessionRecord| match &r.observations[0].payload {
            FeaturePayload::Sequence(seq) => {
                seq.iter().map(|e| e[0]).sum::<f64>() / seq.len() as f64
            }
            _ => unreachable!(),
        };
        let user = "u000";
        let (mut legit, mut anom) = (Vec::new(), Vec::new());
        for r in data.records.iter().filter(|r| r.user_id == user) {
            if data.truth.is_anomalous(&r.session_id) {
                anom.push(mean_of(r));
            } else {
                legit.push(mean_of(r));
            }
        }
        assert!(!anom.is_empty());
        let legit_mean = legit.iter().sum::<f64>() / legit.len() as f64;
        let anom_mean = anom.iter().sum::<f64>() / anom.len() as f64;
        assert!(anom_mean > legit_mean + 0.05, "{anom_mean} vs {legit_mean}");
    }

    #[test]
    fn contextual_truth_never_in_records() {
        // Type-level separation: SessionRecord carries no anomaly flag, so
        // the only way to learn the truth is the GroundTruth value itself.
        let data = synth_generate(&profile(Modality::Contextual, 0.3)).unwrap();
        let json = serde_json::to_string(&data.records).unwrap();
        assert!(!json.contains("anomal"));
    }
}
