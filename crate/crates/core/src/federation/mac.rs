//! Authenticated model updates: HMAC-SHA256 tags over a canonical byte
//! serialization, verified with constant-time comparison, round matching,
//! replay tracking and timestamp freshness.
//!
//! Canonical MAC input: `u64` delta length, little-endian `f64` delta
//! coordinates, `u64` timestamp, length-prefixed UTF-8 user id, `u64` round.
//! The layout is fixed so tags are reproducible across implementations.

use std::collections::{BTreeMap, BTreeSet};

use hmac::{Hmac, Mac};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

pub const KEY_LEN: usize = 32;
pub const TAG_LEN: usize = 32;

pub type MacKey = [u8; KEY_LEN];

#[derive(Debug, Error, PartialEq)]
pub enum MacError {
    #[error("no key registered for user {0}")]
    MissingKey(String),
    #[error("delta contains non-finite values")]
    NonFiniteDelta,
}

/// A client's authenticated, possibly noised parameter delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelUpdate {
    pub user_id: String,
    pub round: u64,
    pub delta: Vec<f64>,
    /// Logical clock tick at signing time.
    pub timestamp: u64,
    pub tag: [u8; TAG_LEN],
}

/// Reasons an update is turned away. Rejections are protocol outcomes, not
/// faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    BadTag,
    StaleRound,
    Replay,
    ClockSkew,
    UnknownUser,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::BadTag => "bad_tag",
            RejectReason::StaleRound => "stale_round",
            RejectReason::Replay => "replay",
            RejectReason::ClockSkew => "clock_skew",
            RejectReason::UnknownUser => "unknown_user",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyOutcome {
    Accepted,
    Rejected(RejectReason),
}

impl VerifyOutcome {
    pub fn accepted(self) -> bool {
        matches!(self, VerifyOutcome::Accepted)
    }

    pub fn reason(self) -> Option<RejectReason> {
        match self {
            VerifyOutcome::Accepted => None,
            VerifyOutcome::Rejected(reason) => Some(reason),
        }
    }
}

/// Per-user secret keys plus the aggregator's replay/freshness state.
/// Keys never appear in serialized reports.
#[derive(Debug)]
pub struct KeyStore {
    keys: BTreeMap<String, MacKey>,
    /// Accepted timestamps may differ from the aggregator clock by at most
    /// this many ticks.
    pub freshness_window: u64,
    seen: BTreeMap<String, BTreeSet<(u64, u64)>>,
}

impl KeyStore {
    /// Deterministically generate one 32-byte key per user from a seed. The
    /// simulation uses a seeded CSPRNG so whole runs stay reproducible.
    pub fn generate<I, S>(user_ids: I, seed: u64, freshness_window: u64) -> KeyStore
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut keys = BTreeMap::new();
        for user in user_ids {
            let mut key = [0u8; KEY_LEN];
            rng.fill_bytes(&mut key);
            keys.insert(user.into(), key);
        }
        KeyStore {
            keys,
            freshness_window,
            seen: BTreeMap::new(),
        }
    }

    pub fn key_for(&self, user_id: &str) -> Option<&MacKey> {
        self.keys.get(user_id)
    }

    pub fn insert_key(&mut self, user_id: impl Into<String>, key: MacKey) {
        self.keys.insert(user_id.into(), key);
    }

    pub fn user_ids(&self) -> impl Iterator<Item = &String> {
        self.keys.keys()
    }

    /// Forget replay state (fresh aggregator between independent runs).
    pub fn reset_seen(&mut self) {
        self.seen.clear();
    }
}

/// Canonical serialization fed to the MAC.
pub fn canonical_update_bytes(
    delta: &[f64],
    timestamp: u64,
    user_id: &str,
    round: u64,
) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * delta.len() + user_id.len() + 32);
    out.extend((delta.len() as u64).to_le_bytes());
    for v in delta {
        out.extend(v.to_le_bytes());
    }
    out.extend(timestamp.to_le_bytes());
    out.extend((user_id.len() as u64).to_le_bytes());
    out.extend(user_id.as_bytes());
    out.extend(round.to_le_bytes());
    out
}

/// HMAC-SHA256 tag over an arbitrary message.
pub fn mac_tag(key: &MacKey, message: &[u8]) -> [u8; TAG_LEN] {
    let mut mac = Hmac::<Sha256>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(message);
    mac.finalize().into_bytes().into()
}

/// Constant-time byte comparison: XOR-OR fold over every byte, no early exit
/// on the first mismatch.
pub fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut acc = 0u8;
    for (x, y) in a.iter().zip(b) {
        acc |= x ^ y;
    }
    acc == 0
}

/// Build an authenticated update: tag the canonical serialization of
/// `(delta, timestamp, user_id, round)` under the user's key.
pub fn make_update(
    user_id: impl Into<String>,
    round: u64,
    delta: Vec<f64>,
    key: &MacKey,
    timestamp: u64,
) -> Result<ModelUpdate, MacError> {
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(MacError::NonFiniteDelta);
    }
    let user_id = user_id.into();
    let tag = mac_tag(key, &canonical_update_bytes(&delta, timestamp, &user_id, round));
    Ok(ModelUpdate {
        user_id,
        round,
        delta,
        timestamp,
        tag,
    })
}

/// Verify an update against the keystore and the aggregator's round clock.
///
/// Checks, in order: tag authenticity (constant-time), round match, replay
/// of an already-accepted `(round, timestamp)`, timestamp freshness. On
/// acceptance the `(round, timestamp)` pair is recorded for the user.
pub fn verify_update(
    update: &ModelUpdate,
    store: &mut KeyStore,
    current_round: u64,
) -> VerifyOutcome {
    let Some(key) = store.keys.get(&update.user_id) else {
        return VerifyOutcome::Rejected(RejectReason::UnknownUser);
    };
    let expected = mac_tag(
        key,
        &canonical_update_bytes(
            &update.delta,
            update.timestamp,
            &update.user_id,
            update.round,
        ),
    );
    if !constant_time_eq(&expected, &update.tag) {
        return VerifyOutcome::Rejected(RejectReason::BadTag);
    }
    if update.round != current_round {
        return VerifyOutcome::Rejected(RejectReason::StaleRound);
    }
    let seen = store.seen.entry(update.user_id.clone()).or_default();
    if seen.contains(&(update.round, update.timestamp)) {
        return VerifyOutcome::Rejected(RejectReason::Replay);
    }
    let skew = current_round.abs_diff(update.timestamp);
    if skew > store.freshness_window {
        return VerifyOutcome::Rejected(RejectReason::ClockSkew);
    }
    seen.insert((update.round, update.timestamp));
    VerifyOutcome::Accepted
}
