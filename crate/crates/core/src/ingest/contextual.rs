//! Contextual login parser: one 24-slot observation schema per login event,
//! spanning geolocation, device/software identity, network, temporal
//! context and user-agent components.
//!
//! Geolocation comes from an offline lookup table keyed by IP dot-prefix;
//! IPs absent from the table simply produce no geo observations (the
//! affected similarity coordinates score 0) instead of fabricated
//! coordinates. Unparseable user agents keep the row but leave the UA
//! features missing.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{IngestError, Modality, SessionRecord};
use crate::similarity::{
    geo::geo_decay, FeatureObservation, FeaturePayload, FeatureReference, GeoPoint,
    ReferenceEntry, SimilarityError, UserReference, EARTH_RADIUS_KM,
};

/// The 24-slot contextual feature schema, in declared vector order.
/// Schema version: v1 — serialized models embed these ids, so changes here
/// must bump the id strings rather than silently reorder them.
pub const CONTEXTUAL_FEATURES: [&str; 24] = [
    "geo_location",
    "country",
    "region_cell",
    "city_cell",
    "device_type",
    "browser_version",
    "os_version",
    "ua_string",
    "ip_exact",
    "ip_prefix",
    "asn",
    "is_benign_ip",
    "hour_of_day",
    "weekday",
    "freq_7d",
    "login_gap_hours",
    "ua_os",
    "ua_arch",
    "ua_engine",
    "ua_browser",
    "ua_browser_major",
    "ua_os_major",
    "device_category",
    "asn_country",
];

const SECONDS_PER_DAY: i64 = 86_400;
const SECONDS_PER_WEEK: i64 = 7 * SECONDS_PER_DAY;

/// Offline IP-prefix → location/ASN lookup.
#[derive(Debug, Clone, Default)]
pub struct GeoTable {
    rows: Vec<GeoRow>,
}

#[derive(Debug, Clone)]
struct GeoRow {
    prefix: String,
    point: GeoPoint,
    asn: String,
    country: String,
}

#[derive(Debug, Clone)]
pub struct GeoHit {
    pub point: GeoPoint,
    pub asn: String,
    pub country: String,
}

impl GeoTable {
    /// Parse `ip_prefix,lat,lon,asn,country` with degrees in the file.
    pub fn from_reader<R: Read>(reader: R) -> Result<GeoTable, IngestError> {
        let mut csv_reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = csv_reader.headers()?.clone();
        for required in ["ip_prefix", "lat", "lon", "asn", "country"] {
            if !headers.iter().any(|h| h == required) {
                return Err(IngestError::MissingGeoTable(format!(
                    "missing column {required}"
                )));
            }
        }
        let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
        let (p_col, lat_col, lon_col, asn_col, c_col) = (
            col("ip_prefix"),
            col("lat"),
            col("lon"),
            col("asn"),
            col("country"),
        );
        let mut rows = Vec::new();
        for (idx, row) in csv_reader.records().enumerate() {
            let row = row?;
            let line = idx as u64 + 2;
            let parse_f = |i: usize| -> Result<f64, IngestError> {
                row.get(i)
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| IngestError::BadValue {
                        line,
                        message: "non-numeric coordinate in geo table".to_string(),
                    })
            };
            let point = GeoPoint::from_degrees(parse_f(lat_col)?, parse_f(lon_col)?)
                .map_err(|e| IngestError::BadValue {
                    line,
                    message: e.to_string(),
                })?;
            rows.push(GeoRow {
                prefix: row.get(p_col).unwrap_or_default().trim_end_matches('.').to_string(),
                point,
                asn: row.get(asn_col).unwrap_or_default().to_string(),
                country: row.get(c_col).unwrap_or_default().to_string(),
            });
        }
        if rows.is_empty() {
            return Err(IngestError::MissingGeoTable("table has no rows".to_string()));
        }
        Ok(GeoTable { rows })
    }

    /// Longest matching dot-prefix wins.
    pub fn lookup(&self, ip: &str) -> Option<GeoHit> {
        let mut best: Option<&GeoRow> = None;
        for row in &self.rows {
            let matches = ip == row.prefix || ip.starts_with(&format!("{}.", row.prefix));
            if matches && best.map_or(true, |b| row.prefix.len() > b.prefix.len()) {
                best = Some(row);
            }
        }
        best.map(|row| GeoHit {
            point: row.point,
            asn: row.asn.clone(),
            country: row.country.clone(),
        })
    }
}

/// Parsed user-agent components, all optional.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UaComponents {
    pub os: Option<String>,
    pub os_major: Option<String>,
    pub arch: Option<String>,
    pub engine: Option<String>,
    pub browser: Option<String>,
    pub browser_major: Option<String>,
    pub device_class: Option<String>,
}

fn token_after<'a>(ua: &'a str, marker: &str) -> Option<&'a str> {
    let start = ua.find(marker)? + marker.len();
    let rest = &ua[start..];
    let end = rest
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '_'))
        .unwrap_or(rest.len());
    if end == 0 {
        None
    } else {
        Some(&rest[..end])
    }
}

fn major_of(version: &str) -> String {
    version
        .split(['.', '_'])
        .next()
        .unwrap_or(version)
        .to_string()
}

/// Best-effort user-agent decomposition. Returns all-`None` components for
/// strings with no recognizable tokens.
pub fn parse_user_agent(ua: &str) -> UaComponents {
    let mut parts = UaComponents::default();
    if ua.trim().is_empty() {
        return parts;
    }
    let lower = ua.to_lowercase();

    parts.os = if lower.contains("windows") {
        Some("windows".into())
    } else if lower.contains("android") {
        Some("android".into())
    } else if lower.contains("iphone") || lower.contains("ipad") || lower.contains("ios") {
        Some("ios".into())
    } else if lower.contains("mac os") || lower.contains("macintosh") {
        Some("macos".into())
    } else if lower.contains("linux") {
        Some("linux".into())
    } else {
        None
    };
    parts.os_major = match parts.os.as_deref() {
        Some("windows") => token_after(ua, "Windows NT ").map(major_of),
        Some("android") => token_after(ua, "Android ").map(major_of),
        Some("macos") => token_after(ua, "Mac OS X ").map(major_of),
        Some("ios") => token_after(ua, "OS ").map(major_of),
        _ => None,
    }
    .map(|m| format!("{}_{}", parts.os.as_deref().unwrap_or(""), m));

    parts.arch = if lower.contains("x86_64") || lower.contains("x64") || lower.contains("amd64")
        || lower.contains("win64")
    {
        Some("x86_64".into())
    } else if lower.contains("aarch64") || lower.contains("arm") {
        Some("arm".into())
    } else if lower.contains("i686") || lower.contains("i386") {
        Some("x86".into())
    } else {
        None
    };

    parts.engine = if lower.contains("applewebkit") {
        Some("webkit".into())
    } else if lower.contains("gecko/") {
        Some("gecko".into())
    } else if lower.contains("trident") {
        Some("trident".into())
    } else {
        None
    };

    let browser_probe: [(&str, &str); 5] = [
        ("Edg/", "edge"),
        ("OPR/", "opera"),
        ("Chrome/", "chrome"),
        ("Firefox/", "firefox"),
        ("Safari/", "safari"),
    ];
    for (marker, name) in browser_probe {
        if ua.contains(marker) {
            // Chrome UAs also carry Safari/: first match in probe order wins.
            parts.browser = Some(name.to_string());
            parts.browser_major = token_after(ua, marker).map(|v| major_of(v));
            break;
        }
    }

    parts.device_class = if lower.contains("bot") || lower.contains("crawler") || lower.contains("spider") {
        Some("bot".into())
    } else if lower.contains("ipad") || lower.contains("tablet") {
        Some("tablet".into())
    } else if lower.contains("mobile") || lower.contains("iphone") || lower.contains("android") {
        Some("mobile".into())
    } else if parts.os.is_some() || parts.browser.is_some() {
        Some("desktop".into())
    } else {
        None
    };
    parts
}

/// Leading `major.minor` of a version string as a number.
pub fn extract_version(raw: &str) -> Option<f64> {
    let mut pieces = raw.trim().split('.');
    let major = pieces.next()?.trim();
    if major.is_empty() || !major.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let minor = pieces
        .next()
        .map(|m| m.chars().take_while(|c| c.is_ascii_digit()).collect::<String>())
        .filter(|m| !m.is_empty())
        .unwrap_or_else(|| "0".to_string());
    format!("{major}.{minor}").parse().ok()
}

fn grid_cell(point: GeoPoint, degrees: f64, tag: char) -> String {
    let lat = (point.lat_rad.to_degrees() / degrees).floor() as i64;
    let lon = (point.lon_rad.to_degrees() / degrees).floor() as i64;
    format!("{tag}{lat}_{lon}")
}

/// A raw login row before feature engineering.
#[derive(Debug, Clone)]
pub struct LoginRow {
    pub user_id: String,
    pub timestamp: i64,
    pub ip: String,
    pub user_agent: String,
    pub device_type: String,
    pub browser_version: String,
    pub os_version: String,
}

fn hour_of_day(ts: i64) -> f64 {
    ts.rem_euclid(SECONDS_PER_DAY) as f64 / 3600.0
}

fn weekday(ts: i64) -> f64 {
    // Unix epoch was a Thursday.
    (ts.div_euclid(SECONDS_PER_DAY) + 4).rem_euclid(7) as f64
}

fn ip_prefix(ip: &str) -> String {
    let octets: Vec<&str> = ip.split('.').collect();
    if octets.len() == 4 {
        octets[..3].join(".")
    } else {
        ip.to_string()
    }
}

/// Engineer the 24 observations for every login of one user, logins sorted
/// by timestamp.
pub fn engineer_user_observations(
    logins: &[LoginRow],
    geo: &GeoTable,
) -> Vec<SessionRecord> {
    // Trailing 7-day login counts, normalized by the user's busiest week.
    let times: Vec<i64> = logins.iter().map(|l| l.timestamp).collect();
    let counts: Vec<usize> = times
        .iter()
        .map(|&t| {
            times
                .iter()
                .filter(|&&u| u > t - SECONDS_PER_WEEK && u <= t)
                .count()
        })
        .collect();
    let max_weekly = counts.iter().copied().max().unwrap_or(1).max(1) as f64;

    let mut records = Vec::with_capacity(logins.len());
    for (idx, login) in logins.iter().enumerate() {
        let mut obs: Vec<FeatureObservation> = Vec::with_capacity(24);
        let mut push = |id: &str, payload: FeaturePayload| {
            obs.push(FeatureObservation::new(id, payload));
        };

        let hit = geo.lookup(&login.ip);
        if let Some(hit) = &hit {
            push("geo_location", FeaturePayload::Geo(hit.point));
            push("country", FeaturePayload::Member(hit.country.clone()));
            push(
                "region_cell",
                FeaturePayload::Member(grid_cell(hit.point, 2.0, 'r')),
            );
            push(
                "city_cell",
                FeaturePayload::Member(grid_cell(hit.point, 0.5, 'c')),
            );
            push("asn", FeaturePayload::Member(hit.asn.clone()));
            push(
                "asn_country",
                FeaturePayload::Member(format!("{}:{}", hit.asn, hit.country)),
            );
        }
        push(
            "is_benign_ip",
            FeaturePayload::Token(if hit.is_some() { "known" } else { "unknown" }.to_string()),
        );

        if !login.device_type.is_empty() {
            push("device_type", FeaturePayload::Member(login.device_type.clone()));
        }
        if let Some(v) = extract_version(&login.browser_version) {
            push("browser_version", FeaturePayload::Version(v));
        }
        if let Some(v) = extract_version(&login.os_version) {
            push("os_version", FeaturePayload::Version(v));
        }
        if !login.user_agent.is_empty() {
            push("ua_string", FeaturePayload::Member(login.user_agent.clone()));
        }
        if !login.ip.is_empty() {
            push("ip_exact", FeaturePayload::Member(login.ip.clone()));
            push("ip_prefix", FeaturePayload::Member(ip_prefix(&login.ip)));
        }

        push("hour_of_day", FeaturePayload::Scalar(hour_of_day(login.timestamp)));
        push("weekday", FeaturePayload::Scalar(weekday(login.timestamp)));
        push(
            "freq_7d",
            FeaturePayload::Scalar(counts[idx] as f64 / max_weekly),
        );
        let gap_hours = if idx == 0 {
            0.0
        } else {
            (login.timestamp - logins[idx - 1].timestamp) as f64 / 3600.0
        };
        push("login_gap_hours", FeaturePayload::Scalar(gap_hours));

        let ua = parse_user_agent(&login.user_agent);
        if let Some(v) = ua.os {
            push("ua_os", FeaturePayload::Token(v));
        }
        if let Some(v) = ua.arch {
            push("ua_arch", FeaturePayload::Token(v));
        }
        if let Some(v) = ua.engine {
            push("ua_engine", FeaturePayload::Token(v));
        }
        if let Some(v) = ua.browser {
            push("ua_browser", FeaturePayload::Token(v));
        }
        if let Some(v) = ua.browser_major {
            push("ua_browser_major", FeaturePayload::Token(v));
        }
        if let Some(v) = ua.os_major {
            push("ua_os_major", FeaturePayload::Token(v));
        }
        if let Some(v) = ua.device_class {
            push("device_category", FeaturePayload::Token(v));
        }

        records.push(SessionRecord {
            user_id: login.user_id.clone(),
            session_id: format!("{}-l{:05}", login.user_id, idx),
            modality: Modality::Contextual,
            observations: obs,
            wall_time: Some(login.timestamp),
        });
    }
    records
}

/// Parse a login CSV (`user_id,timestamp,ip,user_agent,device_type,
/// browser_version,os_version`) plus the geo table into per-login
/// observation records.
pub fn parse_contextual<R: Read>(
    reader: R,
    geo: &GeoTable,
) -> Result<Vec<SessionRecord>, IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, IngestError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let user_col = col("user_id")?;
    let ts_col = col("timestamp")?;
    let ip_col = col("ip")?;
    let ua_col = col("user_agent")?;
    let device_col = col("device_type")?;
    let bv_col = col("browser_version")?;
    let ov_col = col("os_version")?;

    let mut per_user: BTreeMap<String, Vec<LoginRow>> = BTreeMap::new();
    for (idx, row) in csv_reader.records().enumerate() {
        let row = row?;
        let line = idx as u64 + 2;
        let get = |i: usize| row.get(i).unwrap_or_default().trim().to_string();
        let timestamp: i64 = get(ts_col).parse().map_err(|_| IngestError::BadValue {
            line,
            message: format!("non-integer timestamp {:?}", get(ts_col)),
        })?;
        let login = LoginRow {
            user_id: get(user_col),
            timestamp,
            ip: get(ip_col),
            user_agent: get(ua_col),
            device_type: get(device_col),
            browser_version: get(bv_col),
            os_version: get(ov_col),
        };
        per_user.entry(login.user_id.clone()).or_default().push(login);
    }

    let mut records = Vec::new();
    for logins in per_user.values_mut() {
        logins.sort_by_key(|l| l.timestamp);
        records.extend(engineer_user_observations(logins, geo));
    }
    Ok(records)
}

/// Reference-building knobs for contextual features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextualRefConfig {
    /// Distance (km) at which geolocation similarity reaches zero.
    pub geo_max_distance: f64,
    /// Login-gap distance (hours) at which gap similarity reaches zero.
    pub gap_max_hours: f64,
    /// Per-feature decay-factor overrides.
    pub alpha_overrides: BTreeMap<String, f64>,
}

impl Default for ContextualRefConfig {
    fn default() -> Self {
        ContextualRefConfig {
            geo_max_distance: std::f64::consts::PI * EARTH_RADIUS_KM,
            gap_max_hours: 168.0,
            alpha_overrides: BTreeMap::new(),
        }
    }
}

/// Default decay factors: IP-derived features favor recency (0.5), stable
/// device/centroid features favor history (0.9).
fn default_alpha(feature_id: &str) -> f64 {
    match feature_id {
        "geo_location" | "ip_exact" | "ip_prefix" | "asn" | "asn_country" | "is_benign_ip" => 0.5,
        _ => 0.9,
    }
}

fn circular_decay(hist: f64, live: f64, alpha: f64, period: f64) -> f64 {
    let to_angle = |v: f64| v / period * std::f64::consts::TAU;
    let (hs, hc) = to_angle(hist).sin_cos();
    let (ls, lc) = to_angle(live).sin_cos();
    let s = alpha * hs + (1.0 - alpha) * ls;
    let c = alpha * hc + (1.0 - alpha) * lc;
    if s.abs() < 1e-12 && c.abs() < 1e-12 {
        return hist;
    }
    (s.atan2(c).rem_euclid(std::f64::consts::TAU)) / std::f64::consts::TAU * period
}

/// Build one user's contextual reference from their enrollment sessions:
/// sets are unions, versions track the latest value, scalar and geo
/// centroids fold session by session through the decay update.
pub fn build_contextual_reference(
    user_id: &str,
    sessions: &[SessionRecord],
    cfg: &ContextualRefConfig,
) -> Result<UserReference, SimilarityError> {
    let alpha_for = |feature: &str| {
        cfg.alpha_overrides
            .get(feature)
            .copied()
            .unwrap_or_else(|| default_alpha(feature))
    };

    let mut sets: BTreeMap<&str, std::collections::BTreeSet<String>> = BTreeMap::new();
    // value → (count, last-seen order) per feature; the registered value is
    // the majority one, ties going to the most recent, so a few anomalous
    // enrollment sessions cannot hijack the reference.
    let mut token_tally: BTreeMap<&str, BTreeMap<String, (usize, usize)>> = BTreeMap::new();
    let mut version_tally: BTreeMap<&str, BTreeMap<u64, (usize, usize)>> = BTreeMap::new();
    let mut seen_counter = 0usize;
    let mut geo_state: Option<GeoPoint> = None;
    let mut scalar_state: BTreeMap<&str, f64> = BTreeMap::new();

    let scalar_spec: BTreeMap<&str, (f64, Option<f64>)> = [
        ("hour_of_day", (12.0, Some(24.0))),
        ("weekday", (3.5, Some(7.0))),
        ("freq_7d", (1.0, None)),
        ("login_gap_hours", (cfg.gap_max_hours, None)),
    ]
    .into_iter()
    .collect();

    for session in sessions {
        for obs in &session.observations {
            let id = obs.feature_id.as_str();
            let key = CONTEXTUAL_FEATURES
                .iter()
                .find(|f| **f == id)
                .copied()
                .unwrap_or(id);
            match &obs.payload {
                FeaturePayload::Member(value) | FeaturePayload::Token(value) => {
                    sets.entry(key).or_default().insert(value.clone());
                    let entry = token_tally
                        .entry(key)
                        .or_default()
                        .entry(value.clone())
                        .or_insert((0, 0));
                    entry.0 += 1;
                    entry.1 = seen_counter;
                    seen_counter += 1;
                }
                FeaturePayload::Version(v) => {
                    let entry = version_tally
                        .entry(key)
                        .or_default()
                        .entry(v.to_bits())
                        .or_insert((0, 0));
                    entry.0 += 1;
                    entry.1 = seen_counter;
                    seen_counter += 1;
                }
                FeaturePayload::Geo(point) => {
                    geo_state = Some(match geo_state {
                        None => *point,
                        Some(hist) => geo_decay(hist, *point, alpha_for(id)),
                    });
                }
                FeaturePayload::Scalar(value) => {
                    let key = CONTEXTUAL_FEATURES
                        .iter()
                        .find(|f| **f == id)
                        .copied()
                        .unwrap_or(id);
                    let alpha = alpha_for(key);
                    let next = match scalar_state.get(key) {
                        None => *value,
                        Some(&hist) => match scalar_spec.get(key).and_then(|(_, p)| *p) {
                            Some(period) => circular_decay(hist, *value, alpha, period),
                            None => alpha * hist + (1.0 - alpha) * value,
                        },
                    };
                    scalar_state.insert(key, next);
                }
                _ => {}
            }
        }
    }

    let majority_token = |feature: &str| -> Option<String> {
        token_tally.get(feature).and_then(|tally| {
            tally
                .iter()
                .max_by_key(|(_, &(count, last))| (count, last))
                .map(|(value, _)| value.clone())
        })
    };
    let majority_version = |feature: &str| -> Option<f64> {
        version_tally.get(feature).and_then(|tally| {
            tally
                .iter()
                .max_by_key(|(_, &(count, last))| (count, last))
                .map(|(&bits, _)| f64::from_bits(bits))
        })
    };

    let mut entries = Vec::with_capacity(CONTEXTUAL_FEATURES.len());
    for feature in CONTEXTUAL_FEATURES {
        let alpha = alpha_for(feature);
        let reference = match feature {
            "geo_location" => match geo_state {
                Some(centroid) => FeatureReference::GeoCentroid {
                    centroid,
                    max_distance: cfg.geo_max_distance,
                },
                None => FeatureReference::Unavailable,
            },
            "browser_version" | "os_version" => match majority_version(feature) {
                Some(v) => FeatureReference::Version(v),
                None => FeatureReference::Unavailable,
            },
            "hour_of_day" | "weekday" | "freq_7d" | "login_gap_hours" => {
                let (max_distance, period) = scalar_spec[feature];
                match scalar_state.get(feature) {
                    Some(&value) => FeatureReference::ScalarCentroid {
                        value,
                        max_distance,
                        period,
                    },
                    None => FeatureReference::Unavailable,
                }
            }
            "is_benign_ip" => FeatureReference::Token("known".to_string()),
            "ua_os" | "ua_arch" | "ua_engine" | "ua_browser" | "ua_browser_major"
            | "ua_os_major" | "device_category" => match majority_token(feature) {
                Some(value) => FeatureReference::Token(value),
                None => FeatureReference::Unavailable,
            },
            _ => match sets.get(feature) {
                Some(values) => FeatureReference::DeviceSet(values.clone()),
                None => FeatureReference::Unavailable,
            },
        };
        entries.push((feature.to_string(), ReferenceEntry::new(reference, alpha)?));
    }
    UserReference::new(user_id, entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GEO_CSV: &str = "ip_prefix,lat,lon,asn,country\n\
                           192.168.1,51.5,-0.1,AS100,GB\n\
                           192.168,48.8,2.3,AS200,FR\n\
                           10.0.0,40.7,-74.0,AS300,US\n";

    fn geo() -> GeoTable {
        GeoTable::from_reader(GEO_CSV.as_bytes()).unwrap()
    }

    const CHROME_UA: &str = "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/107.0.0.0 Safari/537.36";

    #[test]
    fn longest_prefix_wins() {
        let table = geo();
        let hit = table.lookup("192.168.1.55").unwrap();
        assert_eq!(hit.asn, "AS100");
        let hit = table.lookup("192.168.9.1").unwrap();
        assert_eq!(hit.asn, "AS200");
        assert!(table.lookup("8.8.8.8").is_none());
    }

    #[test]
    fn ua_components_extracted() {
        let ua = parse_user_agent(CHROME_UA);
        assert_eq!(ua.os.as_deref(), Some("windows"));
        assert_eq!(ua.arch.as_deref(), Some("x86_64"));
        assert_eq!(ua.engine.as_deref(), Some("webkit"));
        assert_eq!(ua.browser.as_deref(), Some("chrome"));
        assert_eq!(ua.browser_major.as_deref(), Some("107"));
        assert_eq!(ua.os_major.as_deref(), Some("windows_10"));
        assert_eq!(ua.device_class.as_deref(), Some("desktop"));
    }

    #[test]
    fn unparseable_ua_yields_missing_components() {
        let ua = parse_user_agent("???");
        assert_eq!(ua, UaComponents::default());
    }

    #[test]
    fn version_extraction() {
        assert_eq!(extract_version("107.0"), Some(107.0));
        assert_eq!(extract_version("108.0.5359.99"), Some(108.0));
        assert_eq!(extract_version("107"), Some(107.0));
        assert_eq!(extract_version("11.2rc"), Some(11.2));
        assert_eq!(extract_version("abc"), None);
        assert_eq!(extract_version(""), None);
    }

    fn login_csv(rows: &[(&str, i64, &str)]) -> String {
        let mut out =
            "user_id,timestamp,ip,user_agent,device_type,browser_version,os_version\n".to_string();
        for (user, ts, ip) in rows {
            out.push_str(&format!(
                "{user},{ts},{ip},\"{CHROME_UA}\",laptop,107.0,10.0\n"
            ));
        }
        out
    }

    #[test]
    fn login_rows_produce_24_slot_observations() {
        let csv = login_csv(&[("alice", 1_700_000_000, "192.168.1.10")]);
        let records = parse_contextual(csv.as_bytes(), &geo()).unwrap();
        assert_eq!(records.len(), 1);
        // Every observation id belongs to the declared schema.
        for obs in &records[0].observations {
            assert!(
                CONTEXTUAL_FEATURES.contains(&obs.feature_id.as_str()),
                "{} not in schema",
                obs.feature_id
            );
        }
        // With a geo hit and a parseable UA, all 24 slots are observed.
        assert_eq!(records[0].observations.len(), 24);
    }

    #[test]
    fn missing_geo_drops_geo_observations_only() {
        let csv = login_csv(&[("alice", 1_700_000_000, "203.0.113.9")]);
        let records = parse_contextual(csv.as_bytes(), &geo()).unwrap();
        let ids: Vec<&str> = records[0]
            .observations
            .iter()
            .map(|o| o.feature_id.as_str())
            .collect();
        assert!(!ids.contains(&"geo_location"));
        assert!(!ids.contains(&"country"));
        assert!(!ids.contains(&"asn"));
        // The benignity flag flips to unknown instead of vanishing.
        let benign = records[0]
            .observations
            .iter()
            .find(|o| o.feature_id == "is_benign_ip")
            .unwrap();
        assert_eq!(
            benign.payload,
            FeaturePayload::Token("unknown".to_string())
        );
    }

    #[test]
    fn version_fields_become_version_observations() {
        let csv = "user_id,timestamp,ip,user_agent,device_type,browser_version,os_version\n\
                   alice,1700000000,192.168.1.10,agent,laptop,107.0,12.5\n\
                   alice,1700003600,192.168.1.10,agent,laptop,108.0,12.5\n";
        let records = parse_contextual(csv.as_bytes(), &geo()).unwrap();
        let versions: Vec<f64> = records
            .iter()
            .map(|r| {
                r.observations
                    .iter()
                    .find(|o| o.feature_id == "browser_version")
                    .map(|o| match o.payload {
                        FeaturePayload::Version(v) => v,
                        _ => f64::NAN,
                    })
                    .unwrap()
            })
            .collect();
        assert_eq!(versions, vec![107.0, 108.0]);
    }

    #[test]
    fn identical_logins_assemble_to_all_ones() {
        use crate::similarity::{assemble_similarity_vector, SimilarityConfig};
        // Same timestamp, IP, UA and versions across enrollment and live.
        let csv = login_csv(&[
            ("alice", 1_700_000_000, "192.168.1.10"),
            ("alice", 1_700_000_000, "192.168.1.10"),
            ("alice", 1_700_000_000, "192.168.1.10"),
        ]);
        let records = parse_contextual(csv.as_bytes(), &geo()).unwrap();
        let reference = build_contextual_reference(
            "alice",
            &records[..2],
            &ContextualRefConfig::default(),
        )
        .unwrap();
        let vector = assemble_similarity_vector(
            &records[2].observations,
            &reference,
            &SimilarityConfig::default(),
            &records[2].session_id,
        )
        .unwrap();
        assert_eq!(vector.scores.len(), 24);
        for (id, score) in vector.feature_ids.iter().zip(&vector.scores) {
            assert!(
                (score - 1.0).abs() < 1e-9,
                "feature {id} scored {score} instead of 1"
            );
        }
    }

    #[test]
    fn novel_context_scores_low() {
        use crate::similarity::{assemble_similarity_vector, SimilarityConfig};
        let enroll = login_csv(&[
            ("alice", 1_700_000_000, "192.168.1.10"),
            ("alice", 1_700_003_600, "192.168.1.10"),
        ]);
        let mut rows = parse_contextual(enroll.as_bytes(), &geo()).unwrap();
        let live_csv =
            "user_id,timestamp,ip,user_agent,device_type,browser_version,os_version\n\
             alice,1700047200,10.0.0.7,\"curl/8.1\",server,55.0,1.0\n";
        let live = parse_contextual(live_csv.as_bytes(), &geo()).unwrap();
        let reference =
            build_contextual_reference("alice", &rows.drain(..).collect::<Vec<_>>(), &ContextualRefConfig::default())
                .unwrap();
        let vector = assemble_similarity_vector(
            &live[0].observations,
            &reference,
            &SimilarityConfig::default(),
            "live",
        )
        .unwrap();
        let score_of = |id: &str| {
            vector
                .feature_ids
                .iter()
                .position(|f| f == id)
                .map(|i| vector.scores[i])
                .unwrap()
        };
        assert_eq!(score_of("ip_exact"), 0.0);
        assert_eq!(score_of("asn"), 0.0);
        assert_eq!(score_of("device_type"), 0.0);
        assert_eq!(score_of("ua_browser"), 0.0);
        assert!(score_of("browser_version") < 0.6);
    }

    #[test]
    fn circular_decay_stays_on_period() {
        let v = circular_decay(23.0, 1.0, 0.5, 24.0);
        // Midpoint across midnight is 0.0, not 12.0.
        assert!(v < 0.5 || v > 23.5, "got {v}");
    }
}
