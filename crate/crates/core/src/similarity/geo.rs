//! Great-circle distances and spherical centroids for geolocation features.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in kilometers.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate: lat={lat_rad}, lon={lon_rad} (radians)")]
    InvalidCoordinate { lat_rad: f64, lon_rad: f64 },
    #[error("earth radius must be positive")]
    NonPositiveRadius,
}

/// A point on the sphere, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat_rad: f64,
    pub lon_rad: f64,
}

impl GeoPoint {
    pub fn new(lat_rad: f64, lon_rad: f64) -> Result<Self, GeoError> {
        let p = GeoPoint { lat_rad, lon_rad };
        p.validate()?;
        Ok(p)
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64) -> Result<Self, GeoError> {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians())
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let pi = std::f64::consts::PI;
        if !self.lat_rad.is_finite()
            || !self.lon_rad.is_finite()
            || self.lat_rad.abs() > half_pi
            || self.lon_rad.abs() > pi
        {
            return Err(GeoError::InvalidCoordinate {
                lat_rad: self.lat_rad,
                lon_rad: self.lon_rad,
            });
        }
        Ok(())
    }
}

/// Haversine great-circle distance between two points, in the unit of
/// `earth_radius`. Always in `[0, pi * earth_radius]`.
pub fn haversine(p1: GeoPoint, p2: GeoPoint, earth_radius: f64) -> Result<f64, GeoError> {
    p1.validate()?;
    p2.validate()?;
    if !(earth_radius > 0.0) {
        return Err(GeoError::NonPositiveRadius);
    }
    let dlat = (p2.lat_rad - p1.lat_rad) / 2.0;
    let dlon = (p2.lon_rad - p1.lon_rad) / 2.0;
    let arg = dlat.sin().powi(2) + p1.lat_rad.cos() * p2.lat_rad.cos() * dlon.sin().powi(2);
    // Rounding can push the argument a hair outside [0, 1].
    let arg = arg.clamp(0.0, 1.0);
    Ok(2.0 * earth_radius * arg.sqrt().asin())
}

/// Spherical centroid via the normalized mean of unit vectors.
///
/// Returns `None` for an empty slice or when the mean vector degenerates
/// (antipodal inputs canceling out).
pub fn geo_centroid(points: &[GeoPoint]) -> Option<GeoPoint> {
    if points.is_empty() {
        return None;
    }
    let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
    for p in points {
        x += p.lat_rad.cos() * p.lon_rad.cos();
        y += p.lat_rad.cos() * p.lon_rad.sin();
        z += p.lat_rad.sin();
    }
    let norm = (x * x + y * y + z * z).sqrt();
    if norm < 1e-12 {
        return None;
    }
    let lat = (z / norm).asin();
    let lon = y.atan2(x);
    Some(GeoPoint {
        lat_rad: lat,
        lon_rad: lon,
    })
}

/// Decayed spherical centroid: move `hist` toward `live` with weight
/// `1 - alpha` on the unit sphere.
pub fn geo_decay(hist: GeoPoint, live: GeoPoint, alpha: f64) -> GeoPoint {
    let to_vec = |p: GeoPoint| {
        [
            p.lat_rad.cos() * p.lon_rad.cos(),
            p.lat_rad.cos() * p.lon_rad.sin(),
            p.lat_rad.sin(),
        ]
    };
    let h = to_vec(hist);
    let l = to_vec(live);
    let mixed: Vec<f64> = h
        .iter()
        .zip(&l)
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect();
    let norm = mixed.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return hist;
    }
    GeoPoint {
        lat_rad: (mixed[2] / norm).asin(),
        lon_rad: mixed[1].atan2(mixed[0]),
    }
}
