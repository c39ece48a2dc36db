//! Mouse-event CSV parser.
//!
//! Events carry `timestamp,x,y,button,state` plus optional `user_id` and
//! `session_id` columns; without them the caller supplies fallback identity
//! (typically derived from the file path). Events with zero coordinates,
//! unparseable fields or non-increasing timestamps are dropped. Each
//! session's surviving events become one trajectory sequence with elements
//! `[x, y, speed, acceleration]`.

use std::collections::BTreeMap;
use std::io::Read;

use super::{IngestError, Modality, SessionRecord};
use crate::similarity::{FeatureObservation, FeaturePayload, Sequence};

pub const MOUSE_TRAJECTORY_FEATURE: &str = "mouse_trajectory";

/// Identity used for rows without explicit user/session columns.
#[derive(Debug, Clone)]
pub struct SessionKey {
    pub user_id: String,
    pub session_id: String,
}

struct Event {
    t: f64,
    x: f64,
    y: f64,
}

/// Derive `[x, y, speed, acceleration]` elements from a filtered trajectory.
/// Speed backfills its first element; acceleration its first two, so a
/// constant-speed straight line yields constant speed and zero acceleration.
pub(crate) fn trajectory_elements(events: &[(f64, f64, f64)]) -> Sequence {
    let n = events.len();
    let mut speed = vec![0.0; n];
    for i in 1..n {
        let (t0, x0, y0) = events[i - 1];
        let (t1, x1, y1) = events[i];
        let dt = t1 - t0;
        speed[i] = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt() / dt;
    }
    if n > 1 {
        speed[0] = speed[1];
    }
    let mut accel = vec![0.0; n];
    for i in 2..n {
        let dt = events[i].0 - events[i - 1].0;
        accel[i] = (speed[i] - speed[i - 1]) / dt;
    }
    events
        .iter()
        .enumerate()
        .map(|(i, &(_, x, y))| vec![x, y, speed[i], accel[i]])
        .collect()
}

pub fn parse_mouse<R: Read>(
    reader: R,
    fallback: &SessionKey,
) -> Result<Vec<SessionRecord>, IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(t_col), Some(x_col), Some(y_col)) = (col("timestamp"), col("x"), col("y")) else {
        return Err(IngestError::MissingColumn(
            "timestamp, x and y are required".to_string(),
        ));
    };
    let user_col = col("user_id");
    let session_col = col("session_id");

    // Group events per (user, session), preserving arrival order per group
    // so we can detect sessions whose events all get filtered out.
    let mut groups: BTreeMap<(String, String), Vec<Option<Event>>> = BTreeMap::new();
    for row in csv_reader.records() {
        let row = row?;
        let user = user_col
            .and_then(|c| row.get(c))
            .map(str::to_string)
            .unwrap_or_else(|| fallback.user_id.clone());
        let session = session_col
            .and_then(|c| row.get(c))
            .map(str::to_string)
            .unwrap_or_else(|| fallback.session_id.clone());

        let parse = |idx: usize| row.get(idx).and_then(|v| v.trim().parse::<f64>().ok());
        let event = match (parse(t_col), parse(x_col), parse(y_col)) {
            (Some(t), Some(x), Some(y)) if !(x == 0.0 && y == 0.0) => Some(Event { t, x, y }),
            _ => None,
        };
        groups.entry((user, session)).or_default().push(event);
    }

    let mut records = Vec::new();
    for ((user_id, session_id), events) in groups {
        let mut filtered: Vec<(f64, f64, f64)> = Vec::with_capacity(events.len());
        for event in events.into_iter().flatten() {
            match filtered.last() {
                Some(&(prev_t, _, _)) if event.t <= prev_t => continue,
                _ => filtered.push((event.t, event.x, event.y)),
            }
        }
        if filtered.is_empty() {
            return Err(IngestError::EmptySessionAfterFiltering(format!(
                "{user_id}/{session_id}"
            )));
        }
        let wall_time = Some(filtered[0].0 as i64);
        records.push(SessionRecord {
            user_id,
            session_id,
            modality: Modality::Mouse,
            observations: vec![FeatureObservation::new(
                MOUSE_TRAJECTORY_FEATURE,
                FeaturePayload::Sequence(trajectory_elements(&filtered)),
            )],
            wall_time,
        });
    }
    Ok(records)
}
