//! Keystroke-timing CSV parser.
//!
//! Expected layout: `subject,sessionIndex,rep` followed by 31 timing columns
//! (11 hold times `H.*`, 10 down-down latencies `DD.*`, 10 up-down latencies
//! `UD.*`). Each row becomes one session whose timings form a single
//! time-ordered scalar sequence; an alternative layout splits the row into
//! three per-channel sequences.

use std::io::Read;

use super::{IngestError, Modality, SessionRecord};
use crate::similarity::{FeatureObservation, FeaturePayload};

pub const KEYSTROKE_FEATURE: &str = "keystroke_timing";
const META_COLUMNS: usize = 3;
const TIMING_COLUMNS: usize = 31;
const TOTAL_COLUMNS: usize = META_COLUMNS + TIMING_COLUMNS;

/// How row timings map onto sequence observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeystrokeLayout {
    /// All 31 timings as one scalar sequence, in column order.
    #[default]
    SingleSequence,
    /// Three scalar sequences, one per channel (`H.*`, `DD.*`, `UD.*`).
    ThreeChannel,
}

pub fn parse_keystroke<R: Read>(
    reader: R,
    layout: KeystrokeLayout,
) -> Result<Vec<SessionRecord>, IngestError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let headers = csv_reader.headers()?.clone();
    for required in ["subject", "sessionIndex", "rep"] {
        if !headers.iter().any(|h| h == required) {
            return Err(IngestError::MissingColumn(required.to_string()));
        }
    }
    let timing_names: Vec<String> = headers
        .iter()
        .skip(META_COLUMNS)
        .map(|h| h.to_string())
        .collect();

    let mut records = Vec::new();
    for (idx, row) in csv_reader.records().enumerate() {
        let row = row?;
        let line = idx as u64 + 2;
        if row.len() != TOTAL_COLUMNS {
            return Err(IngestError::MalformedRow {
                line,
                expected: TOTAL_COLUMNS,
                got: row.len(),
            });
        }
        let subject = row.get(0).unwrap_or_default().to_string();
        let session_index = row.get(1).unwrap_or_default();
        let rep = row.get(2).unwrap_or_default();

        let mut timings = Vec::with_capacity(TIMING_COLUMNS);
        for (col, raw) in row.iter().skip(META_COLUMNS).enumerate() {
            let value: f64 = raw.trim().parse().map_err(|_| IngestError::NonNumericTiming {
                line,
                column: timing_names
                    .get(col)
                    .cloned()
                    .unwrap_or_else(|| format!("col{}", col + META_COLUMNS)),
                value: raw.to_string(),
            })?;
            timings.push(value);
        }

        let observations = match layout {
            KeystrokeLayout::SingleSequence => vec![FeatureObservation::new(
                KEYSTROKE_FEATURE,
                FeaturePayload::Sequence(timings.iter().map(|&t| vec![t]).collect()),
            )],
            KeystrokeLayout::ThreeChannel => {
                let mut hold = Vec::new();
                let mut dd = Vec::new();
                let mut ud = Vec::new();
                for (name, &t) in timing_names.iter().zip(&timings) {
                    if name.starts_with("H.") {
                        hold.push(vec![t]);
                    } else if name.starts_with("DD.") {
                        dd.push(vec![t]);
                    } else if name.starts_with("UD.") {
                        ud.push(vec![t]);
                    } else {
                        hold.push(vec![t]);
                    }
                }
                vec![
                    FeatureObservation::new("hold_times", FeaturePayload::Sequence(hold)),
                    FeatureObservation::new("dd_latency", FeaturePayload::Sequence(dd)),
                    FeatureObservation::new("ud_latency", FeaturePayload::Sequence(ud)),
                ]
            }
        };

        records.push(SessionRecord {
            user_id: subject.clone(),
            session_id: format!("{subject}-s{session_index}-r{rep}"),
            modality: Modality::Keystroke,
            observations,
            wall_time: None,
        });
    }
    Ok(records)
}
