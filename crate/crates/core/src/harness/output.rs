//! CSV logs and the JSON summary of a scenario run.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{ControlEvent, NeighborRecord};
use super::scenario::ScenarioResult;
use crate::error::Result;

pub const CONTROL_EVENTS_CSV: &str = "control_events.csv";
pub const TRAJECTORIES_CSV: &str = "trajectories.csv";
pub const MAC_LOG_CSV: &str = "mac_log.csv";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Serialize, Deserialize)]
struct EventRow {
    time_ms: u64,
    observer: u32,
    neighbor: u32,
    aoi_ms: f64,
    distance_m: f64,
    position_error_m: f64,
}

/// Writes `rows` as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes pretty-printed JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes the three logs and the summary into `dir`, creating it if needed.
pub fn write_outputs(result: &ScenarioResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let events = result.events.iter().flat_map(|e| {
        e.records.iter().map(move |r| EventRow {
            time_ms: e.time_ms,
            observer: e.observer,
            neighbor: r.neighbor,
            aoi_ms: r.aoi_ms,
            distance_m: r.distance_m,
            position_error_m: r.position_error_m,
        })
    });
    write_csv(&dir.join(CONTROL_EVENTS_CSV), events)?;
    write_csv(&dir.join(TRAJECTORIES_CSV), &result.trajectories)?;
    write_csv(&dir.join(MAC_LOG_CSV), &result.mac_log)?;
    write_json(&dir.join(SUMMARY_JSON), &result.summary)
}

/// Reads a control-event log written by [`write_outputs`], regrouping rows
/// into one event per (time, observer) run of consecutive lines.
pub fn read_control_events(path: &Path) -> Result<Vec<ControlEvent>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut events: Vec<ControlEvent> = Vec::new();
    for row in r.deserialize() {
        let row: EventRow = row?;
        let rec = NeighborRecord {
            neighbor: row.neighbor,
            aoi_ms: row.aoi_ms,
            distance_m: row.distance_m,
            position_error_m: row.position_error_m,
        };
        match events.last_mut() {
            Some(e) if e.time_ms == row.time_ms && e.observer == row.observer => e.records.push(rec),
            _ => events.push(ControlEvent {
                time_ms: row.time_ms,
                observer: row.observer,
                records: vec![rec],
            }),
        }
    }
    Ok(events)
}
