//! CSV persistence for event logs, ledgers and fault lists.

use std::io::{Read, Write};

use crate::branching::{Disposition, DispositionLedger, Label};
use crate::detector::ClickEvent;
use crate::geometry::{Layer, SensorId};

use super::RunError;

pub const EVENT_HEADER: [&str; 5] = ["electron_id", "layer", "sensor_id", "t_emit_ns", "t_click_ns"];
pub const LEDGER_HEADER: [&str; 6] = ["electron_id", "t_emit_ns", "selected", "disposition", "layer", "sensor_id"];

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str], what: &str) -> Result<(), RunError> {
    let h = rdr.headers()?;
    if h.iter().ne(expected.iter().copied()) {
        return Err(RunError::Format(format!("{what}: expected header {}", expected.join(","))));
    }
    Ok(())
}

fn field(rec: &csv::StringRecord, i: usize) -> &str {
    rec.get(i).unwrap_or("")
}

fn bad(what: &str, row: usize, detail: impl std::fmt::Display) -> RunError {
    RunError::Format(format!("{what} data row {row}: {detail}"))
}

/// The value a time takes after a trip through the event log.
pub fn persisted_time(t_ns: f64) -> f64 {
    format!("{t_ns:.6}").parse().expect("formatted float parses")
}

/// `electron_id,layer,sensor_id,t_emit_ns,t_click_ns`, 6 decimals.
pub fn write_events<W: Write>(events: &[ClickEvent], writer: W) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EVENT_HEADER)?;
    for e in events {
        w.write_record([
            e.electron_id.to_string(),
            e.layer.as_str().to_string(),
            e.sensor.0.to_string(),
            format!("{:.6}", e.t_emit_ns),
            format!("{:.6}", e.t_click_ns),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_events<R: Read>(reader: R) -> Result<Vec<ClickEvent>, RunError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(&mut rdr, &EVENT_HEADER, "event log")?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let electron_id: i64 = field(&rec, 0).parse().map_err(|_| bad("event log", row, "bad electron_id"))?;
        let layer = Layer::parse(field(&rec, 1)).ok_or_else(|| bad("event log", row, format!("bad layer '{}'", field(&rec, 1))))?;
        let sensor: u32 = field(&rec, 2).parse().map_err(|_| bad("event log", row, "bad sensor_id"))?;
        if sensor == 0 {
            return Err(bad("event log", row, "sensor ids start at 1"));
        }
        let t_emit_ns: f64 = field(&rec, 3).parse().map_err(|_| bad("event log", row, "bad t_emit_ns"))?;
        let t_click_ns: f64 = field(&rec, 4).parse().map_err(|_| bad("event log", row, "bad t_click_ns"))?;
        out.push(ClickEvent { electron_id, layer, sensor: SensorId(sensor), t_emit_ns, t_click_ns, injected: false });
    }
    Ok(out)
}

/// One row per electron: emission time, Born-selected label, disposition.
pub fn write_ledger<W: Write>(
    ledger: &DispositionLedger,
    emit_ns: &[f64],
    selected: &[Label],
    writer: W,
) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LEDGER_HEADER)?;
    for ((id, d), (t, sel)) in ledger.iter().zip(emit_ns.iter().zip(selected)) {
        let (name, layer, sensor) = match d {
            Some(Disposition::Detected { sensor, layer }) => ("Detected", layer.as_str().to_string(), sensor.0.to_string()),
            Some(other) => (other.name(), String::new(), String::new()),
            None => ("None", String::new(), String::new()),
        };
        w.write_record([id.to_string(), format!("{t:.6}"), sel.to_string(), name.to_string(), layer, sensor])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub struct LedgerFile {
    pub ledger: DispositionLedger,
    pub emit_ns: Vec<f64>,
    pub selected: Vec<Label>,
}

pub fn read_ledger<R: Read>(reader: R) -> Result<LedgerFile, RunError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(&mut rdr, &LEDGER_HEADER, "ledger")?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let id: u64 = field(&rec, 0).parse().map_err(|_| bad("ledger", row, "bad electron_id"))?;
        let t: f64 = field(&rec, 1).parse().map_err(|_| bad("ledger", row, "bad t_emit_ns"))?;
        let sel: Label = field(&rec, 2).parse().map_err(|e: String| bad("ledger", row, e))?;
        let d = match field(&rec, 3) {
            "Detected" => {
                let layer = Layer::parse(field(&rec, 4)).ok_or_else(|| bad("ledger", row, "bad layer"))?;
                let sensor: u32 = field(&rec, 5).parse().map_err(|_| bad("ledger", row, "bad sensor_id"))?;
                Some(Disposition::Detected { sensor: SensorId(sensor), layer })
            }
            "GapLanding" => Some(Disposition::GapLanding),
            "LostBetweenLayers" => Some(Disposition::LostBetweenLayers),
            "Violation" => Some(Disposition::Violation),
            "None" => None,
            other => return Err(bad("ledger", row, format!("unknown disposition '{other}'"))),
        };
        rows.push((id, t, sel, d));
    }
    let first = rows.first().map_or(0, |r| r.0);
    let mut ledger = DispositionLedger::new(first, rows.len());
    let mut emit_ns = Vec::with_capacity(rows.len());
    let mut selected = Vec::with_capacity(rows.len());
    for (i, (id, t, sel, d)) in rows.into_iter().enumerate() {
        if id != first + i as u64 {
            return Err(bad("ledger", i + 1, "electron ids must be consecutive"));
        }
        if let Some(d) = d {
            // A repeated id is impossible here, so a failure is a format error.
            ledger.record(id, d).map_err(|e| RunError::Format(e.to_string()))?;
        }
        emit_ns.push(t);
        selected.push(sel);
    }
    Ok(LedgerFile { ledger, emit_ns, selected })
}

/// Injected duplicates, in the event-log layout.
pub fn write_injected<W: Write>(events: &[ClickEvent], writer: W) -> Result<(), RunError> {
    let injected: Vec<ClickEvent> = events.iter().filter(|e| e.injected).copied().collect();
    write_events(&injected, writer)
}

/// Marks clicks listed in an injected-faults file.
pub fn tag_injected(events: &mut [ClickEvent], injected: &[ClickEvent]) {
    let key = |e: &ClickEvent| (e.electron_id, e.layer, e.sensor.0, format!("{:.6}", e.t_click_ns));
    let keys: std::collections::HashSet<_> = injected.iter().map(key).collect();
    for e in events.iter_mut() {
        if keys.contains(&key(e)) {
            e.injected = true;
        }
    }
}
