//! Mobility trace files.
//!
//! UTF-8 CSV, LF line endings, `.` decimal separator, header
//! `t_s,vehicle_id,x_m,y_m,speed_kmh,heading_deg`. Rows are replayed in
//! `(t_s, vehicle_id)` order. Numbers are written in Rust's shortest
//! round-trip form, which makes that the canonical encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geo::{GeoPosition, Kinematics};

pub const TRACE_HEADER: [&str; 6] = ["t_s", "vehicle_id", "x_m", "y_m", "speed_kmh", "heading_deg"];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t_s: f64,
    pub vehicle_id: String,
    pub position: GeoPosition,
    pub speed_kmh: f64,
    pub heading_deg: f64,
}

impl TraceRecord {
    pub fn kinematics(&self) -> Kinematics {
        Kinematics::new(self.position, self.speed_kmh, self.heading_deg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub rows: usize,
    pub vehicles: usize,
    pub t_min: f64,
    pub t_max: f64,
}

impl TraceSummary {
    pub fn of(records: &[TraceRecord]) -> Self {
        let vehicles: BTreeSet<&str> = records.iter().map(|r| r.vehicle_id.as_str()).collect();
        Self {
            rows: records.len(),
            vehicles: vehicles.len(),
            t_min: records.first().map_or(0.0, |r| r.t_s),
            t_max: records.last().map_or(0.0, |r| r.t_s),
        }
    }
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let file = File::open(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace(file)
}

fn number(field: &str, name: &str, line: u64) -> Result<f64, TraceError> {
    let v: f64 = field.parse().map_err(|_| TraceError::Parse {
        line,
        message: format!("{name} {field:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(TraceError::Parse {
            line,
            message: format!("{name} {field:?} is not finite"),
        });
    }
    Ok(v)
}

/// Parses and validates a trace, returning it in replay order.
pub fn parse_trace<R: Read>(input: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let csv_err = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line());
        TraceError::Parse {
            line,
            message: e.to_string(),
        }
    };

    let mut records = Vec::new();
    let mut last_t: BTreeMap<String, f64> = BTreeMap::new();
    let mut saw_header = false;
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let line = row.position().map_or(0, |p| p.line());
        if !saw_header {
            if row.iter().ne(TRACE_HEADER.iter().copied()) {
                return Err(TraceError::Parse {
                    line,
                    message: format!("expected header {}", TRACE_HEADER.join(",")),
                });
            }
            saw_header = true;
            continue;
        }
        if row.len() != TRACE_HEADER.len() {
            return Err(TraceError::Parse {
                line,
                message: format!("expected {} fields, found {}", TRACE_HEADER.len(), row.len()),
            });
        }
        let t_s = number(&row[0], "t_s", line)?;
        let vehicle_id = row[1].to_string();
        if vehicle_id.is_empty() {
            return Err(TraceError::Parse {
                line,
                message: "empty vehicle_id".into(),
            });
        }
        let x = number(&row[2], "x_m", line)?;
        let y = number(&row[3], "y_m", line)?;
        let speed_kmh = number(&row[4], "speed_kmh", line)?;
        let heading_deg = number(&row[5], "heading_deg", line)?;
        if t_s < 0.0 {
            return Err(TraceError::Parse {
                line,
                message: format!("negative time {t_s}"),
            });
        }
        if speed_kmh < 0.0 {
            return Err(TraceError::Parse {
                line,
                message: format!("negative speed {speed_kmh}"),
            });
        }
        if !(0.0..360.0).contains(&heading_deg) {
            return Err(TraceError::Parse {
                line,
                message: format!("heading {heading_deg} outside [0, 360)"),
            });
        }
        if let Some(prev) = last_t.insert(vehicle_id.clone(), t_s) {
            if t_s < prev {
                return Err(TraceError::Parse {
                    line,
                    message: format!("time {t_s} goes backwards for vehicle {vehicle_id} (previous {prev})"),
                });
            }
        }
        records.push(TraceRecord {
            t_s,
            vehicle_id,
            position: GeoPosition::new(x, y),
            speed_kmh,
            heading_deg,
        });
    }
    if !saw_header {
        return Err(TraceError::Parse {
            line: 1,
            message: "missing header".into(),
        });
    }
    records.sort_by(|a, b| a.t_s.total_cmp(&b.t_s).then_with(|| a.vehicle_id.cmp(&b.vehicle_id)));
    Ok(records)
}

/// Writes records in canonical form.
pub fn write_trace<W: Write>(records: &[TraceRecord], out: W) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record([
            r.t_s.to_string(),
            r.vehicle_id.clone(),
            r.position.x.to_string(),
            r.position.y.to_string(),
            r.speed_kmh.to_string(),
            r.heading_deg.to_string(),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "t_s,vehicle_id,x_m,y_m,speed_kmh,heading_deg\n";

    #[test]
    fn header_only_is_empty() {
        assert!(parse_trace(HEADER.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn two_rows_in_time_order() {
        let text = format!("{HEADER}10,car1,5,0,36,90\n0,car1,0,0,36,90\n");
        // out-of-order rows for one vehicle are a backwards step
        assert!(parse_trace(text.as_bytes()).is_err());
        let text = format!("{HEADER}10,car2,5,0,36,90\n0,car1,0,0,36,90\n");
        let recs = parse_trace(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].vehicle_id, "car1");
        assert_eq!(recs[1].t_s, 10.0);
    }

    #[test]
    fn bad_heading_names_line() {
        let text = format!("{HEADER}0,a,0,0,10,90\n1,a,0,0,10,400\n");
        match parse_trace(text.as_bytes()) {
            Err(TraceError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("heading"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_rows() {
        for (row, needle) in [
            ("0,a,0,0,10\n", "fields"),
            ("0,a,zero,0,10,0\n", "x_m"),
            ("0,a,0,0,-3,0\n", "speed"),
            ("0,a,0,0,3,NaN\n", "heading_deg"),
        ] {
            let text = format!("{HEADER}{row}");
            match parse_trace(text.as_bytes()) {
                Err(TraceError::Parse { line, message }) => {
                    assert_eq!(line, 2, "{row}");
                    assert!(message.contains(needle), "{message}");
                }
                other => panic!("{row}: {other:?}"),
            }
        }
        assert!(parse_trace("".as_bytes()).is_err());
        assert!(parse_trace("t,vehicle,x,y,s,h\n".as_bytes()).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_trace(Path::new("/nonexistent/trace.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/trace.csv"));
    }

    proptest! {
        #[test]
        fn canonical_round_trip(rows in prop::collection::vec(
            (0u32..1000, 0u8..5, -1e4..1e4f64, -1e4..1e4f64, 0.0..200.0f64, 0.0..360.0f64), 0..30)
        ) {
            let mut records: Vec<TraceRecord> = rows.iter().map(|(t, v, x, y, s, h)| TraceRecord {
                t_s: *t as f64 / 4.0,
                vehicle_id: format!("veh{v}"),
                position: GeoPosition::new(*x, *y),
                speed_kmh: *s,
                heading_deg: *h,
            }).collect();
            records.sort_by(|a, b| a.t_s.total_cmp(&b.t_s).then_with(|| a.vehicle_id.cmp(&b.vehicle_id)));
            let mut first = Vec::new();
            write_trace(&records, &mut first).unwrap();
            let parsed = parse_trace(first.as_slice()).unwrap();
            let mut second = Vec::new();
            write_trace(&parsed, &mut second).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}
