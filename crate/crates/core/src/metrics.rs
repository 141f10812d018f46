//! Migration outcome accounting, the per-run report, its CSV encoding and
//! the JSON-lines event log.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::HostRef;
use crate::migration::{MigrationTransaction, Phase};

pub const REPORT_HEADER: &str =
    "seed,n_vehicles,migrations_total,to_vehicle,to_rsu,failed,pct_to_vehicle,mean_downtime_s,vv_completed,vv_failed,vv_censored";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("transaction {0} is not terminal")]
    NotTerminal(crate::ids::TxnId),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

/// Running tallies for one simulation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutcomeCounts {
    pub to_vehicle: u64,
    pub to_rsu: u64,
    pub failed: u64,
    pub downtime_sum: f64,
    pub activated: u64,
    pub remaining_time_sum: f64,
    pub remaining_time_samples: u64,
}

impl OutcomeCounts {
    /// Counts one finished transaction: activated onto a vehicle, activated
    /// onto an RSU, or aborted.
    pub fn record_outcome(&mut self, txn: &MigrationTransaction) -> Result<(), ReportError> {
        match txn.phase {
            Phase::Activated => {
                match txn.candidate {
                    HostRef::Vehicle(_) => self.to_vehicle += 1,
                    HostRef::Rsu(_) => self.to_rsu += 1,
                }
                self.activated += 1;
                self.downtime_sum += txn.downtime;
                Ok(())
            }
            Phase::Aborted { .. } => {
                self.failed += 1;
                Ok(())
            }
            _ => Err(ReportError::NotTerminal(txn.id)),
        }
    }

    pub fn record_remaining_time(&mut self, seconds: f64) {
        self.remaining_time_sum += seconds;
        self.remaining_time_samples += 1;
    }
}

/// Final state of the virtual vehicles at the end of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VvTally {
    pub completed: u64,
    pub failed: u64,
    pub censored: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub n_vehicles: u32,
    pub migrations_total: u64,
    pub to_vehicle: u64,
    pub to_rsu: u64,
    pub failed: u64,
    pub pct_to_vehicle: f64,
    pub pct_to_rsu: f64,
    pub mean_downtime: f64,
    pub vv_completed: u64,
    pub vv_failed: u64,
    pub vv_censored: u64,
    pub mean_remaining_time_sampled: f64,
    /// No successful migration happened, so the percentages are meaningless.
    pub no_data: bool,
}

pub fn finalize(seed: u64, n_vehicles: u32, counts: &OutcomeCounts, vvs: VvTally) -> SimulationReport {
    let successes = counts.to_vehicle + counts.to_rsu;
    let (pct_to_vehicle, pct_to_rsu) = if successes == 0 {
        (0.0, 0.0)
    } else {
        let v = 100.0 * counts.to_vehicle as f64 / successes as f64;
        (v, 100.0 * counts.to_rsu as f64 / successes as f64)
    };
    let mean = |sum: f64, n: u64| if n == 0 { 0.0 } else { sum / n as f64 };
    SimulationReport {
        seed,
        n_vehicles,
        migrations_total: successes + counts.failed,
        to_vehicle: counts.to_vehicle,
        to_rsu: counts.to_rsu,
        failed: counts.failed,
        pct_to_vehicle,
        pct_to_rsu,
        mean_downtime: mean(counts.downtime_sum, counts.activated),
        vv_completed: vvs.completed,
        vv_failed: vvs.failed,
        vv_censored: vvs.censored,
        mean_remaining_time_sampled: mean(counts.remaining_time_sum, counts.remaining_time_samples),
        no_data: successes == 0,
    }
}

impl SimulationReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3},{:.3},{},{},{}",
            self.seed,
            self.n_vehicles,
            self.migrations_total,
            self.to_vehicle,
            self.to_rsu,
            self.failed,
            self.pct_to_vehicle,
            self.mean_downtime,
            self.vv_completed,
            self.vv_failed,
            self.vv_censored
        )
    }
}

/// Header plus one row per report, rows sorted by `(n_vehicles, seed)`.
pub fn reports_to_csv(reports: &[SimulationReport]) -> String {
    let mut sorted: Vec<&SimulationReport> = reports.iter().collect();
    sorted.sort_by_key(|r| (r.n_vehicles, r.seed));
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in sorted {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Writes `contents` next to `path` and renames it into place, so a failed
/// write never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), ReportError> {
    let io_err = |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(e)
    })
}

pub fn emit_csv(reports: &[SimulationReport], path: &Path) -> Result<(), ReportError> {
    write_atomic(path, reports_to_csv(reports).as_bytes())
}

/// Per-density means over the runs that had at least one successful
/// migration.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySummary {
    pub n_vehicles: u32,
    pub runs: usize,
    pub runs_with_data: usize,
    pub mean_pct_to_vehicle: f64,
    pub mean_pct_to_rsu: f64,
}

pub const SUMMARY_HEADER: &str = "n_vehicles,runs,runs_with_data,mean_pct_to_vehicle,mean_pct_to_rsu";

pub fn summarize_by_density(reports: &[SimulationReport]) -> Vec<DensitySummary> {
    let mut groups: BTreeMap<u32, Vec<&SimulationReport>> = BTreeMap::new();
    for r in reports {
        groups.entry(r.n_vehicles).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(n, rs)| {
            let with_data: Vec<_> = rs.iter().filter(|r| !r.no_data).collect();
            let k = with_data.len();
            let mean = |f: fn(&SimulationReport) -> f64| {
                if k == 0 {
                    0.0
                } else {
                    with_data.iter().map(|r| f(r)).sum::<f64>() / k as f64
                }
            };
            DensitySummary {
                n_vehicles: n,
                runs: rs.len(),
                runs_with_data: k,
                mean_pct_to_vehicle: mean(|r| r.pct_to_vehicle),
                mean_pct_to_rsu: mean(|r| r.pct_to_rsu),
            }
        })
        .collect()
}

pub fn summary_to_csv(rows: &[DensitySummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for s in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{:.3}",
            s.n_vehicles, s.runs, s.runs_with_data, s.mean_pct_to_vehicle, s.mean_pct_to_rsu
        );
    }
    out
}

/// One line of the event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: f64,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub vv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub txn: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub vehicle: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub from: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub to: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub phase: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}

impl LogRecord {
    pub fn new(t: f64, kind: &str) -> Self {
        Self {
            t,
            kind: kind.to_string(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    buf: String,
    lines: usize,
}

impl EventLog {
    pub fn push(&mut self, rec: &LogRecord) {
        self.buf
            .push_str(&serde_json::to_string(rec).expect("log records serialize"));
        self.buf.push('\n');
        self.lines += 1;
    }

    pub fn len(&self) -> usize {
        self.lines
    }

    pub fn is_empty(&self) -> bool {
        self.lines == 0
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn into_string(self) -> String {
        self.buf
    }
}

/// What a replay of the event log says about a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LogAudit {
    pub to_vehicle: u64,
    pub to_rsu: u64,
    pub aborted: u64,
    /// Aborts not followed by an RSU fallback, an RSU retry or a failure
    /// of the same VV.
    pub stranded: u64,
}

/// Replays a JSON-lines event log.
pub fn audit_log(jsonl: &str) -> Result<LogAudit, serde_json::Error> {
    let mut audit = LogAudit::default();
    let mut pending: BTreeMap<String, u64> = BTreeMap::new();
    for line in jsonl.lines().filter(|l| !l.is_empty()) {
        let rec: LogRecord = serde_json::from_str(line)?;
        match (rec.kind.as_str(), rec.phase.as_deref()) {
            ("txn_phase", Some("activated")) => {
                if rec.to.as_deref().is_some_and(|t| t.starts_with('r')) {
                    audit.to_rsu += 1;
                } else {
                    audit.to_vehicle += 1;
                }
            }
            ("txn_phase", Some("aborted")) => {
                audit.aborted += 1;
                if let Some(vv) = &rec.vv {
                    *pending.entry(vv.clone()).or_default() += 1;
                }
            }
            ("fallback_rsu" | "emergency_rsu" | "rsu_retry" | "vv_failed", _) => {
                if let Some(vv) = &rec.vv {
                    pending.remove(vv);
                }
            }
            _ => {}
        }
    }
    audit.stranded = pending.values().sum();
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{RsuId, TxnId, VehicleId, VvId};
    use crate::migration::AbortReason;

    fn txn(candidate: HostRef, end: Phase) -> MigrationTransaction {
        let mut t = MigrationTransaction::new(TxnId(0), VvId(0), HostRef::Vehicle(VehicleId(1)), candidate, 0.0, false);
        if end == Phase::Activated {
            t.advance(Phase::StopAndCopy { remaining: 1.0 }, 1.0).unwrap();
            t.advance(Phase::Committed, 1.5).unwrap();
        }
        t.advance(end, 2.0).unwrap();
        t
    }

    #[test]
    fn outcome_classification() {
        let mut c = OutcomeCounts::default();
        c.record_outcome(&txn(HostRef::Vehicle(VehicleId(2)), Phase::Activated))
            .unwrap();
        assert_eq!((c.to_vehicle, c.to_rsu, c.failed), (1, 0, 0));
        c.record_outcome(&txn(HostRef::Rsu(RsuId(0)), Phase::Activated))
            .unwrap();
        assert_eq!((c.to_vehicle, c.to_rsu, c.failed), (1, 1, 0));
        // an abort followed by a successful fallback is two records
        c.record_outcome(&txn(
            HostRef::Vehicle(VehicleId(2)),
            Phase::Aborted {
                reason: AbortReason::CandidateLost,
            },
        ))
        .unwrap();
        c.record_outcome(&txn(HostRef::Rsu(RsuId(0)), Phase::Activated))
            .unwrap();
        assert_eq!((c.to_vehicle, c.to_rsu, c.failed), (1, 2, 1));
        assert!((c.downtime_sum - 3.0).abs() < 1e-12);

        let open = MigrationTransaction::new(
            TxnId(5),
            VvId(0),
            HostRef::Vehicle(VehicleId(1)),
            HostRef::Rsu(RsuId(0)),
            0.0,
            false,
        );
        assert!(matches!(
            c.record_outcome(&open),
            Err(ReportError::NotTerminal(TxnId(5)))
        ));
    }

    fn counts(v: u64, r: u64) -> OutcomeCounts {
        OutcomeCounts {
            to_vehicle: v,
            to_rsu: r,
            ..Default::default()
        }
    }

    #[test]
    fn percentages() {
        let rep = finalize(1, 8, &counts(7, 3), VvTally::default());
        assert_eq!(rep.pct_to_vehicle, 70.0);
        assert_eq!(rep.pct_to_rsu, 30.0);
        assert!(!rep.no_data);

        let rep = finalize(1, 8, &counts(0, 0), VvTally::default());
        assert_eq!((rep.pct_to_vehicle, rep.pct_to_rsu), (0.0, 0.0));
        assert!(rep.no_data);

        let rep = finalize(1, 8, &counts(1, 2), VvTally::default());
        assert!((rep.pct_to_vehicle - 100.0 / 3.0).abs() < 1e-12);
        assert!(rep.csv_row().contains(",33.333,"));
        assert!((rep.pct_to_vehicle + rep.pct_to_rsu - 100.0).abs() < 1e-9);
    }

    #[test]
    fn csv_layout() {
        let one = reports_to_csv(&[finalize(4, 8, &counts(1, 1), VvTally::default())]);
        assert_eq!(one.lines().count(), 2);
        assert_eq!(one.lines().next().unwrap(), REPORT_HEADER);
        assert!(one.ends_with('\n') && !one.contains('\r'));

        let mut reports = Vec::new();
        for n in [32, 4, 16, 8] {
            for seed in (0..20).rev() {
                reports.push(finalize(seed, n, &counts(seed, 1), VvTally::default()));
            }
        }
        let text = reports_to_csv(&reports);
        assert_eq!(text.lines().count(), 81);
        let keys: Vec<(u32, u64)> = text
            .lines()
            .skip(1)
            .map(|l| {
                let mut f = l.split(',');
                let seed = f.next().unwrap().parse().unwrap();
                (f.next().unwrap().parse().unwrap(), seed)
            })
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn unwritable_path_is_named() {
        let path = Path::new("/nonexistent-dir/report.csv");
        let err = emit_csv(&[], path).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/report.csv"));
    }

    #[test]
    fn audit_counts_and_stranding() {
        let mut log = EventLog::default();
        let mut r = LogRecord::new(1.0, "txn_phase");
        r.vv = Some("vv0".into());
        r.to = Some("v2".into());
        r.phase = Some("aborted".into());
        log.push(&r);
        let mut f = LogRecord::new(1.0, "fallback_rsu");
        f.vv = Some("vv0".into());
        log.push(&f);
        let mut a = LogRecord::new(3.0, "txn_phase");
        a.vv = Some("vv0".into());
        a.to = Some("r0".into());
        a.phase = Some("activated".into());
        log.push(&a);
        let mut b = r.clone();
        b.vv = Some("vv1".into());
        log.push(&b);
        let audit = audit_log(log.as_str()).unwrap();
        assert_eq!(audit.to_rsu, 1);
        assert_eq!(audit.aborted, 2);
        assert_eq!(audit.stranded, 1);
    }
}
