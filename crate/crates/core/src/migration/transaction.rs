use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::TransferPlan;
use crate::ids::{HostRef, TxnId, VvId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AbortReason {
    CandidateLost,
    SourceLost,
    ReservationRejected,
    ReserveTimeout,
    AckTimeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "phase")]
pub enum Phase {
    Reserve,
    PreCopy { round: u32, remaining: f64 },
    StopAndCopy { remaining: f64 },
    AwaitAck,
    Committed,
    Activated,
    Aborted { reason: AbortReason },
}

impl Phase {
    fn rank(&self) -> u8 {
        match self {
            Phase::Reserve => 0,
            Phase::PreCopy { .. } => 1,
            Phase::StopAndCopy { .. } => 2,
            Phase::AwaitAck => 3,
            Phase::Committed => 4,
            Phase::Activated => 5,
            Phase::Aborted { .. } => 6,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Phase::Activated | Phase::Aborted { .. })
    }

    pub fn is_committed(&self) -> bool {
        matches!(self, Phase::Committed | Phase::Activated)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Phase::Reserve => "reserve",
            Phase::PreCopy { .. } => "pre_copy",
            Phase::StopAndCopy { .. } => "stop_and_copy",
            Phase::AwaitAck => "await_ack",
            Phase::Committed => "committed",
            Phase::Activated => "activated",
            Phase::Aborted { .. } => "aborted",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::PreCopy { round, .. } => write!(f, "pre_copy#{round}"),
            Phase::Aborted { reason } => write!(f, "aborted({reason:?})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("transaction {txn}: illegal transition {from} -> {to}")]
pub struct PhaseError {
    pub txn: TxnId,
    pub from: String,
    pub to: String,
}

/// One attempt to move a VV from `source` to `candidate`.
///
/// Phases only move forward; a pre-copy phase may repeat with the next round
/// number, and any phase before `Committed` may abort. Emergency migrations
/// (the source has gone silent) skip pre-copy and the source handshake.
#[derive(Debug, Clone, PartialEq)]
pub struct MigrationTransaction {
    pub id: TxnId,
    pub vv: VvId,
    pub source: HostRef,
    pub candidate: HostRef,
    pub phase: Phase,
    pub started_at: f64,
    pub ended_at: Option<f64>,
    /// Accumulated freeze time; final once terminal.
    pub downtime: f64,
    pub emergency: bool,
    pub plan: Option<TransferPlan>,
    /// When the VV stopped serving, if it has.
    pub frozen_since: Option<f64>,
    /// Sends of the current request/response exchange so far.
    pub attempts: u32,
}

impl MigrationTransaction {
    pub fn new(id: TxnId, vv: VvId, source: HostRef, candidate: HostRef, now: f64, emergency: bool) -> Self {
        Self {
            id,
            vv,
            source,
            candidate,
            phase: Phase::Reserve,
            started_at: now,
            ended_at: None,
            downtime: 0.0,
            emergency,
            plan: None,
            frozen_since: None,
            attempts: 0,
        }
    }

    pub fn can_advance(&self, next: &Phase) -> bool {
        let cur = &self.phase;
        if cur.is_terminal() {
            return false;
        }
        match (cur, next) {
            (_, Phase::Aborted { .. }) => !cur.is_committed(),
            (Phase::PreCopy { round: a, .. }, Phase::PreCopy { round: b, .. }) => *b == a + 1,
            _ => next.rank() > cur.rank(),
        }
    }

    pub fn advance(&mut self, next: Phase, now: f64) -> Result<(), PhaseError> {
        if !self.can_advance(&next) {
            return Err(PhaseError {
                txn: self.id,
                from: self.phase.to_string(),
                to: next.to_string(),
            });
        }
        if matches!(next, Phase::StopAndCopy { .. }) && self.frozen_since.is_none() {
            self.frozen_since = Some(now);
        }
        if next.is_terminal() {
            if let Some(t0) = self.frozen_since {
                self.downtime = now - t0;
            }
            self.ended_at = Some(now);
        }
        self.phase = next;
        Ok(())
    }

    pub fn is_terminal(&self) -> bool {
        self.phase.is_terminal()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{RsuId, VehicleId};

    fn txn() -> MigrationTransaction {
        MigrationTransaction::new(
            TxnId(1),
            VvId(0),
            HostRef::Vehicle(VehicleId(1)),
            HostRef::Vehicle(VehicleId(2)),
            0.0,
            false,
        )
    }

    #[test]
    fn happy_path_order() {
        let mut t = txn();
        t.advance(
            Phase::PreCopy {
                round: 1,
                remaining: 100.0,
            },
            1.0,
        )
        .unwrap();
        t.advance(
            Phase::PreCopy {
                round: 2,
                remaining: 20.0,
            },
            9.0,
        )
        .unwrap();
        t.advance(Phase::StopAndCopy { remaining: 4.0 }, 10.6).unwrap();
        t.advance(Phase::AwaitAck, 10.92).unwrap();
        t.advance(Phase::Committed, 11.0).unwrap();
        assert!(t
            .advance(
                Phase::Aborted {
                    reason: AbortReason::AckTimeout
                },
                11.0
            )
            .is_err());
        t.advance(Phase::Activated, 11.5).unwrap();
        assert!((t.downtime - 0.9).abs() < 1e-9);
        assert_eq!(t.ended_at, Some(11.5));
        assert!(t.advance(Phase::Reserve, 12.0).is_err());
    }

    #[test]
    fn rounds_must_be_consecutive() {
        let mut t = txn();
        t.advance(
            Phase::PreCopy {
                round: 1,
                remaining: 1.0,
            },
            0.0,
        )
        .unwrap();
        assert!(t
            .advance(
                Phase::PreCopy {
                    round: 3,
                    remaining: 1.0
                },
                0.0
            )
            .is_err());
        assert!(t.advance(Phase::Reserve, 0.0).is_err());
    }

    #[test]
    fn abort_before_commit_only() {
        let mut t = txn();
        t.advance(
            Phase::Aborted {
                reason: AbortReason::ReserveTimeout,
            },
            0.08,
        )
        .unwrap();
        assert!(t.is_terminal());
        assert_eq!(t.downtime, 0.0);

        let mut t = MigrationTransaction::new(
            TxnId(2),
            VvId(0),
            HostRef::Vehicle(VehicleId(1)),
            HostRef::Rsu(RsuId(0)),
            0.0,
            true,
        );
        t.advance(Phase::StopAndCopy { remaining: 10.0 }, 0.0).unwrap();
        t.advance(Phase::Committed, 1.0).unwrap();
        t.advance(Phase::Activated, 1.5).unwrap();
        assert_eq!(t.downtime, 1.5);
    }
}
