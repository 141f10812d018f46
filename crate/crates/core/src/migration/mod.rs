//! Migration decisions, candidate selection and the pre-copy transfer model.
//!
//! The transaction state machine lives in [`transaction`]; the engine drives
//! it with message deliveries and timers.

mod transaction;
mod transfer;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use transaction::{AbortReason, MigrationTransaction, Phase, PhaseError};
pub use transfer::{plan_transfer, TransferPlan};

use crate::directory::{Directory, VehicleState};
use crate::geo::{classify_speed, distance, quantize_heading, GeoPosition, Heading8, Kinematics, SpeedClass};
use crate::ids::{RsuId, VehicleId};
use crate::provisioning::VirtualVehicle;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MigrationError {
    #[error("invalid transfer parameters: {0}")]
    InvalidTransfer(String),
    #[error("member is {distance} m from the reference, not inside the {radius} m zone")]
    NotInZone { distance: f64, radius: f64 },
    #[error("unknown selection policy {0:?}")]
    UnknownPolicy(String),
}

/// True when the host's quantized heading or speed class no longer matches
/// the request. Location never triggers against the current host.
pub fn needs_migration(vv: &VirtualVehicle, host: &VehicleState) -> bool {
    let heading = quantize_heading(host.heading_deg).ok();
    let class = classify_speed(host.speed_kmh).ok();
    heading != Some(vv.params.heading) || class != Some(vv.params.speed_class)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    #[default]
    MinWorkload,
    Random,
    MaxRemainingTime,
}

impl fmt::Display for SelectionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionPolicy::MinWorkload => "min_workload",
            SelectionPolicy::Random => "random",
            SelectionPolicy::MaxRemainingTime => "max_remaining_time",
        })
    }
}

impl FromStr for SelectionPolicy {
    type Err = MigrationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min_workload" => Ok(Self::MinWorkload),
            "random" => Ok(Self::Random),
            "max_remaining_time" => Ok(Self::MaxRemainingTime),
            other => Err(MigrationError::UnknownPolicy(other.to_string())),
        }
    }
}

/// Inputs to one candidate search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateQuery {
    pub current_rsu: RsuId,
    pub location: GeoPosition,
    pub speed_class: SpeedClass,
    pub heading: Heading8,
    pub zone_radius: f64,
    pub exclude: Option<VehicleId>,
    /// Motion of the zone's reference point, used by the remaining-time
    /// policy. A stationary point for RSU-hosted retries.
    pub reference: Kinematics,
    pub horizon_cap_s: f64,
}

/// A zone member that matches the requested speed class and heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub id: VehicleId,
    pub distance: f64,
    pub workload: u32,
}

/// Zone members under `query.current_rsu` matching class and sector, in
/// `(distance, id)` order.
pub fn matching_candidates(dir: &Directory, query: &CandidateQuery) -> Vec<Match> {
    dir.query_zone(query.location, query.zone_radius, query.exclude)
        .into_iter()
        .filter(|v| v.current_rsu == Some(query.current_rsu))
        .filter(|v| {
            classify_speed(v.speed_kmh).ok() == Some(query.speed_class)
                && quantize_heading(v.heading_deg).ok() == Some(query.heading)
        })
        .map(|v| Match {
            id: v.id,
            distance: distance(v.position, query.location),
            workload: v.workload,
        })
        .collect()
}

/// Picks a destination vehicle for a migration, or `None` when nothing in
/// the zone matches.
pub fn select_candidate<R: Rng + ?Sized>(
    dir: &Directory,
    query: &CandidateQuery,
    policy: SelectionPolicy,
    rng: &mut R,
) -> Option<VehicleId> {
    let matches = matching_candidates(dir, query);
    if matches.is_empty() {
        return None;
    }
    match policy {
        // matches are already (distance, id) ordered, so min_by_key keeps the
        // first of equal workloads
        SelectionPolicy::MinWorkload => matches.iter().min_by_key(|m| m.workload).map(|m| m.id),
        SelectionPolicy::Random => Some(matches[rng.gen_range(0..matches.len())].id),
        SelectionPolicy::MaxRemainingTime => {
            let mut best: Option<(f64, &Match)> = None;
            for m in &matches {
                let member = dir.vehicles[&m.id].kinematics();
                let t = remaining_time_in_zone(&member, &query.reference, query.zone_radius, query.horizon_cap_s)
                    .unwrap_or(0.0);
                let better = match best {
                    None => true,
                    Some((bt, bm)) => t > bt || (t == bt && m.workload < bm.workload),
                };
                if better {
                    best = Some((t, m));
                }
            }
            best.map(|(_, m)| m.id)
        }
    }
}

/// Seconds until `member` leaves the disc of radius `radius` centered on
/// `reference`, both moving at constant velocity. Capped at `horizon_cap_s`,
/// which is also returned when the relative velocity is zero.
pub fn remaining_time_in_zone(
    member: &Kinematics,
    reference: &Kinematics,
    radius: f64,
    horizon_cap_s: f64,
) -> Result<f64, MigrationError> {
    let px = member.position.x - reference.position.x;
    let py = member.position.y - reference.position.y;
    let d = px.hypot(py);
    if !(d < radius) {
        return Err(MigrationError::NotInZone { distance: d, radius });
    }
    let (mvx, mvy) = member.velocity();
    let (rvx, rvy) = reference.velocity();
    let (vx, vy) = (mvx - rvx, mvy - rvy);
    let a = vx * vx + vy * vy;
    if a == 0.0 {
        return Ok(horizon_cap_s);
    }
    // |p + v t|^2 = r^2  =>  a t^2 + b t + c = 0 with c < 0, one positive root
    let b = 2.0 * (px * vx + py * vy);
    let c = px * px + py * py - radius * radius;
    let sq = (b * b - 4.0 * a * c).sqrt();
    let t = if b <= 0.0 {
        (-b + sq) / (2.0 * a)
    } else {
        (2.0 * c) / (-b - sq)
    };
    Ok(if t.is_finite() {
        t.min(horizon_cap_s)
    } else {
        horizon_cap_s
    })
}
