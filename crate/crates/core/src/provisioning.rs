//! Consumer-facing lifecycle of a virtual vehicle: initial placement,
//! driving-parameter updates and arrival detection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::Rng;

use crate::directory::{Directory, VehicleState};
use crate::geo::{classify_speed, distance, quantize_heading, GeoPosition, Heading8, SpeedClass, SAME_LOCATION_M};
use crate::ids::{HostRef, VehicleId, VvId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProvisionError {
    #[error("no vehicle near {0} matches the request")]
    NoHostAvailable(GeoPosition),
    #[error("unknown virtual vehicle {0}")]
    UnknownVv(VvId),
    #[error("virtual vehicle {vv} is {lifecycle:?}")]
    InvalidLifecycle { vv: VvId, lifecycle: Lifecycle },
    #[error("invalid driving parameters: {0}")]
    InvalidParams(String),
}

/// What the consumer asks the virtual vehicle to do.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivingParams {
    pub source: GeoPosition,
    pub destination: GeoPosition,
    pub speed_class: SpeedClass,
    pub heading: Heading8,
}

impl DrivingParams {
    pub fn validate(&self) -> Result<(), ProvisionError> {
        if !self.source.is_finite() || !self.destination.is_finite() {
            return Err(ProvisionError::InvalidParams("non-finite location".into()));
        }
        if self.source == self.destination {
            return Err(ProvisionError::InvalidParams("source equals destination".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lifecycle {
    Requested,
    Creating,
    Active,
    Migrating,
    Completed,
    Failed,
}

impl Lifecycle {
    pub fn is_terminal(self) -> bool {
        matches!(self, Lifecycle::Completed | Lifecycle::Failed)
    }

    /// Creating, Active or Migrating: the VV occupies a host.
    pub fn is_live(self) -> bool {
        matches!(self, Lifecycle::Creating | Lifecycle::Active | Lifecycle::Migrating)
    }

    pub fn can_transition_to(self, next: Lifecycle) -> bool {
        use Lifecycle::*;
        matches!(
            (self, next),
            (Requested, Creating)
                | (Creating, Active)
                | (Active, Migrating)
                | (Migrating, Active)
                | (Active, Completed)
                | (Creating, Failed)
                | (Active, Failed)
                | (Migrating, Failed)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VvStats {
    pub migrations_to_vehicle: u32,
    pub migrations_to_rsu: u32,
    pub failed_migrations: u32,
    pub total_downtime: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualVehicle {
    pub id: VvId,
    pub consumer: String,
    pub params: DrivingParams,
    pub image_size_mb: f64,
    pub dirty_rate_mbps: f64,
    pub host: Option<HostRef>,
    pub lifecycle: Lifecycle,
    pub stats: VvStats,
    /// Last location of a vehicle host; zone center while RSU-hosted.
    pub anchor: GeoPosition,
    pub requested_at: f64,
}

impl VirtualVehicle {
    pub fn new(
        id: VvId,
        consumer: String,
        params: DrivingParams,
        image_size_mb: f64,
        dirty_rate_mbps: f64,
        now: f64,
    ) -> Self {
        Self {
            id,
            consumer,
            params,
            image_size_mb,
            dirty_rate_mbps,
            host: None,
            lifecycle: Lifecycle::Requested,
            stats: VvStats::default(),
            anchor: params.source,
            requested_at: now,
        }
    }

    pub fn set_lifecycle(&mut self, next: Lifecycle) -> Result<(), ProvisionError> {
        if !self.lifecycle.can_transition_to(next) {
            return Err(ProvisionError::InvalidLifecycle {
                vv: self.id,
                lifecycle: self.lifecycle,
            });
        }
        self.lifecycle = next;
        Ok(())
    }
}

/// Whether `v` could host a VV with these parameters: near the source, in
/// the requested speed class and heading sector.
pub fn is_eligible_host(v: &VehicleState, params: &DrivingParams, radius: f64) -> bool {
    v.is_selectable()
        && distance(v.position, params.source) < radius
        && classify_speed(v.speed_kmh).ok() == Some(params.speed_class)
        && quantize_heading(v.heading_deg).ok() == Some(params.heading)
}

/// Eligible vehicles in id order.
pub fn eligible_hosts(dir: &Directory, params: &DrivingParams, radius: f64) -> Vec<VehicleId> {
    dir.vehicles
        .values()
        .filter(|v| is_eligible_host(v, params, radius))
        .map(|v| v.id)
        .collect()
}

/// Picks a uniformly random eligible host and places a new VV there in the
/// `Creating` state.
pub fn request_virtual_vehicle<R: Rng + ?Sized>(
    dir: &mut Directory,
    consumer: &str,
    params: DrivingParams,
    image_size_mb: f64,
    dirty_rate_mbps: f64,
    now: f64,
    rng: &mut R,
) -> Result<VvId, ProvisionError> {
    params.validate()?;
    if !(image_size_mb >= 0.0) || !(dirty_rate_mbps >= 0.0) {
        return Err(ProvisionError::InvalidParams(
            "image size and dirty rate must be non-negative".into(),
        ));
    }
    let eligible = eligible_hosts(dir, &params, dir.config.zone_radius_m);
    if eligible.is_empty() {
        return Err(ProvisionError::NoHostAvailable(params.source));
    }
    let host = eligible[rng.gen_range(0..eligible.len())];
    let id = dir.next_vv_id();
    let mut vv = VirtualVehicle::new(id, consumer.to_string(), params, image_size_mb, dirty_rate_mbps, now);
    vv.lifecycle = Lifecycle::Creating;
    vv.host = Some(HostRef::Vehicle(host));
    vv.anchor = dir.vehicles[&host].position;
    dir.vvs.insert(id, vv);
    dir.attach_primary(HostRef::Vehicle(host), id);
    Ok(id)
}

/// Creation delay elapsed.
pub fn mark_created(dir: &mut Directory, vv: VvId) -> Result<(), ProvisionError> {
    dir.vvs
        .get_mut(&vv)
        .ok_or(ProvisionError::UnknownVv(vv))?
        .set_lifecycle(Lifecycle::Active)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamsUpdate {
    /// The current vehicle host no longer matches and the VV is free to
    /// migrate.
    pub migration_needed: bool,
}

/// Replaces the driving parameters and re-evaluates the current host.
pub fn update_driving_params(
    dir: &mut Directory,
    vv_id: VvId,
    params: DrivingParams,
) -> Result<ParamsUpdate, ProvisionError> {
    params.validate()?;
    let vv = dir.vvs.get_mut(&vv_id).ok_or(ProvisionError::UnknownVv(vv_id))?;
    if !matches!(vv.lifecycle, Lifecycle::Active | Lifecycle::Migrating) {
        return Err(ProvisionError::InvalidLifecycle {
            vv: vv_id,
            lifecycle: vv.lifecycle,
        });
    }
    vv.params = params;
    let vv = &dir.vvs[&vv_id];
    let migration_needed = vv.lifecycle == Lifecycle::Active
        && match vv.host {
            Some(HostRef::Vehicle(h)) => dir
                .vehicles
                .get(&h)
                .is_some_and(|host| crate::migration::needs_migration(vv, host)),
            _ => false,
        };
    Ok(ParamsUpdate { migration_needed })
}

/// Completes an active VV whose vehicle host is within the same-location
/// band of the destination. RSU-hosted VVs never complete.
pub fn check_completion(dir: &mut Directory, vv_id: VvId) -> bool {
    let Some(vv) = dir.vvs.get(&vv_id) else { return false };
    if vv.lifecycle != Lifecycle::Active {
        return false;
    }
    let Some(HostRef::Vehicle(h)) = vv.host else {
        return false;
    };
    let Some(host) = dir.vehicles.get(&h) else { return false };
    if distance(host.position, vv.params.destination) >= SAME_LOCATION_M {
        return false;
    }
    let vv = dir.vvs.get_mut(&vv_id).expect("checked above");
    vv.lifecycle = Lifecycle::Completed;
    vv.host = None;
    dir.detach_primary(HostRef::Vehicle(h), vv_id);
    true
}
