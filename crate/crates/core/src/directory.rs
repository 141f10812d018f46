//! The cloud manager's registry of vehicles, roadside units and virtual
//! vehicles.
//!
//! Every host keeps two sets: `hosted_vvs` holds the virtual vehicles it is
//! primary for, `reserved_vvs` the ones it has accepted a reservation for
//! while a migration toward it is in flight. `workload` counts both, so a
//! reservation provisionally loads the candidate.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{distance, GeoPosition, Kinematics};
use crate::ids::{HostRef, RsuId, VehicleId, VvId};
use crate::provisioning::{Lifecycle, VirtualVehicle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DirectoryError {
    #[error("vehicle {0} is already registered")]
    DuplicateRegistration(VehicleId),
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error("vehicle {0} has left the cloud")]
    VehicleLeft(VehicleId),
    #[error("vehicle {0} is not active")]
    NotActive(VehicleId),
    #[error("unknown roadside unit {0}")]
    UnknownRsu(RsuId),
    #[error("no roadside unit covers {0}")]
    NoCoverage(GeoPosition),
    #[error("invalid vehicle report: {0}")]
    InvalidReport(String),
    #[error("roadside unit {0}: {1}")]
    InvalidRsu(RsuId, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resources {
    pub cpu_units: u32,
    pub storage_mb: u64,
}

impl Default for Resources {
    fn default() -> Self {
        Self {
            cpu_units: 2,
            storage_mb: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleStatus {
    Active,
    Deactivated,
    Left,
}

/// What a vehicle sends when it joins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleInfo {
    pub id: VehicleId,
    pub kinematics: Kinematics,
    pub resources: Resources,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub position: GeoPosition,
    pub speed_kmh: f64,
    pub heading_deg: f64,
    pub workload: u32,
    pub resources: Resources,
    pub status: VehicleStatus,
    pub last_update: f64,
    pub hosted_vvs: BTreeSet<VvId>,
    pub reserved_vvs: BTreeSet<VvId>,
    /// Nearest covering roadside unit at the last report.
    pub current_rsu: Option<RsuId>,
    /// Set once a leave request is accepted; the vehicle turns `Left` when
    /// it no longer hosts or reserves anything.
    pub leaving: bool,
}

impl VehicleState {
    pub fn kinematics(&self) -> Kinematics {
        Kinematics::new(self.position, self.speed_kmh, self.heading_deg)
    }

    /// Active and not on its way out; only these are offered as hosts.
    pub fn is_selectable(&self) -> bool {
        self.status == VehicleStatus::Active && !self.leaving
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsuState {
    pub id: RsuId,
    pub position: GeoPosition,
    pub coverage_radius: f64,
    pub bandwidth_mbps: f64,
    pub hosted_vvs: BTreeSet<VvId>,
    pub reserved_vvs: BTreeSet<VvId>,
}

impl RsuState {
    pub fn new(id: RsuId, position: GeoPosition, coverage_radius: f64, bandwidth_mbps: f64) -> Self {
        Self {
            id,
            position,
            coverage_radius,
            bandwidth_mbps,
            hosted_vvs: BTreeSet::new(),
            reserved_vvs: BTreeSet::new(),
        }
    }

    pub fn covers(&self, p: GeoPosition) -> bool {
        distance(self.position, p) <= self.coverage_radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectoryConfig {
    pub update_interval_s: f64,
    pub miss_limit: u32,
    pub zone_radius_m: f64,
}

impl Default for DirectoryConfig {
    fn default() -> Self {
        Self {
            update_interval_s: 10.0,
            miss_limit: 2,
            zone_radius_m: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateAck {
    /// The vehicle had been deactivated and is now active again.
    pub reactivated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaveDestination {
    pub vv: VvId,
    /// `None` when neither a vehicle nor a covering RSU is available.
    pub destination: Option<HostRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaveResponse {
    pub vehicle: VehicleId,
    pub destinations: Vec<LeaveDestination>,
    /// Nothing was hosted, so the vehicle left on the spot.
    pub left_immediately: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Directory {
    pub vehicles: BTreeMap<VehicleId, VehicleState>,
    pub rsus: BTreeMap<RsuId, RsuState>,
    pub vvs: BTreeMap<VvId, VirtualVehicle>,
    pub config: DirectoryConfig,
    next_vv: u32,
}

fn validate_kinematics(k: &Kinematics) -> Result<(), DirectoryError> {
    if !k.position.is_finite() {
        return Err(DirectoryError::InvalidReport(format!(
            "position {} not finite",
            k.position
        )));
    }
    if !k.speed_kmh.is_finite() || k.speed_kmh < 0.0 {
        return Err(DirectoryError::InvalidReport(format!("speed {}", k.speed_kmh)));
    }
    if !(0.0..360.0).contains(&k.heading_deg) {
        return Err(DirectoryError::InvalidReport(format!("heading {}", k.heading_deg)));
    }
    Ok(())
}

impl Directory {
    pub fn new(config: DirectoryConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }

    pub fn add_rsu(&mut self, rsu: RsuState) -> Result<(), DirectoryError> {
        if !(rsu.coverage_radius > 0.0) || !rsu.coverage_radius.is_finite() {
            return Err(DirectoryError::InvalidRsu(
                rsu.id,
                "coverage radius must be positive".into(),
            ));
        }
        if !(rsu.bandwidth_mbps > 0.0) {
            return Err(DirectoryError::InvalidRsu(rsu.id, "bandwidth must be positive".into()));
        }
        if self.rsus.contains_key(&rsu.id) {
            return Err(DirectoryError::InvalidRsu(rsu.id, "duplicate id".into()));
        }
        self.rsus.insert(rsu.id, rsu);
        Ok(())
    }

    pub fn vehicle(&self, id: VehicleId) -> Result<&VehicleState, DirectoryError> {
        self.vehicles.get(&id).ok_or(DirectoryError::UnknownVehicle(id))
    }

    pub fn vehicle_mut(&mut self, id: VehicleId) -> Result<&mut VehicleState, DirectoryError> {
        self.vehicles.get_mut(&id).ok_or(DirectoryError::UnknownVehicle(id))
    }

    pub fn rsu(&self, id: RsuId) -> Result<&RsuState, DirectoryError> {
        self.rsus.get(&id).ok_or(DirectoryError::UnknownRsu(id))
    }

    pub fn next_vv_id(&mut self) -> VvId {
        let id = VvId(self.next_vv);
        self.next_vv += 1;
        id
    }

    pub fn register_vehicle(&mut self, info: VehicleInfo, now: f64) -> Result<VehicleId, DirectoryError> {
        validate_kinematics(&info.kinematics)?;
        if let Some(existing) = self.vehicles.get(&info.id) {
            if existing.status != VehicleStatus::Left {
                return Err(DirectoryError::DuplicateRegistration(info.id));
            }
        }
        let current_rsu = self.current_rsu(info.kinematics.position).ok();
        self.vehicles.insert(
            info.id,
            VehicleState {
                id: info.id,
                position: info.kinematics.position,
                speed_kmh: info.kinematics.speed_kmh,
                heading_deg: info.kinematics.heading_deg,
                workload: 0,
                resources: info.resources,
                status: VehicleStatus::Active,
                last_update: now,
                hosted_vvs: BTreeSet::new(),
                reserved_vvs: BTreeSet::new(),
                current_rsu,
                leaving: false,
            },
        );
        Ok(info.id)
    }

    pub fn update_vehicle(&mut self, id: VehicleId, k: Kinematics, now: f64) -> Result<UpdateAck, DirectoryError> {
        validate_kinematics(&k)?;
        let current_rsu = self.current_rsu(k.position).ok();
        let v = self.vehicle_mut(id)?;
        if v.status == VehicleStatus::Left {
            return Err(DirectoryError::VehicleLeft(id));
        }
        let reactivated = v.status == VehicleStatus::Deactivated;
        v.position = k.position;
        v.speed_kmh = k.speed_kmh;
        v.heading_deg = k.heading_deg;
        v.last_update = now;
        v.status = VehicleStatus::Active;
        v.current_rsu = current_rsu;
        Ok(UpdateAck { reactivated })
    }

    /// Deactivates every active vehicle that has been silent for strictly
    /// more than `miss_limit` update intervals.
    pub fn deactivate_stale(&mut self, now: f64) -> Vec<VehicleId> {
        let limit = self.config.miss_limit as f64 * self.config.update_interval_s;
        let mut out = Vec::new();
        for v in self.vehicles.values_mut() {
            if v.status == VehicleStatus::Active && now - v.last_update > limit {
                v.status = VehicleStatus::Deactivated;
                out.push(v.id);
            }
        }
        out
    }

    /// Accepts a leave request. `choose` picks a destination vehicle for each
    /// active hosted VV; the vehicle's current RSU is the fallback. Migrations
    /// are the caller's job.
    pub fn handle_leave<F>(&mut self, id: VehicleId, mut choose: F) -> Result<LeaveResponse, DirectoryError>
    where
        F: FnMut(&Directory, &VehicleState, &VirtualVehicle) -> Option<VehicleId>,
    {
        let v = self.vehicle_mut(id)?;
        if v.status != VehicleStatus::Active {
            return Err(DirectoryError::NotActive(id));
        }
        v.leaving = true;
        let v = self.vehicle(id)?;
        let mut destinations = Vec::new();
        for vv_id in &v.hosted_vvs {
            let Some(vv) = self.vvs.get(vv_id) else { continue };
            if vv.lifecycle != Lifecycle::Active {
                continue;
            }
            let destination = match choose(self, v, vv) {
                Some(c) => Some(HostRef::Vehicle(c)),
                None => self.current_rsu(v.position).ok().map(HostRef::Rsu),
            };
            destinations.push(LeaveDestination {
                vv: *vv_id,
                destination,
            });
        }
        let left_immediately = self.complete_leave_if_drained(id);
        Ok(LeaveResponse {
            vehicle: id,
            destinations,
            left_immediately,
        })
    }

    /// Marks a leaving vehicle `Left` once it holds nothing. Returns whether
    /// it did.
    pub fn complete_leave_if_drained(&mut self, id: VehicleId) -> bool {
        match self.vehicles.get_mut(&id) {
            Some(v) if v.leaving && v.hosted_vvs.is_empty() && v.reserved_vvs.is_empty() => {
                v.status = VehicleStatus::Left;
                v.leaving = false;
                true
            }
            _ => false,
        }
    }

    /// Active, non-leaving vehicles strictly closer than `radius` to `center`,
    /// nearest first, ties by id.
    pub fn query_zone(&self, center: GeoPosition, radius: f64, exclude: Option<VehicleId>) -> Vec<&VehicleState> {
        if !(radius > 0.0) {
            return Vec::new();
        }
        let mut zone: Vec<(f64, &VehicleState)> = self
            .vehicles
            .values()
            .filter(|v| v.is_selectable() && Some(v.id) != exclude)
            .map(|v| (distance(v.position, center), v))
            .filter(|(d, _)| *d < radius)
            .collect();
        zone.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
        zone.into_iter().map(|(_, v)| v).collect()
    }

    /// Nearest RSU whose coverage contains `position`, ties by id.
    pub fn current_rsu(&self, position: GeoPosition) -> Result<RsuId, DirectoryError> {
        self.rsus
            .values()
            .filter(|r| r.covers(position))
            .map(|r| (distance(r.position, position), r.id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
            .ok_or(DirectoryError::NoCoverage(position))
    }

    pub fn host_position(&self, host: HostRef) -> Option<GeoPosition> {
        match host {
            HostRef::Vehicle(v) => self.vehicles.get(&v).map(|s| s.position),
            HostRef::Rsu(r) => self.rsus.get(&r).map(|s| s.position),
        }
    }

    /// Is this host able to run a VV right now?
    pub fn host_alive(&self, host: HostRef) -> bool {
        match host {
            HostRef::Vehicle(v) => self.vehicles.get(&v).is_some_and(|s| s.status == VehicleStatus::Active),
            HostRef::Rsu(r) => self.rsus.contains_key(&r),
        }
    }

    fn host_sets(&mut self, host: HostRef) -> Option<(&mut BTreeSet<VvId>, &mut BTreeSet<VvId>, Option<&mut u32>)> {
        match host {
            HostRef::Vehicle(v) => self
                .vehicles
                .get_mut(&v)
                .map(|s| (&mut s.hosted_vvs, &mut s.reserved_vvs, Some(&mut s.workload))),
            HostRef::Rsu(r) => self
                .rsus
                .get_mut(&r)
                .map(|s| (&mut s.hosted_vvs, &mut s.reserved_vvs, None)),
        }
    }

    /// Makes `host` primary for `vv` and loads it by one.
    pub fn attach_primary(&mut self, host: HostRef, vv: VvId) {
        if let Some((hosted, _, workload)) = self.host_sets(host) {
            if hosted.insert(vv) {
                if let Some(w) = workload {
                    *w += 1;
                }
            }
        }
    }

    pub fn detach_primary(&mut self, host: HostRef, vv: VvId) {
        if let Some((hosted, _, workload)) = self.host_sets(host) {
            if hosted.remove(&vv) {
                if let Some(w) = workload {
                    *w = w.saturating_sub(1);
                }
            }
        }
    }

    pub fn reserve(&mut self, host: HostRef, vv: VvId) {
        if let Some((_, reserved, workload)) = self.host_sets(host) {
            if reserved.insert(vv) {
                if let Some(w) = workload {
                    *w += 1;
                }
            }
        }
    }

    pub fn release_reservation(&mut self, host: HostRef, vv: VvId) {
        if let Some((_, reserved, workload)) = self.host_sets(host) {
            if reserved.remove(&vv) {
                if let Some(w) = workload {
                    *w = w.saturating_sub(1);
                }
            }
        }
    }

    /// Turns a reservation into primary hosting; the workload is unchanged
    /// because the reservation already counted.
    pub fn promote_reservation(&mut self, host: HostRef, vv: VvId) {
        if let Some((hosted, reserved, _)) = self.host_sets(host) {
            if reserved.remove(&vv) {
                hosted.insert(vv);
            }
        }
    }

    /// Workload bookkeeping and cross-reference checks. Returns the first
    /// violation found.
    pub fn check_consistency(&self) -> Result<(), String> {
        for v in self.vehicles.values() {
            let expected = (v.hosted_vvs.len() + v.reserved_vvs.len()) as u32;
            if v.workload != expected {
                return Err(format!(
                    "vehicle {} workload {} but hosts {} and reserves {}",
                    v.id,
                    v.workload,
                    v.hosted_vvs.len(),
                    v.reserved_vvs.len()
                ));
            }
            if v.status == VehicleStatus::Left && expected != 0 {
                return Err(format!("vehicle {} left while holding {} VVs", v.id, expected));
            }
            for vv in v.hosted_vvs.iter().chain(&v.reserved_vvs) {
                if !self.vvs.contains_key(vv) {
                    return Err(format!("vehicle {} references unknown {}", v.id, vv));
                }
            }
        }
        for r in self.rsus.values() {
            for vv in r.hosted_vvs.iter().chain(&r.reserved_vvs) {
                if !self.vvs.contains_key(vv) {
                    return Err(format!("rsu {} references unknown {}", r.id, vv));
                }
            }
        }
        Ok(())
    }

    /// Hosts holding `vv` as primary and as reservation, in that order.
    pub fn holders(&self, vv: VvId) -> (Vec<HostRef>, Vec<HostRef>) {
        let mut primary = Vec::new();
        let mut reserved = Vec::new();
        for v in self.vehicles.values() {
            if v.hosted_vvs.contains(&vv) {
                primary.push(HostRef::Vehicle(v.id));
            }
            if v.reserved_vvs.contains(&vv) {
                reserved.push(HostRef::Vehicle(v.id));
            }
        }
        for r in self.rsus.values() {
            if r.hosted_vvs.contains(&vv) {
                primary.push(HostRef::Rsu(r.id));
            }
            if r.reserved_vvs.contains(&vv) {
                reserved.push(HostRef::Rsu(r.id));
            }
        }
        (primary, reserved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{Heading8, SpeedClass};
    use crate::provisioning::{DrivingParams, VirtualVehicle};
    use proptest::prelude::*;

    fn info(id: u32, x: f64, y: f64) -> VehicleInfo {
        VehicleInfo {
            id: VehicleId(id),
            kinematics: Kinematics::new(GeoPosition::new(x, y), 35.0, 90.0),
            resources: Resources::default(),
        }
    }

    fn dir_with_rsu() -> Directory {
        let mut d = Directory::new(DirectoryConfig::default());
        d.add_rsu(RsuState::new(RsuId(0), GeoPosition::new(0.0, 0.0), 1000.0, 50.0))
            .unwrap();
        d
    }

    fn dummy_vv(d: &mut Directory, host: VehicleId) -> VvId {
        let id = d.next_vv_id();
        let params = DrivingParams {
            source: GeoPosition::new(0.0, 0.0),
            destination: GeoPosition::new(500.0, 0.0),
            speed_class: SpeedClass::Medium,
            heading: Heading8::E,
        };
        let mut vv = VirtualVehicle::new(id, "c".into(), params, 256.0, 2.0, 0.0);
        vv.lifecycle = Lifecycle::Active;
        vv.host = Some(HostRef::Vehicle(host));
        d.vvs.insert(id, vv);
        d.attach_primary(HostRef::Vehicle(host), id);
        id
    }

    #[test]
    fn register_fresh_and_duplicate() {
        let mut d = dir_with_rsu();
        d.register_vehicle(info(1, 0.0, 0.0), 0.0).unwrap();
        let v = d.vehicle(VehicleId(1)).unwrap();
        assert_eq!(v.status, VehicleStatus::Active);
        assert_eq!(v.workload, 0);
        assert_eq!(v.current_rsu, Some(RsuId(0)));
        assert_eq!(
            d.register_vehicle(info(1, 0.0, 0.0), 1.0),
            Err(DirectoryError::DuplicateRegistration(VehicleId(1)))
        );
    }

    #[test]
    fn reregister_after_leave() {
        let mut d = dir_with_rsu();
        d.register_vehicle(info(1, 0.0, 0.0), 0.0).unwrap();
        let resp = d.handle_leave(VehicleId(1), |_, _, _| None).unwrap();
        assert!(resp.left_immediately);
        assert!(resp.destinations.is_empty());
        assert_eq!(d.vehicle(VehicleId(1)).unwrap().status, VehicleStatus::Left);
        d.register_vehicle(info(1, 5.0, 5.0), 3.0).unwrap();
        let v = d.vehicle(VehicleId(1)).unwrap();
        assert_eq!(v.status, VehicleStatus::Active);
        assert!(v.hosted_vvs.is_empty());
    }

    #[test]
    fn update_paths() {
        let mut d = dir_with_rsu();
        d.register_vehicle(info(1, 0.0, 0.0), 0.0).unwrap();
        let k = Kinematics::new(GeoPosition::new(10.0, 0.0), 40.0, 180.0);
        let ack = d.update_vehicle(VehicleId(1), k, 10.0).unwrap();
        assert!(!ack.reactivated);
        let v = d.vehicle(VehicleId(1)).unwrap();
        assert_eq!(v.position, GeoPosition::new(10.0, 0.0));
        assert_eq!(v.last_update, 10.0);

        assert_eq!(d.deactivate_stale(100.0), vec![VehicleId(1)]);
        let ack = d.update_vehicle(VehicleId(1), k, 101.0).unwrap();
        assert!(ack.reactivated);
        assert_eq!(d.vehicle(VehicleId(1)).unwrap().status, VehicleStatus::Active);

        assert_eq!(
            d.update_vehicle(VehicleId(9), k, 101.0),
            Err(DirectoryError::UnknownVehicle(VehicleId(9)))
        );
    }

    #[test]
    fn stale_boundary_is_strict() {
        let mut d = dir_with_rsu();
        d.register_vehicle(info(1, 0.0, 0.0), 0.0).unwrap();
        d.register_vehicle(info(2, 0.0, 0.0), 0.0).unwrap();
        assert!(d.deactivate_stale(5.0).is_empty());
        d.update_vehicle(VehicleId(2), info(2, 0.0, 0.0).kinematics, 10.0)
            .unwrap();
        // miss_limit 2 x 10 s: exactly 20 s of silence is tolerated
        assert!(d.deactivate_stale(20.0).is_empty());
        // vehicle 1 silent for 3 intervals
        assert_eq!(d.deactivate_stale(30.0), vec![VehicleId(1)]);
        assert!(d.deactivate_stale(30.0).is_empty());
    }

    #[test]
    fn leave_with_neighbor_and_empty_zone() {
        let mut d = dir_with_rsu();
        d.register_vehicle(info(1, 0.0, 0.0), 0.0).unwrap();
        d.register_vehicle(info(2, 20.0, 0.0), 0.0).unwrap();
        let vv = dummy_vv(&mut d, VehicleId(1));
        let resp = d
            .handle_leave(VehicleId(1), |dir, host, _| {
                dir.query_zone(host.position, 100.0, Some(host.id))
                    .first()
                    .map(|v| v.id)
            })
            .unwrap();
        assert!(!resp.left_immediately);
        assert_eq!(
            resp.destinations,
            vec![LeaveDestination {
                vv,
                destination: Some(HostRef::Vehicle(VehicleId(2)))
            }]
        );
        assert!(d.vehicle(VehicleId(1)).unwrap().leaving);

        let mut d = dir_with_rsu();
        d.register_vehicle(info(1, 0.0, 0.0), 0.0).unwrap();
        let vv = dummy_vv(&mut d, VehicleId(1));
        let resp = d.handle_leave(VehicleId(1), |_, _, _| None).unwrap();
        assert_eq!(resp.destinations[0].vv, vv);
        assert_eq!(resp.destinations[0].destination, Some(HostRef::Rsu(RsuId(0))));
        assert!(matches!(
            d.handle_leave(VehicleId(7), |_, _, _| None),
            Err(DirectoryError::UnknownVehicle(_))
        ));
    }

    #[test]
    fn zone_examples() {
        let mut d = dir_with_rsu();
        let c = GeoPosition::new(0.0, 0.0);
        assert!(d.query_zone(c, 100.0, None).is_empty());
        d.register_vehicle(info(1, 100.0, 0.0), 0.0).unwrap();
        assert!(d.query_zone(c, 100.0, None).is_empty(), "distance == U is outside");
        d.register_vehicle(info(2, 0.0, 50.0), 0.0).unwrap();
        d.register_vehicle(info(3, 10.0, 0.0), 0.0).unwrap();
        d.register_vehicle(info(4, 200.0, 0.0), 0.0).unwrap();
        let ids: Vec<_> = d.query_zone(c, 100.0, None).iter().map(|v| v.id).collect();
        assert_eq!(ids, vec![VehicleId(3), VehicleId(2)]);
        let ids: Vec<_> = d
            .query_zone(c, 100.0, Some(VehicleId(3)))
            .iter()
            .map(|v| v.id)
            .collect();
        assert_eq!(ids, vec![VehicleId(2)]);
        d.deactivate_stale(1000.0);
        assert!(d.query_zone(c, 1e6, None).is_empty());
    }

    #[test]
    fn current_rsu_rules() {
        let mut d = Directory::new(DirectoryConfig::default());
        d.add_rsu(RsuState::new(RsuId(5), GeoPosition::new(0.0, 0.0), 500.0, 50.0))
            .unwrap();
        d.add_rsu(RsuState::new(RsuId(2), GeoPosition::new(500.0, 0.0), 500.0, 50.0))
            .unwrap();
        assert_eq!(d.current_rsu(GeoPosition::new(0.0, 0.0)), Ok(RsuId(5)));
        assert_eq!(d.current_rsu(GeoPosition::new(400.0, 0.0)), Ok(RsuId(2)));
        assert_eq!(d.current_rsu(GeoPosition::new(100.0, 0.0)), Ok(RsuId(5)));
        // equidistant: lower id wins
        assert_eq!(d.current_rsu(GeoPosition::new(250.0, 0.0)), Ok(RsuId(2)));
        assert!(matches!(
            d.current_rsu(GeoPosition::new(5000.0, 0.0)),
            Err(DirectoryError::NoCoverage(_))
        ));
    }

    #[test]
    fn reservation_bookkeeping() {
        let mut d = dir_with_rsu();
        d.register_vehicle(info(1, 0.0, 0.0), 0.0).unwrap();
        d.register_vehicle(info(2, 0.0, 0.0), 0.0).unwrap();
        let vv = dummy_vv(&mut d, VehicleId(1));
        let cand = HostRef::Vehicle(VehicleId(2));
        d.reserve(cand, vv);
        assert_eq!(d.vehicle(VehicleId(2)).unwrap().workload, 1);
        d.check_consistency().unwrap();
        d.promote_reservation(cand, vv);
        d.detach_primary(HostRef::Vehicle(VehicleId(1)), vv);
        assert_eq!(d.vehicle(VehicleId(1)).unwrap().workload, 0);
        assert_eq!(d.vehicle(VehicleId(2)).unwrap().workload, 1);
        assert_eq!(d.holders(vv), (vec![cand], vec![]));
        d.check_consistency().unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn zone_matches_set_comprehension(
            pts in prop::collection::vec((0.0..500.0f64, 0.0..500.0f64, any::<bool>()), 0..50),
            cx in 0.0..500.0f64, cy in 0.0..500.0f64, radius in 1.0..300.0f64,
            exclude in prop::option::of(0u32..50),
        ) {
            let mut d = dir_with_rsu();
            for (i, (x, y, stale)) in pts.iter().enumerate() {
                let t = if *stale { 0.0 } else { 100.0 };
                d.register_vehicle(info(i as u32, *x, *y), t).unwrap();
            }
            d.deactivate_stale(100.0);
            let center = GeoPosition::new(cx, cy);
            let got: Vec<VehicleId> = d.query_zone(center, radius, exclude.map(VehicleId)).iter().map(|v| v.id).collect();

            let mut expected: Vec<(f64, VehicleId)> = Vec::new();
            for (i, (x, y, stale)) in pts.iter().enumerate() {
                let dx = x - cx;
                let dy = y - cy;
                let dist = (dx * dx + dy * dy).sqrt();
                if !stale && Some(i as u32) != exclude && dist < radius {
                    expected.push((dist, VehicleId(i as u32)));
                }
            }
            expected.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let expected: Vec<VehicleId> = expected.into_iter().map(|(_, id)| id).collect();
            prop_assert_eq!(got, expected);
        }
    }
}
