//! Discrete-event simulation of the vehicular cloud.
//!
//! A run is single-threaded and a pure function of `(scenario, seed)`.
//! Randomness comes from three ChaCha streams derived from the seed: one for
//! mobility, one for the network and one for host selection, so changing the
//! loss rate never perturbs trajectories.

mod network;
mod protocol;
mod queue;
mod scenario;

use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

pub use network::{Endpoint, Network, NetworkConfig};
pub use queue::{EventQueue, SchedulingInPast};
pub use scenario::{
    ConfigError, ConsumersConfig, DrivingUpdateConfig, LeaveConfig, ProtocolConfig, RequestConfig, RsuConfig,
    RunConfig, Scenario, VehiclesConfig, WorldConfig,
};

use crate::directory::{Directory, RsuState, VehicleInfo, VehicleStatus};
use crate::geo::{GeoPosition, Kinematics};
use crate::ids::{HostRef, RsuId, TxnId, VehicleId, VvId};
use crate::metrics::{self, EventLog, LogRecord, OutcomeCounts, SimulationReport, VvTally};
use crate::migration::{AbortReason, CandidateQuery, MigrationTransaction};
use crate::mobility::{self, load_trace, GridParams, TraceError, TraceRecord, WorldBounds};
use crate::provisioning::{self, DrivingParams, Lifecycle, ProvisionError};

const MOBILITY_STREAM: u64 = 1;
const NETWORK_STREAM: u64 = 2;
const SELECTION_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("invariant violated at t={time} s after event #{seq} ({event}): {detail}")]
    InvariantViolation {
        time: f64,
        seq: u64,
        event: String,
        detail: String,
    },
}

/// Protocol messages carried by the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Message {
    LocationUpdate {
        vehicle: VehicleId,
        kinematics: Kinematics,
    },
    ReserveRequest {
        txn: TxnId,
    },
    ReserveReply {
        txn: TxnId,
        accepted: bool,
    },
    /// Candidate tells the source the image has arrived.
    TransferReceived {
        txn: TxnId,
    },
    /// Source commits and releases the candidate.
    CommitAck {
        txn: TxnId,
    },
}

impl Message {
    fn name(&self) -> &'static str {
        match self {
            Message::LocationUpdate { .. } => "location_update",
            Message::ReserveRequest { .. } => "reserve_request",
            Message::ReserveReply { .. } => "reserve_reply",
            Message::TransferReceived { .. } => "transfer_received",
            Message::CommitAck { .. } => "commit_ack",
        }
    }

    fn txn(&self) -> Option<TxnId> {
        match *self {
            Message::LocationUpdate { .. } => None,
            Message::ReserveRequest { txn }
            | Message::ReserveReply { txn, .. }
            | Message::TransferReceived { txn }
            | Message::CommitAck { txn } => Some(txn),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    MobilityTick,
    /// Periodic report timer of a synthetic vehicle.
    VehicleUpdate {
        vehicle: VehicleId,
    },
    /// Replay of one trace row.
    TraceRow {
        index: usize,
    },
    LivenessCheck,
    VvRequest {
        request: usize,
        attempt: u32,
    },
    CreationDone {
        vv: VvId,
    },
    DrivingUpdate {
        update: usize,
    },
    VehicleLeave {
        vehicle: VehicleId,
    },
    MsgDelivery {
        from: Endpoint,
        to: Endpoint,
        msg: Message,
    },
    ExchangeTimeout {
        txn: TxnId,
        attempt: u32,
    },
    TransferRoundDone {
        txn: TxnId,
        round: u32,
    },
    RetryTimer {
        vv: VvId,
    },
    ActivationDone {
        txn: TxnId,
    },
    InjectViolation,
}

impl EventKind {
    pub fn describe(&self) -> String {
        match self {
            EventKind::MobilityTick => "mobility_tick".into(),
            EventKind::VehicleUpdate { vehicle } => format!("vehicle_update {vehicle}"),
            EventKind::TraceRow { index } => format!("trace_row {index}"),
            EventKind::LivenessCheck => "liveness_check".into(),
            EventKind::VvRequest { request, attempt } => format!("vv_request #{request} attempt {attempt}"),
            EventKind::CreationDone { vv } => format!("creation_done {vv}"),
            EventKind::DrivingUpdate { update } => format!("driving_update #{update}"),
            EventKind::VehicleLeave { vehicle } => format!("vehicle_leave {vehicle}"),
            EventKind::MsgDelivery { from, to, msg } => format!("deliver {} {from}->{to}", msg.name()),
            EventKind::ExchangeTimeout { txn, attempt } => format!("exchange_timeout {txn} attempt {attempt}"),
            EventKind::TransferRoundDone { txn, round } => format!("transfer_round_done {txn} round {round}"),
            EventKind::RetryTimer { vv } => format!("retry_timer {vv}"),
            EventKind::ActivationDone { txn } => format!("activation_done {txn}"),
            EventKind::InjectViolation => "inject_violation".into(),
        }
    }
}

/// One sampled vehicle position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub vehicle: VehicleId,
    pub kinematics: Kinematics,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub record_trajectories: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: SimulationReport,
    pub events_jsonl: String,
    pub trajectories: Vec<TrajectoryPoint>,
    pub events_processed: u64,
    pub messages_sent: u64,
    pub messages_dropped: u64,
}

pub fn run(scenario: &Scenario, seed: u64) -> Result<RunOutput, SimError> {
    run_with(scenario, seed, RunOptions::default())
}

pub fn run_with(scenario: &Scenario, seed: u64, options: RunOptions) -> Result<RunOutput, SimError> {
    scenario.validate()?;
    let trace = match scenario.trace_path() {
        Some(p) => load_trace(&p)?,
        None => Vec::new(),
    };
    let mut sim = Simulation::new(scenario.clone(), seed, trace, options);
    sim.initialize();
    sim.run_loop()?;
    Ok(sim.finish())
}

fn stream(seed: u64, id: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub(crate) struct Simulation {
    scenario: Scenario,
    seed: u64,
    world: WorldBounds,
    grid: GridParams,
    queue: EventQueue<EventKind>,
    dir: Directory,
    network: Network,
    mobility_rng: ChaCha12Rng,
    selection_rng: ChaCha12Rng,
    /// Ground-truth kinematics; the directory only knows what was reported.
    truth: BTreeMap<VehicleId, Kinematics>,
    trace: Vec<TraceRecord>,
    trace_ids: BTreeMap<String, VehicleId>,
    txns: BTreeMap<TxnId, MigrationTransaction>,
    active_txn: BTreeMap<VvId, TxnId>,
    activating: BTreeSet<TxnId>,
    next_txn: u64,
    consumer_vv: BTreeMap<String, VvId>,
    counts: OutcomeCounts,
    log: EventLog,
    options: RunOptions,
    trajectories: Vec<TrajectoryPoint>,
    events_processed: u64,
    inject_pending: bool,
}

impl Simulation {
    fn new(scenario: Scenario, seed: u64, trace: Vec<TraceRecord>, options: RunOptions) -> Self {
        let network = Network::new(scenario.network.clone(), stream(seed, NETWORK_STREAM));
        Self {
            world: scenario.world_bounds(),
            grid: scenario.grid_params(),
            dir: Directory::new(scenario.directory_config()),
            network,
            mobility_rng: stream(seed, MOBILITY_STREAM),
            selection_rng: stream(seed, SELECTION_STREAM),
            queue: EventQueue::new(),
            truth: BTreeMap::new(),
            trace,
            trace_ids: BTreeMap::new(),
            txns: BTreeMap::new(),
            active_txn: BTreeMap::new(),
            activating: BTreeSet::new(),
            next_txn: 0,
            consumer_vv: BTreeMap::new(),
            counts: OutcomeCounts::default(),
            log: EventLog::default(),
            options,
            trajectories: Vec::new(),
            events_processed: 0,
            inject_pending: false,
            scenario,
            seed,
        }
    }

    fn now(&self) -> f64 {
        self.queue.now()
    }

    fn schedule(&mut self, at: f64, event: EventKind) {
        self.queue
            .schedule(at, event)
            .expect("handlers only schedule at or after the current time");
    }

    fn after(&mut self, delay: f64, event: EventKind) {
        let at = self.now() + delay.max(0.0);
        self.schedule(at, event);
    }

    fn record(&mut self, kind: &str, fill: impl FnOnce(&mut LogRecord)) {
        let mut rec = LogRecord::new(self.now(), kind);
        fill(&mut rec);
        debug!("{}", serde_json::to_string(&rec).unwrap_or_default());
        self.log.push(&rec);
    }

    fn proto(&self) -> &ProtocolConfig {
        &self.scenario.protocol
    }

    fn record_trajectory(&mut self, vehicle: VehicleId, kinematics: Kinematics) {
        if self.options.record_trajectories {
            self.trajectories.push(TrajectoryPoint {
                t: self.now(),
                vehicle,
                kinematics,
            });
        }
    }

    fn initialize(&mut self) {
        let rsu_bw = self
            .scenario
            .rsus
            .bandwidth_mbps
            .unwrap_or(self.scenario.network.rsu_bandwidth_mbps);
        for (i, [x, y]) in self.scenario.rsus.positions.clone().into_iter().enumerate() {
            let rsu = RsuState::new(
                RsuId(i as u32),
                GeoPosition::new(x, y),
                self.scenario.rsus.coverage_radius_m,
                rsu_bw,
            );
            self.dir.add_rsu(rsu).expect("scenario validation rejects bad RSUs");
        }

        let interval = self.proto().update_interval_s;
        let end = self.scenario.run.end_time_s;
        if self.trace.is_empty() {
            let n = self.scenario.vehicles.count.unwrap_or(0);
            for i in 0..n {
                let id = VehicleId(i);
                let k = mobility::random_grid_start(&self.world, &self.grid, &mut self.mobility_rng);
                self.register(id, k);
                // stagger the periodic reports across one interval
                let first = interval * f64::from(i + 1) / f64::from(n);
                self.schedule(first, EventKind::VehicleUpdate { vehicle: id });
            }
            if n > 0 {
                self.schedule(self.scenario.vehicles.mobility_tick_s, EventKind::MobilityTick);
            }
        } else {
            for index in 0..self.trace.len() {
                let t = self.trace[index].t_s;
                if t <= end {
                    self.schedule(t, EventKind::TraceRow { index });
                }
            }
        }
        self.schedule(interval, EventKind::LivenessCheck);

        let consumers = self.scenario.consumers.clone();
        for (request, r) in consumers.requests.iter().enumerate() {
            self.schedule(r.at_s, EventKind::VvRequest { request, attempt: 0 });
        }
        for (update, u) in consumers.driving_updates.iter().enumerate() {
            self.schedule(u.at_s, EventKind::DrivingUpdate { update });
        }
        for l in self.scenario.vehicles.leave.clone() {
            self.schedule(
                l.at_s,
                EventKind::VehicleLeave {
                    vehicle: VehicleId(l.vehicle),
                },
            );
        }
        if let Some(t) = self.scenario.run.inject_violation_at_s {
            self.schedule(t, EventKind::InjectViolation);
        }
    }

    fn register(&mut self, id: VehicleId, k: Kinematics) {
        let info = VehicleInfo {
            id,
            kinematics: k,
            resources: self.scenario.resources(),
        };
        let now = self.now();
        if self.dir.register_vehicle(info, now).is_ok() {
            self.truth.insert(id, k);
            self.record_trajectory(id, k);
            self.record("vehicle_registered", |r| r.vehicle = Some(id.to_string()));
        }
    }

    fn all_vvs_terminal(&self) -> bool {
        self.dir.vvs.values().all(|v| v.lifecycle.is_terminal())
    }

    fn run_loop(&mut self) -> Result<(), SimError> {
        let end = self.scenario.run.end_time_s;
        while let Some(t) = self.queue.peek_time() {
            if t > end {
                break;
            }
            let (time, seq, event) = self.queue.pop().expect("peeked");
            let label = event.describe();
            self.handle(event);
            self.events_processed += 1;
            if let Err(detail) = self.check_invariants() {
                return Err(SimError::InvariantViolation {
                    time,
                    seq,
                    event: label,
                    detail,
                });
            }
        }
        Ok(())
    }

    fn handle(&mut self, event: EventKind) {
        match event {
            EventKind::MobilityTick => self.on_mobility_tick(),
            EventKind::VehicleUpdate { vehicle } => self.on_vehicle_update(vehicle),
            EventKind::TraceRow { index } => self.on_trace_row(index),
            EventKind::LivenessCheck => self.on_liveness_check(),
            EventKind::VvRequest { request, attempt } => self.on_vv_request(request, attempt),
            EventKind::CreationDone { vv } => self.on_creation_done(vv),
            EventKind::DrivingUpdate { update } => self.on_driving_update(update),
            EventKind::VehicleLeave { vehicle } => self.on_vehicle_leave(vehicle),
            EventKind::MsgDelivery { from, to, msg } => self.on_delivery(from, to, msg),
            EventKind::ExchangeTimeout { txn, attempt } => self.on_exchange_timeout(txn, attempt),
            EventKind::TransferRoundDone { txn, round } => self.on_round_done(txn, round),
            EventKind::RetryTimer { vv } => self.on_retry_timer(vv),
            EventKind::ActivationDone { txn } => self.on_activation_done(txn),
            EventKind::InjectViolation => self.on_inject_violation(),
        }
    }

    fn send(&mut self, from: Endpoint, to: Endpoint, msg: Message) {
        match self.network.transmit(from, to) {
            Some(latency) => self.after(latency, EventKind::MsgDelivery { from, to, msg }),
            None => {
                if let Some(txn) = msg.txn() {
                    self.record("message_dropped", |r| {
                        r.txn = Some(txn.to_string());
                        r.from = Some(from.to_string());
                        r.to = Some(to.to_string());
                        r.detail = Some(msg.name().to_string());
                    });
                }
            }
        }
    }

    fn is_gone(&self, vehicle: VehicleId) -> bool {
        self.dir
            .vehicles
            .get(&vehicle)
            .is_none_or(|v| v.status == VehicleStatus::Left)
    }

    fn on_mobility_tick(&mut self) {
        let dt = self.scenario.vehicles.mobility_tick_s;
        let ids: Vec<VehicleId> = self.truth.keys().copied().collect();
        for id in ids {
            if self.is_gone(id) {
                continue;
            }
            let next = mobility::step_vehicle(&self.truth[&id], dt, &self.world, &self.grid, &mut self.mobility_rng);
            self.truth.insert(id, next);
            self.record_trajectory(id, next);
        }
        self.after(dt, EventKind::MobilityTick);
    }

    fn on_vehicle_update(&mut self, vehicle: VehicleId) {
        if self.is_gone(vehicle) {
            return;
        }
        let kinematics = self.truth[&vehicle];
        self.send(
            Endpoint::Vehicle(vehicle),
            Endpoint::Spcm,
            Message::LocationUpdate { vehicle, kinematics },
        );
        let interval = self.proto().update_interval_s;
        self.after(interval, EventKind::VehicleUpdate { vehicle });
    }

    fn on_trace_row(&mut self, index: usize) {
        let rec = self.trace[index].clone();
        let kinematics = rec.kinematics();
        match self.trace_ids.get(&rec.vehicle_id) {
            None => {
                let id = VehicleId(self.trace_ids.len() as u32);
                self.trace_ids.insert(rec.vehicle_id.clone(), id);
                self.register(id, kinematics);
            }
            Some(&id) => {
                if self.is_gone(id) {
                    return;
                }
                self.truth.insert(id, kinematics);
                self.record_trajectory(id, kinematics);
                self.send(
                    Endpoint::Vehicle(id),
                    Endpoint::Spcm,
                    Message::LocationUpdate {
                        vehicle: id,
                        kinematics,
                    },
                );
            }
        }
    }

    fn on_location_update(&mut self, vehicle: VehicleId, kinematics: Kinematics) {
        let now = self.now();
        let Ok(ack) = self.dir.update_vehicle(vehicle, kinematics, now) else {
            return;
        };
        if ack.reactivated {
            self.record("vehicle_reactivated", |r| r.vehicle = Some(vehicle.to_string()));
        }
        let hosted: Vec<VvId> = self.dir.vehicles[&vehicle].hosted_vvs.iter().copied().collect();
        for vv in hosted {
            self.evaluate_vv(vv);
        }
    }

    /// Completion check, then the migration trigger, for a VV on a vehicle.
    fn evaluate_vv(&mut self, vv: VvId) {
        let Some(v) = self.dir.vvs.get(&vv) else { return };
        if v.lifecycle != Lifecycle::Active {
            return;
        }
        let Some(HostRef::Vehicle(h)) = v.host else { return };
        let host = &self.dir.vehicles[&h];
        if host.status != VehicleStatus::Active || host.leaving {
            return;
        }
        if provisioning::check_completion(&mut self.dir, vv) {
            self.record("vv_completed", |r| {
                r.vv = Some(vv.to_string());
                r.vehicle = Some(h.to_string());
            });
            return;
        }
        let v = &self.dir.vvs[&vv];
        if crate::migration::needs_migration(v, &self.dir.vehicles[&h]) {
            self.decide_migration(vv, "host_mismatch");
        }
    }

    fn on_liveness_check(&mut self) {
        let now = self.now();
        for id in self.dir.deactivate_stale(now) {
            self.record("vehicle_deactivated", |r| r.vehicle = Some(id.to_string()));
            self.on_host_failure(id);
        }
        let interval = self.proto().update_interval_s;
        if !(self.queue.is_empty() && self.all_vvs_terminal()) {
            self.after(interval, EventKind::LivenessCheck);
        }
    }

    fn on_vv_request(&mut self, request: usize, attempt: u32) {
        let r = self.scenario.consumers.requests[request].clone();
        let params = DrivingParams {
            source: GeoPosition::new(r.source[0], r.source[1]),
            destination: GeoPosition::new(r.destination[0], r.destination[1]),
            speed_class: r.speed_class,
            heading: r.heading,
        };
        let image = r.image_mb.unwrap_or(self.scenario.consumers.image_mb);
        let dirty = r.dirty_rate_mbps.unwrap_or(self.scenario.consumers.dirty_rate_mbps);
        let now = self.now();
        match provisioning::request_virtual_vehicle(
            &mut self.dir,
            &r.consumer,
            params,
            image,
            dirty,
            now,
            &mut self.selection_rng,
        ) {
            Ok(vv) => {
                self.consumer_vv.insert(r.consumer.clone(), vv);
                let host = self.dir.vvs[&vv].host;
                self.record("vv_requested", |rec| {
                    rec.vv = Some(vv.to_string());
                    rec.to = host.map(|h| h.to_string());
                    rec.detail = Some(r.consumer.clone());
                });
                let delay = self.proto().creation_delay_s;
                self.after(delay, EventKind::CreationDone { vv });
            }
            Err(e) => {
                let give_up = self.scenario.consumers.max_retries.is_some_and(|m| attempt >= m);
                self.record("vv_request_rejected", |rec| {
                    rec.detail = Some(format!("{}: {e}", r.consumer));
                });
                if matches!(e, ProvisionError::NoHostAvailable(_)) && !give_up {
                    let delay = self
                        .scenario
                        .consumers
                        .retry_interval_s
                        .unwrap_or(self.proto().update_interval_s);
                    self.after(
                        delay,
                        EventKind::VvRequest {
                            request,
                            attempt: attempt + 1,
                        },
                    );
                }
            }
        }
    }

    fn on_creation_done(&mut self, vv: VvId) {
        let Some(v) = self.dir.vvs.get(&vv) else { return };
        if v.lifecycle != Lifecycle::Creating {
            return;
        }
        let Some(HostRef::Vehicle(h)) = v.host else { return };
        provisioning::mark_created(&mut self.dir, vv).expect("Creating -> Active");
        self.record("vv_created", |r| {
            r.vv = Some(vv.to_string());
            r.vehicle = Some(h.to_string());
        });
        if self.dir.vehicles[&h].leaving {
            self.evacuate(vv);
        }
    }

    fn on_driving_update(&mut self, update: usize) {
        let u = self.scenario.consumers.driving_updates[update].clone();
        let Some(&vv) = self.consumer_vv.get(&u.consumer) else {
            self.record("driving_update_ignored", |r| r.detail = Some(u.consumer.clone()));
            return;
        };
        let mut params = self.dir.vvs[&vv].params;
        if let Some([x, y]) = u.destination {
            params.destination = GeoPosition::new(x, y);
        }
        if let Some(c) = u.speed_class {
            params.speed_class = c;
        }
        if let Some(h) = u.heading {
            params.heading = h;
        }
        match provisioning::update_driving_params(&mut self.dir, vv, params) {
            Ok(ack) => {
                self.record("driving_update", |r| {
                    r.vv = Some(vv.to_string());
                    r.detail = Some(format!("{} {}", params.speed_class.label(), params.heading));
                });
                if ack.migration_needed {
                    self.decide_migration(vv, "params_changed");
                }
            }
            Err(e) => self.record("driving_update_rejected", |r| {
                r.vv = Some(vv.to_string());
                r.detail = Some(e.to_string());
            }),
        }
    }

    fn on_vehicle_leave(&mut self, vehicle: VehicleId) {
        let active = self
            .dir
            .vehicles
            .get(&vehicle)
            .is_some_and(|v| v.status == VehicleStatus::Active && !v.leaving);
        if !active {
            self.record("leave_rejected", |r| r.vehicle = Some(vehicle.to_string()));
            return;
        }
        self.record("leave_requested", |r| r.vehicle = Some(vehicle.to_string()));
        self.abort_incoming(vehicle);

        let policy = self.proto().policy;
        let horizon = self.proto().horizon_cap_s;
        let rng = &mut self.selection_rng;
        let response = self
            .dir
            .handle_leave(vehicle, |d, host, vv| {
                let q = leave_query(d, host.kinematics(), &vv.params, host.id, horizon)?;
                crate::migration::select_candidate(d, &q, policy, rng)
            })
            .expect("checked active");
        for dest in response.destinations {
            match dest.destination {
                Some(to) => self.start_transaction(dest.vv, HostRef::Vehicle(vehicle), to, false),
                None => self.fail_vv(dest.vv, "no_coverage"),
            }
        }
        self.check_left(vehicle);
    }

    /// Moves a VV off a leaving vehicle.
    fn evacuate(&mut self, vv: VvId) {
        let v = &self.dir.vvs[&vv];
        let Some(HostRef::Vehicle(h)) = v.host else { return };
        let host = &self.dir.vehicles[&h];
        let policy = self.proto().policy;
        let horizon = self.proto().horizon_cap_s;
        let target = leave_query(&self.dir, host.kinematics(), &v.params, h, horizon)
            .and_then(|q| crate::migration::select_candidate(&self.dir, &q, policy, &mut self.selection_rng))
            .map(HostRef::Vehicle)
            .or_else(|| self.dir.current_rsu(host.position).ok().map(HostRef::Rsu));
        match target {
            Some(to) => self.start_transaction(vv, HostRef::Vehicle(h), to, false),
            None => self.fail_vv(vv, "no_coverage"),
        }
    }

    fn check_left(&mut self, vehicle: VehicleId) {
        if self.dir.complete_leave_if_drained(vehicle) {
            self.record("vehicle_left", |r| r.vehicle = Some(vehicle.to_string()));
        }
    }

    /// A vehicle went silent: abort what depends on it and rescue its VVs.
    fn on_host_failure(&mut self, vehicle: VehicleId) {
        self.abort_incoming(vehicle);
        let hosted: Vec<VvId> = self.dir.vehicles[&vehicle].hosted_vvs.iter().copied().collect();
        for vv in hosted {
            match self.dir.vvs[&vv].lifecycle {
                Lifecycle::Creating => self.fail_vv(vv, "host_lost_during_creation"),
                Lifecycle::Active => self.emergency_to_rsu(vv),
                Lifecycle::Migrating => {
                    let id = self.active_txn[&vv];
                    let t = &self.txns[&id];
                    if t.source == HostRef::Vehicle(vehicle) && !t.emergency && !t.phase.is_committed() {
                        self.abort(id, AbortReason::SourceLost);
                    }
                }
                _ => {}
            }
        }
        self.check_left(vehicle);
    }

    fn fail_vv(&mut self, vv: VvId, why: &str) {
        let v = self.dir.vvs.get_mut(&vv).expect("known vv");
        let host = v.host.take();
        v.lifecycle = Lifecycle::Failed;
        if let Some(h) = host {
            self.dir.detach_primary(h, vv);
        }
        self.record("vv_failed", |r| {
            r.vv = Some(vv.to_string());
            r.from = host.map(|h| h.to_string());
            r.detail = Some(why.to_string());
        });
        if let Some(HostRef::Vehicle(h)) = host {
            self.check_left(h);
        }
    }

    fn on_inject_violation(&mut self) {
        if let Some(v) = self.dir.vehicles.values_mut().next() {
            v.workload += 1;
        } else {
            self.inject_pending = true;
        }
    }

    /// Global safety checks run after every event.
    fn check_invariants(&self) -> Result<(), String> {
        if self.inject_pending {
            return Err("injected violation".into());
        }
        self.dir.check_consistency()?;
        for (id, vv) in &self.dir.vvs {
            let (primary, reserved) = self.dir.holders(*id);
            if !vv.lifecycle.is_live() {
                if !primary.is_empty() || !reserved.is_empty() {
                    return Err(format!(
                        "{id} is {:?} but still held by {primary:?} {reserved:?}",
                        vv.lifecycle
                    ));
                }
                continue;
            }
            if primary.len() != 1 || Some(primary[0]) != vv.host {
                return Err(format!("{id} has primaries {primary:?}, expected {:?}", vv.host));
            }
            if reserved.len() > 1 {
                return Err(format!("{id} reserved on {} hosts", reserved.len()));
            }
            let txn = self.active_txn.get(id).map(|t| &self.txns[t]);
            if (vv.lifecycle == Lifecycle::Migrating) != txn.is_some() {
                return Err(format!(
                    "{id} is {:?} with transaction {:?}",
                    vv.lifecycle,
                    txn.map(|t| t.id)
                ));
            }
            if let Some(&r) = reserved.first() {
                match txn {
                    Some(t) if t.candidate == r && !t.phase.is_committed() => {}
                    _ => return Err(format!("{id} has a stray reservation on {r}")),
                }
            }
            if let Some(HostRef::Vehicle(h)) = vv.host {
                let status = self.dir.vehicles[&h].status;
                if status != VehicleStatus::Active && txn.is_none() {
                    return Err(format!("{id} stranded on {status:?} vehicle {h}"));
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> RunOutput {
        let mut tally = VvTally::default();
        for vv in self.dir.vvs.values() {
            match vv.lifecycle {
                Lifecycle::Completed => tally.completed += 1,
                Lifecycle::Failed => tally.failed += 1,
                _ => tally.censored += 1,
            }
        }
        let n_vehicles = self.dir.vehicles.len() as u32;
        let report = metrics::finalize(self.seed, n_vehicles, &self.counts, tally);
        RunOutput {
            report,
            messages_sent: self.network.sent,
            messages_dropped: self.network.dropped,
            events_processed: self.events_processed,
            trajectories: self.trajectories,
            events_jsonl: self.log.into_string(),
        }
    }
}

/// Candidate query around a vehicle host, or `None` without RSU coverage.
fn leave_query(
    dir: &Directory,
    host: Kinematics,
    params: &DrivingParams,
    exclude: VehicleId,
    horizon_cap_s: f64,
) -> Option<CandidateQuery> {
    let rsu = dir.current_rsu(host.position).ok()?;
    Some(CandidateQuery {
        current_rsu: rsu,
        location: host.position,
        speed_class: params.speed_class,
        heading: params.heading,
        zone_radius: dir.config.zone_radius_m,
        exclude: Some(exclude),
        reference: host,
        horizon_cap_s,
    })
}

#[cfg(test)]
mod tests;
