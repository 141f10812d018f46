//! Migration transactions: decision, reservation, pre-copy rounds,
//! commit handshake, activation, abort and RSU fallback.

use super::{Endpoint, EventKind, Message, Simulation};
use crate::geo::Kinematics;
use crate::ids::{HostRef, TxnId, VehicleId, VvId};
use crate::migration::{
    plan_transfer, remaining_time_in_zone, select_candidate, AbortReason, CandidateQuery, MigrationTransaction, Phase,
    TransferPlan,
};
use crate::provisioning::Lifecycle;

impl Simulation {
    fn exchange_timeout(&self) -> f64 {
        2.0 * self.network.config.max_latency() + self.proto().timeout_guard_s
    }

    fn record_phase(&mut self, id: TxnId) {
        let t = &self.txns[&id];
        let (vv, from, to, phase) = (t.vv, t.source, t.candidate, t.phase);
        let emergency = t.emergency;
        self.record("txn_phase", |r| {
            r.vv = Some(vv.to_string());
            r.txn = Some(id.to_string());
            r.from = Some(from.to_string());
            r.to = Some(to.to_string());
            r.phase = Some(phase.name().to_string());
            r.detail = match phase {
                Phase::Aborted { reason } => Some(format!("{reason:?}")),
                Phase::PreCopy { round, .. } => Some(format!("round {round}")),
                _ if emergency => Some("emergency".into()),
                _ => None,
            };
        });
    }

    fn advance(&mut self, id: TxnId, next: Phase) {
        let now = self.now();
        self.txns
            .get_mut(&id)
            .expect("known transaction")
            .advance(next, now)
            .expect("engine drives phases forward");
        self.record_phase(id);
    }

    fn sample_remaining_time(&mut self, candidate: VehicleId, reference: &Kinematics) {
        let member = self.dir.vehicles[&candidate].kinematics();
        let radius = self.dir.config.zone_radius_m;
        if let Ok(t) = remaining_time_in_zone(&member, reference, radius, self.proto().horizon_cap_s) {
            self.counts.record_remaining_time(t);
        }
    }

    /// The host no longer fits the VV: pick a vehicle in the zone, or fall
    /// back to the current RSU.
    pub(super) fn decide_migration(&mut self, vv: VvId, why: &str) {
        let v = &self.dir.vvs[&vv];
        if v.lifecycle != Lifecycle::Active {
            return;
        }
        let Some(HostRef::Vehicle(h)) = v.host else { return };
        let params = v.params;
        let host = self.dir.vehicles[&h].kinematics();
        let Ok(rsu) = self.dir.current_rsu(host.position) else {
            self.fail_vv(vv, "no_coverage");
            return;
        };
        let query = CandidateQuery {
            current_rsu: rsu,
            location: host.position,
            speed_class: params.speed_class,
            heading: params.heading,
            zone_radius: self.dir.config.zone_radius_m,
            exclude: Some(h),
            reference: host,
            horizon_cap_s: self.proto().horizon_cap_s,
        };
        let policy = self.proto().policy;
        let choice = select_candidate(&self.dir, &query, policy, &mut self.selection_rng);
        self.record("migration_decision", |r| {
            r.vv = Some(vv.to_string());
            r.from = Some(h.to_string());
            r.to = Some(match choice {
                Some(c) => c.to_string(),
                None => rsu.to_string(),
            });
            r.detail = Some(why.to_string());
        });
        match choice {
            Some(c) => {
                self.sample_remaining_time(c, &host);
                self.start_transaction(vv, HostRef::Vehicle(h), HostRef::Vehicle(c), false);
            }
            None => self.fallback_to_rsu(vv),
        }
    }

    pub(super) fn start_transaction(&mut self, vv: VvId, source: HostRef, candidate: HostRef, emergency: bool) {
        let id = TxnId(self.next_txn);
        self.next_txn += 1;
        let now = self.now();
        self.dir.reserve(candidate, vv);
        self.dir
            .vvs
            .get_mut(&vv)
            .expect("known vv")
            .set_lifecycle(Lifecycle::Migrating)
            .expect("only active VVs migrate");
        self.txns
            .insert(id, MigrationTransaction::new(id, vv, source, candidate, now, emergency));
        self.active_txn.insert(vv, id);
        self.record_phase(id);
        self.send_exchange(id);
    }

    /// (Re)sends the request of the exchange the transaction is waiting on
    /// and arms its timeout.
    fn send_exchange(&mut self, id: TxnId) {
        let t = self.txns.get_mut(&id).expect("known transaction");
        t.attempts += 1;
        let attempt = t.attempts;
        let (from, to, msg) = match t.phase {
            Phase::Reserve => (Endpoint::Spcm, t.candidate.into(), Message::ReserveRequest { txn: id }),
            Phase::AwaitAck | Phase::Committed => (
                t.candidate.into(),
                t.source.into(),
                Message::TransferReceived { txn: id },
            ),
            _ => return,
        };
        self.send(from, to, msg);
        let timeout = self.exchange_timeout();
        self.after(timeout, EventKind::ExchangeTimeout { txn: id, attempt });
    }

    pub(super) fn on_exchange_timeout(&mut self, id: TxnId, attempt: u32) {
        let Some(t) = self.txns.get(&id) else { return };
        if t.is_terminal() || attempt != t.attempts || self.activating.contains(&id) {
            return;
        }
        let within_limit = t.attempts <= self.proto().message_retry_limit;
        // RSUs are wired and never give up on a VV
        let unlimited = t.candidate.is_rsu();
        match t.phase {
            Phase::Reserve if within_limit || unlimited => self.send_exchange(id),
            Phase::Reserve => self.abort(id, AbortReason::ReserveTimeout),
            Phase::AwaitAck if within_limit || unlimited => self.send_exchange(id),
            Phase::AwaitAck => self.abort(id, AbortReason::AckTimeout),
            Phase::Committed if within_limit => self.send_exchange(id),
            Phase::Committed => {
                // the source already committed; only its ack went missing
                self.activating.insert(id);
                let delay = self.proto().activation_delay_s;
                self.after(delay, EventKind::ActivationDone { txn: id });
            }
            _ => {}
        }
    }

    pub(super) fn on_delivery(&mut self, from: Endpoint, to: Endpoint, msg: Message) {
        if let Endpoint::Vehicle(v) = to {
            if self.is_gone(v) {
                return;
            }
        }
        match msg {
            Message::LocationUpdate { vehicle, kinematics } => self.on_location_update(vehicle, kinematics),
            Message::ReserveRequest { txn } => {
                let t = &self.txns[&txn];
                let accepted = match t.candidate {
                    HostRef::Rsu(_) => true,
                    HostRef::Vehicle(c) => {
                        let s = &self.dir.vehicles[&c];
                        s.is_selectable() && s.reserved_vvs.contains(&t.vv) && s.workload <= s.resources.cpu_units
                    }
                };
                self.send(to, from, Message::ReserveReply { txn, accepted });
            }
            Message::ReserveReply { txn, accepted } => {
                if self.txns[&txn].phase != Phase::Reserve {
                    return;
                }
                if accepted {
                    self.begin_transfer(txn);
                } else {
                    self.abort(txn, AbortReason::ReservationRejected);
                }
            }
            Message::TransferReceived { txn } => match self.txns[&txn].phase {
                Phase::AwaitAck => {
                    self.commit(txn);
                    self.send(to, from, Message::CommitAck { txn });
                }
                Phase::Committed => self.send(to, from, Message::CommitAck { txn }),
                _ => {}
            },
            Message::CommitAck { txn } => {
                if self.txns[&txn].phase == Phase::Committed && self.activating.insert(txn) {
                    let delay = self.proto().activation_delay_s;
                    self.after(delay, EventKind::ActivationDone { txn });
                }
            }
        }
    }

    fn rsu_bandwidth(&self, host: HostRef) -> f64 {
        match host {
            HostRef::Rsu(r) => self.dir.rsus[&r].bandwidth_mbps,
            HostRef::Vehicle(_) => self.network.config.vehicle_bandwidth_mbps,
        }
    }

    fn begin_transfer(&mut self, id: TxnId) {
        let t = &self.txns[&id];
        let vv = &self.dir.vvs[&t.vv];
        let (image, dirty) = (vv.image_size_mb, vv.dirty_rate_mbps);
        let plan = if t.emergency {
            // restore the last image at the RSU; nothing to pre-copy from a
            // silent host
            let bw = self.rsu_bandwidth(t.candidate);
            TransferPlan {
                round_durations: Vec::new(),
                round_mb: Vec::new(),
                stop_and_copy_mb: image,
                downtime: image / bw,
            }
        } else {
            let rsus = &self.dir.rsus;
            let bw = self
                .network
                .transfer_bandwidth(t.source, t.candidate, |r| rsus[&r].bandwidth_mbps);
            let p = self.proto();
            plan_transfer(image, dirty, bw, p.max_precopy_rounds, p.stop_threshold_mb)
                .expect("scenario validation bounds the transfer inputs")
        };
        let first = if plan.rounds() > 0 {
            (
                Phase::PreCopy {
                    round: 1,
                    remaining: plan.round_mb[0],
                },
                plan.round_durations[0],
            )
        } else {
            (
                Phase::StopAndCopy {
                    remaining: plan.stop_and_copy_mb,
                },
                plan.downtime,
            )
        };
        self.txns.get_mut(&id).expect("known").plan = Some(plan);
        self.advance(id, first.0);
        self.after(first.1, EventKind::TransferRoundDone { txn: id, round: 1 });
    }

    /// Step `round` of the transfer finished: rounds `1..=n` are pre-copy,
    /// `n + 1` is the stop-and-copy.
    pub(super) fn on_round_done(&mut self, id: TxnId, round: u32) {
        let t = &self.txns[&id];
        if t.is_terminal() {
            return;
        }
        if !t.emergency {
            if let HostRef::Vehicle(_) = t.candidate {
                if !self.dir.host_alive(t.candidate) {
                    self.abort(id, AbortReason::CandidateLost);
                    return;
                }
            }
            if !self.dir.host_alive(t.source) {
                self.abort(id, AbortReason::SourceLost);
                return;
            }
        }
        let plan = t.plan.clone().expect("transfer started");
        let n = plan.rounds() as u32;
        let k = round as usize;
        if round < n {
            self.advance(
                id,
                Phase::PreCopy {
                    round: round + 1,
                    remaining: plan.round_mb[k],
                },
            );
            self.after(
                plan.round_durations[k],
                EventKind::TransferRoundDone {
                    txn: id,
                    round: round + 1,
                },
            );
        } else if round == n {
            self.advance(
                id,
                Phase::StopAndCopy {
                    remaining: plan.stop_and_copy_mb,
                },
            );
            self.after(plan.downtime, EventKind::TransferRoundDone { txn: id, round: n + 1 });
        } else if self.txns[&id].emergency {
            self.commit(id);
            self.activating.insert(id);
            let delay = self.proto().activation_delay_s;
            self.after(delay, EventKind::ActivationDone { txn: id });
        } else {
            self.advance(id, Phase::AwaitAck);
            self.txns.get_mut(&id).expect("known").attempts = 0;
            self.send_exchange(id);
        }
    }

    /// The source releases the VV; the candidate becomes primary.
    fn commit(&mut self, id: TxnId) {
        self.advance(id, Phase::Committed);
        let t = &self.txns[&id];
        let (vv, source, candidate) = (t.vv, t.source, t.candidate);
        self.dir.detach_primary(source, vv);
        self.dir.promote_reservation(candidate, vv);
        let last_seen = self.dir.host_position(source);
        let v = self.dir.vvs.get_mut(&vv).expect("known vv");
        v.host = Some(candidate);
        if let (HostRef::Vehicle(_), Some(p)) = (source, last_seen) {
            v.anchor = p;
        }
        if let HostRef::Vehicle(s) = source {
            self.check_left(s);
        }
    }

    pub(super) fn on_activation_done(&mut self, id: TxnId) {
        if self.txns[&id].is_terminal() {
            return;
        }
        self.advance(id, Phase::Activated);
        self.activating.remove(&id);
        let t = self.txns[&id].clone();
        self.active_txn.remove(&t.vv);
        self.counts
            .record_outcome(&t)
            .expect("activated transactions are terminal");
        let v = self.dir.vvs.get_mut(&t.vv).expect("known vv");
        v.set_lifecycle(Lifecycle::Active).expect("Migrating -> Active");
        match t.candidate {
            HostRef::Vehicle(_) => v.stats.migrations_to_vehicle += 1,
            HostRef::Rsu(_) => v.stats.migrations_to_rsu += 1,
        }
        v.stats.total_downtime += t.downtime;
        match t.candidate {
            HostRef::Rsu(_) => self.schedule_rsu_retry(t.vv),
            HostRef::Vehicle(c) => {
                let s = &self.dir.vehicles[&c];
                if !self.dir.host_alive(t.candidate) {
                    self.emergency_to_rsu(t.vv);
                } else if s.leaving {
                    self.evacuate(t.vv);
                } else {
                    self.evaluate_vv(t.vv);
                }
            }
        }
    }

    fn schedule_rsu_retry(&mut self, vv: VvId) {
        let interval = self.proto().update_interval_s;
        self.after(interval, EventKind::RetryTimer { vv });
        self.record("rsu_retry", |r| r.vv = Some(vv.to_string()));
    }

    pub(super) fn abort(&mut self, id: TxnId, reason: AbortReason) {
        self.advance(id, Phase::Aborted { reason });
        self.activating.remove(&id);
        let t = self.txns[&id].clone();
        self.active_txn.remove(&t.vv);
        self.dir.release_reservation(t.candidate, t.vv);
        self.counts
            .record_outcome(&t)
            .expect("aborted transactions are terminal");
        let v = self.dir.vvs.get_mut(&t.vv).expect("known vv");
        v.set_lifecycle(Lifecycle::Active).expect("Migrating -> Active");
        v.stats.failed_migrations += 1;
        if let HostRef::Vehicle(c) = t.candidate {
            self.check_left(c);
        }
        match t.source {
            HostRef::Rsu(_) => self.schedule_rsu_retry(t.vv),
            HostRef::Vehicle(_) if self.dir.host_alive(t.source) => self.fallback_to_rsu(t.vv),
            HostRef::Vehicle(_) => self.emergency_to_rsu(t.vv),
        }
    }

    /// Aborts every uncommitted transaction that targets `vehicle`.
    pub(super) fn abort_incoming(&mut self, vehicle: VehicleId) {
        let target = HostRef::Vehicle(vehicle);
        let ids: Vec<TxnId> = self
            .active_txn
            .values()
            .filter(|id| {
                let t = &self.txns[id];
                t.candidate == target && !t.phase.is_committed()
            })
            .copied()
            .collect();
        for id in ids {
            self.abort(id, AbortReason::CandidateLost);
        }
    }

    fn move_to_rsu(&mut self, vv: VvId, emergency: bool) {
        let Some(HostRef::Vehicle(h)) = self.dir.vvs[&vv].host else {
            return;
        };
        let position = self.dir.vehicles[&h].position;
        match self.dir.current_rsu(position) {
            Ok(r) => {
                self.record(if emergency { "emergency_rsu" } else { "fallback_rsu" }, |rec| {
                    rec.vv = Some(vv.to_string());
                    rec.from = Some(h.to_string());
                    rec.to = Some(r.to_string());
                });
                self.start_transaction(vv, HostRef::Vehicle(h), HostRef::Rsu(r), emergency);
            }
            Err(_) => self.fail_vv(vv, "no_coverage"),
        }
    }

    /// Migrates a VV from its (alive) vehicle host to that host's RSU.
    pub(super) fn fallback_to_rsu(&mut self, vv: VvId) {
        self.move_to_rsu(vv, false);
    }

    /// Restores a VV whose vehicle host went silent on the RSU covering the
    /// host's last reported position.
    pub(super) fn emergency_to_rsu(&mut self, vv: VvId) {
        self.move_to_rsu(vv, true);
    }

    /// RSU-hosted VV looks for a matching vehicle around its anchor.
    pub(super) fn on_retry_timer(&mut self, vv: VvId) {
        let v = &self.dir.vvs[&vv];
        if v.lifecycle != Lifecycle::Active {
            return;
        }
        let Some(HostRef::Rsu(r)) = v.host else { return };
        let reference = Kinematics::stationary(v.anchor);
        let query = CandidateQuery {
            current_rsu: r,
            location: v.anchor,
            speed_class: v.params.speed_class,
            heading: v.params.heading,
            zone_radius: self.dir.config.zone_radius_m,
            exclude: None,
            reference,
            horizon_cap_s: self.proto().horizon_cap_s,
        };
        let policy = self.proto().policy;
        match select_candidate(&self.dir, &query, policy, &mut self.selection_rng) {
            Some(c) => {
                self.record("migration_decision", |rec| {
                    rec.vv = Some(vv.to_string());
                    rec.from = Some(r.to_string());
                    rec.to = Some(c.to_string());
                    rec.detail = Some("rsu_retry".into());
                });
                self.sample_remaining_time(c, &reference);
                self.start_transaction(vv, HostRef::Rsu(r), HostRef::Vehicle(c), false);
            }
            None => {
                let interval = self.proto().update_interval_s;
                self.after(interval, EventKind::RetryTimer { vv });
            }
        }
    }
}
