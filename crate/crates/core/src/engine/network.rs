use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::ids::{HostRef, RsuId, VehicleId};

/// A message endpoint. The cloud manager has a well-known address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Endpoint {
    Spcm,
    Vehicle(VehicleId),
    Rsu(RsuId),
}

impl From<HostRef> for Endpoint {
    fn from(h: HostRef) -> Self {
        match h {
            HostRef::Vehicle(v) => Endpoint::Vehicle(v),
            HostRef::Rsu(r) => Endpoint::Rsu(r),
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Spcm => f.write_str("spcm"),
            Endpoint::Vehicle(v) => v.fmt(f),
            Endpoint::Rsu(r) => r.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Fixed one-way latency, seconds. Ignored when `latency_range_s` is set.
    pub latency_s: f64,
    /// Uniform one-way latency range `[lo, hi]`, seconds.
    pub latency_range_s: Option<[f64; 2]>,
    /// Loss probability on any link with a vehicle endpoint.
    pub drop_probability: f64,
    pub vehicle_bandwidth_mbps: f64,
    pub rsu_bandwidth_mbps: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            latency_s: 0.01,
            latency_range_s: None,
            drop_probability: 0.0,
            vehicle_bandwidth_mbps: 12.5,
            rsu_bandwidth_mbps: 50.0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(format!("drop_probability {} outside [0, 1]", self.drop_probability));
        }
        if !(self.latency_s >= 0.0) || !self.latency_s.is_finite() {
            return Err(format!("latency_s {} must be non-negative", self.latency_s));
        }
        if let Some([lo, hi]) = self.latency_range_s {
            if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
                return Err(format!("latency_range_s [{lo}, {hi}] is not a valid range"));
            }
        }
        if !(self.vehicle_bandwidth_mbps > 0.0) || !(self.rsu_bandwidth_mbps > 0.0) {
            return Err("bandwidths must be positive".into());
        }
        Ok(())
    }

    pub fn max_latency(&self) -> f64 {
        match self.latency_range_s {
            Some([_, hi]) => hi,
            None => self.latency_s,
        }
    }
}

/// Latency and loss for protocol messages. Owns the network random stream:
/// one uniform draw per send decides loss, plus one latency draw when the
/// latency is a range.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: NetworkConfig,
    rng: ChaCha12Rng,
    pub sent: u64,
    pub dropped: u64,
}

impl Network {
    pub fn new(config: NetworkConfig, rng: ChaCha12Rng) -> Self {
        Self {
            config,
            rng,
            sent: 0,
            dropped: 0,
        }
    }

    /// Only links touching a vehicle are wireless; RSUs and the cloud
    /// manager are wired.
    pub fn is_lossy(from: Endpoint, to: Endpoint) -> bool {
        matches!(from, Endpoint::Vehicle(_)) || matches!(to, Endpoint::Vehicle(_))
    }

    /// Decides the fate of one message. `Some(latency)` if delivered.
    pub fn transmit(&mut self, from: Endpoint, to: Endpoint) -> Option<f64> {
        self.sent += 1;
        let u: f64 = self.rng.gen();
        let latency = match self.config.latency_range_s {
            Some([lo, hi]) if hi > lo => self.rng.gen_range(lo..=hi),
            Some([lo, _]) => lo,
            None => self.config.latency_s,
        };
        if Self::is_lossy(from, to) && u < self.config.drop_probability {
            self.dropped += 1;
            return None;
        }
        Some(latency)
    }

    /// Bulk transfer rate between two hosts: the vehicle radio, or the
    /// slower of the radio and the RSU uplink.
    pub fn transfer_bandwidth(&self, a: HostRef, b: HostRef, rsu_bandwidth: impl Fn(RsuId) -> f64) -> f64 {
        let v = self.config.vehicle_bandwidth_mbps;
        match (a, b) {
            (HostRef::Vehicle(_), HostRef::Vehicle(_)) => v,
            (HostRef::Rsu(r), HostRef::Vehicle(_)) | (HostRef::Vehicle(_), HostRef::Rsu(r)) => v.min(rsu_bandwidth(r)),
            (HostRef::Rsu(r1), HostRef::Rsu(r2)) => rsu_bandwidth(r1).min(rsu_bandwidth(r2)),
        }
    }
}
