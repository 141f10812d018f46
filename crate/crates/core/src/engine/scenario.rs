//! Scenario files (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::network::NetworkConfig;
use crate::directory::{DirectoryConfig, Resources};
use crate::geo::{GeoPosition, Heading8, SpeedClass};
use crate::migration::SelectionPolicy;
use crate::mobility::{GridParams, WorldBounds};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("no seed given: set [run].seed in the scenario or pass --seed")]
    MissingSeed,
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub width_m: f64,
    pub height_m: f64,
    #[serde(default = "default_block")]
    pub block_length_m: f64,
}

fn default_block() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsuConfig {
    pub coverage_radius_m: f64,
    /// Defaults to `[network].rsu_bandwidth_mbps`.
    pub bandwidth_mbps: Option<f64>,
    pub positions: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaveConfig {
    pub vehicle: u32,
    pub at_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehiclesConfig {
    /// Number of synthetic grid vehicles.
    pub count: Option<u32>,
    /// Trace file to replay instead, relative to the scenario file.
    pub trace: Option<PathBuf>,
    pub mobility_tick_s: f64,
    pub turn_probability: f64,
    pub speed_transition: [[f64; 3]; 3],
    pub class_speeds_kmh: [f64; 3],
    pub cpu_units: u32,
    pub storage_mb: u64,
    pub leave: Vec<LeaveConfig>,
}

impl Default for VehiclesConfig {
    fn default() -> Self {
        let grid = GridParams::default();
        let res = Resources::default();
        Self {
            count: None,
            trace: None,
            mobility_tick_s: 1.0,
            turn_probability: grid.turn_probability,
            speed_transition: grid.speed_transition,
            class_speeds_kmh: grid.class_speeds_kmh,
            cpu_units: res.cpu_units,
            storage_mb: res.storage_mb,
            leave: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub update_interval_s: f64,
    pub miss_limit: u32,
    pub zone_radius_u_m: f64,
    pub max_precopy_rounds: u32,
    pub stop_threshold_mb: f64,
    pub creation_delay_s: f64,
    pub activation_delay_s: f64,
    pub horizon_cap_s: f64,
    pub policy: SelectionPolicy,
    /// Resends after the first attempt of a request/response exchange.
    pub message_retry_limit: u32,
    /// Added to the round-trip timeout so a reply arriving exactly at twice
    /// the latency is not raced by its own timer.
    pub timeout_guard_s: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            update_interval_s: 10.0,
            miss_limit: 2,
            zone_radius_u_m: 100.0,
            max_precopy_rounds: 5,
            stop_threshold_mb: 8.0,
            creation_delay_s: 1.0,
            activation_delay_s: 0.5,
            horizon_cap_s: 3600.0,
            policy: SelectionPolicy::MinWorkload,
            message_retry_limit: 3,
            timeout_guard_s: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestConfig {
    pub consumer: String,
    pub at_s: f64,
    pub source: [f64; 2],
    pub destination: [f64; 2],
    pub speed_class: SpeedClass,
    pub heading: Heading8,
    pub image_mb: Option<f64>,
    pub dirty_rate_mbps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingUpdateConfig {
    pub consumer: String,
    pub at_s: f64,
    pub destination: Option<[f64; 2]>,
    pub speed_class: Option<SpeedClass>,
    pub heading: Option<Heading8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsumersConfig {
    pub image_mb: f64,
    pub dirty_rate_mbps: f64,
    /// Delay before retrying a request that found no host. Defaults to the
    /// update interval.
    pub retry_interval_s: Option<f64>,
    /// Give up after this many retries; unlimited when absent.
    pub max_retries: Option<u32>,
    pub requests: Vec<RequestConfig>,
    pub driving_updates: Vec<DrivingUpdateConfig>,
}

impl Default for ConsumersConfig {
    fn default() -> Self {
        Self {
            image_mb: 256.0,
            dirty_rate_mbps: 2.0,
            retry_interval_s: None,
            max_retries: None,
            requests: Vec::new(),
            driving_updates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub end_time_s: f64,
    pub seed: Option<u64>,
    /// Test hook: corrupt the bookkeeping at this time so the invariant
    /// checker trips.
    pub inject_violation_at_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub world: WorldConfig,
    pub rsus: RsuConfig,
    #[serde(default)]
    pub vehicles: VehiclesConfig,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub consumers: ConsumersConfig,
    pub run: RunConfig,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        s.base_dir = base_dir.into();
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn world_bounds(&self) -> WorldBounds {
        WorldBounds {
            width_m: self.world.width_m,
            height_m: self.world.height_m,
        }
    }

    pub fn grid_params(&self) -> GridParams {
        GridParams {
            block_length_m: self.world.block_length_m,
            turn_probability: self.vehicles.turn_probability,
            speed_transition: self.vehicles.speed_transition,
            class_speeds_kmh: self.vehicles.class_speeds_kmh,
        }
    }

    pub fn directory_config(&self) -> DirectoryConfig {
        DirectoryConfig {
            update_interval_s: self.protocol.update_interval_s,
            miss_limit: self.protocol.miss_limit,
            zone_radius_m: self.protocol.zone_radius_u_m,
        }
    }

    pub fn resources(&self) -> Resources {
        Resources {
            cpu_units: self.vehicles.cpu_units,
            storage_mb: self.vehicles.storage_mb,
        }
    }

    pub fn trace_path(&self) -> Option<PathBuf> {
        self.vehicles.trace.as_ref().map(|p| {
            if p.is_absolute() {
                p.clone()
            } else {
                self.base_dir.join(p)
            }
        })
    }

    /// Seed to use: the override if given, else `[run].seed`.
    pub fn resolve_seed(&self, cli_seed: Option<u64>) -> Result<u64, ConfigError> {
        cli_seed.or(self.run.seed).ok_or(ConfigError::MissingSeed)
    }

    /// Copy with the synthetic vehicle count replaced.
    pub fn with_vehicle_count(&self, n: u32) -> Result<Self, ConfigError> {
        if self.vehicles.trace.is_some() {
            return invalid("cannot sweep the vehicle count of a trace-driven scenario");
        }
        let mut s = self.clone();
        s.vehicles.count = Some(n);
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let w = &self.world;
        if !(w.width_m > 0.0 && w.height_m > 0.0) || !w.width_m.is_finite() || !w.height_m.is_finite() {
            return invalid("world dimensions must be positive");
        }
        if let Err(e) = self.grid_params().validate(&self.world_bounds()) {
            return invalid(e.to_string());
        }
        if !(self.vehicles.mobility_tick_s > 0.0) {
            return invalid("vehicles.mobility_tick_s must be positive");
        }
        if self.vehicles.cpu_units < 1 {
            return invalid("vehicles.cpu_units must be at least 1");
        }
        match (self.vehicles.count, &self.vehicles.trace) {
            (Some(_), Some(_)) => return invalid("set either vehicles.count or vehicles.trace, not both"),
            (None, None) => return invalid("set vehicles.count or vehicles.trace"),
            _ => {}
        }
        for l in &self.vehicles.leave {
            if !(l.at_s >= 0.0) {
                return invalid(format!("leave time {} must be non-negative", l.at_s));
            }
        }
        if !(self.rsus.coverage_radius_m > 0.0) {
            return invalid("rsus.coverage_radius_m must be positive");
        }
        if self.rsus.bandwidth_mbps.is_some_and(|b| !(b > 0.0)) {
            return invalid("rsus.bandwidth_mbps must be positive");
        }
        for p in &self.rsus.positions {
            if !self.world_bounds().contains(GeoPosition::new(p[0], p[1])) {
                return invalid(format!("RSU at ({}, {}) is outside the world", p[0], p[1]));
            }
        }
        self.network.validate().map_err(ConfigError::Invalid)?;
        let p = &self.protocol;
        if !(p.update_interval_s > 0.0) {
            return invalid("protocol.update_interval_s must be positive");
        }
        if !(p.zone_radius_u_m > 0.0) {
            return invalid("protocol.zone_radius_u_m must be positive");
        }
        if p.max_precopy_rounds == 0 {
            return invalid("protocol.max_precopy_rounds must be at least 1");
        }
        for (name, v) in [
            ("stop_threshold_mb", p.stop_threshold_mb),
            ("creation_delay_s", p.creation_delay_s),
            ("activation_delay_s", p.activation_delay_s),
            ("timeout_guard_s", p.timeout_guard_s),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return invalid(format!("protocol.{name} must be non-negative"));
            }
        }
        if !(p.horizon_cap_s > 0.0) {
            return invalid("protocol.horizon_cap_s must be positive");
        }
        let c = &self.consumers;
        if !(c.image_mb >= 0.0) || !(c.dirty_rate_mbps >= 0.0) {
            return invalid("consumers image_mb and dirty_rate_mbps must be non-negative");
        }
        if c.retry_interval_s.is_some_and(|r| !(r > 0.0)) {
            return invalid("consumers.retry_interval_s must be positive");
        }
        for r in &c.requests {
            if !(r.at_s >= 0.0) {
                return invalid(format!("request of {} has negative time", r.consumer));
            }
            if r.source == r.destination {
                return invalid(format!("request of {} has source == destination", r.consumer));
            }
            if r.image_mb.is_some_and(|v| !(v >= 0.0)) || r.dirty_rate_mbps.is_some_and(|v| !(v >= 0.0)) {
                return invalid(format!("request of {} has a negative size or rate", r.consumer));
            }
        }
        for u in &c.driving_updates {
            if !(u.at_s >= 0.0) {
                return invalid(format!("driving update of {} has negative time", u.consumer));
            }
            if !c.requests.iter().any(|r| r.consumer == u.consumer) {
                return invalid(format!("driving update names unknown consumer {}", u.consumer));
            }
        }
        if !(self.run.end_time_s >= 0.0) || !self.run.end_time_s.is_finite() {
            return invalid("run.end_time_s must be non-negative");
        }
        Ok(())
    }
}
