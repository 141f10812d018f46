//! Planar geometry and the quantized driving-parameter classes used for
//! matching vehicles against virtual-vehicle requests.
//!
//! Positions live in a local east/north frame measured in meters. Headings
//! are compass bearings in degrees, clockwise from north.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper edge of the slow band, km/h.
pub const SLOW_MAX_KMH: f64 = 20.0;
/// Upper edge of the medium band, km/h.
pub const MEDIUM_MAX_KMH: f64 = 50.0;
/// Nominal top of the fast band. Faster readings still classify as fast.
pub const FAST_MAX_KMH: f64 = 120.0;

/// Distances below this are the same location.
pub const SAME_LOCATION_M: f64 = 8.0;
/// Distances up to and including this are near.
pub const NEAR_LOCATION_M: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("heading {0} is outside [0, 360)")]
    HeadingOutOfRange(f64),
    #[error("speed {0} km/h is negative or not finite")]
    InvalidSpeed(f64),
    #[error("distance {0} m is negative or not finite")]
    InvalidDistance(f64),
    #[error("unknown {kind} label {label:?}")]
    UnknownLabel { kind: &'static str, label: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GeoPosition {
    pub x: f64,
    pub y: f64,
}

impl GeoPosition {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Point reached after moving `meters` along compass `heading_deg`.
    pub fn advanced(&self, heading_deg: f64, meters: f64) -> Self {
        let (dx, dy) = unit_vector(heading_deg);
        Self::new(self.x + dx * meters, self.y + dy * meters)
    }
}

impl fmt::Display for GeoPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Instantaneous motion state of a vehicle as it reports it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Kinematics {
    pub position: GeoPosition,
    pub speed_kmh: f64,
    pub heading_deg: f64,
}

impl Kinematics {
    pub fn new(position: GeoPosition, speed_kmh: f64, heading_deg: f64) -> Self {
        Self {
            position,
            speed_kmh,
            heading_deg,
        }
    }

    pub fn stationary(position: GeoPosition) -> Self {
        Self::new(position, 0.0, 0.0)
    }

    /// Velocity in m/s, east/north components.
    pub fn velocity(&self) -> (f64, f64) {
        velocity(self.speed_kmh, self.heading_deg)
    }

    pub fn position_after(&self, seconds: f64) -> GeoPosition {
        let (vx, vy) = self.velocity();
        GeoPosition::new(self.position.x + vx * seconds, self.position.y + vy * seconds)
    }
}

/// Planar Euclidean distance in meters.
pub fn distance(a: GeoPosition, b: GeoPosition) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// East/north components of a unit vector pointing along a compass bearing.
pub fn unit_vector(heading_deg: f64) -> (f64, f64) {
    let rad = heading_deg.to_radians();
    (rad.sin(), rad.cos())
}

pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh / 3.6
}

/// Velocity vector in m/s for a speed in km/h along a compass bearing.
pub fn velocity(speed_kmh: f64, heading_deg: f64) -> (f64, f64) {
    let (ux, uy) = unit_vector(heading_deg);
    let v = kmh_to_mps(speed_kmh);
    (ux * v, uy * v)
}

/// Wraps any finite bearing into `[0, 360)`.
pub fn normalize_heading(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// One of the eight compass sectors, each 45 degrees wide and centered on
/// its compass point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heading8 {
    N,
    NE,
    E,
    SE,
    S,
    SW,
    W,
    NW,
}

impl Heading8 {
    pub const ALL: [Heading8; 8] = [
        Heading8::N,
        Heading8::NE,
        Heading8::E,
        Heading8::SE,
        Heading8::S,
        Heading8::SW,
        Heading8::W,
        Heading8::NW,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Bearing of the sector's center.
    pub fn center_deg(self) -> f64 {
        self.index() as f64 * 45.0
    }

    pub fn label(self) -> &'static str {
        match self {
            Heading8::N => "N",
            Heading8::NE => "NE",
            Heading8::E => "E",
            Heading8::SE => "SE",
            Heading8::S => "S",
            Heading8::SW => "SW",
            Heading8::W => "W",
            Heading8::NW => "NW",
        }
    }
}

impl fmt::Display for Heading8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Heading8 {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|h| h.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| GeoError::UnknownLabel {
                kind: "heading",
                label: s.to_string(),
            })
    }
}

/// Maps a bearing in `[0, 360)` to its compass sector. Sector boundaries are
/// half-open, so 337.5 is N and 22.5 is NE.
pub fn quantize_heading(deg: f64) -> Result<Heading8, GeoError> {
    if !(0.0..360.0).contains(&deg) {
        return Err(GeoError::HeadingOutOfRange(deg));
    }
    let shifted = (deg + 22.5) % 360.0;
    let idx = (shifted / 45.0).floor() as usize;
    Ok(Heading8::ALL[idx.min(7)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedClass {
    Slow,
    Medium,
    Fast,
}

impl SpeedClass {
    pub const ALL: [SpeedClass; 3] = [SpeedClass::Slow, SpeedClass::Medium, SpeedClass::Fast];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Half-open band `[lo, hi)` in km/h; the fast band is unbounded above.
    pub fn band(self) -> (f64, f64) {
        match self {
            SpeedClass::Slow => (0.0, SLOW_MAX_KMH),
            SpeedClass::Medium => (SLOW_MAX_KMH, MEDIUM_MAX_KMH),
            SpeedClass::Fast => (MEDIUM_MAX_KMH, f64::INFINITY),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SpeedClass::Slow => "slow",
            SpeedClass::Medium => "medium",
            SpeedClass::Fast => "fast",
        }
    }
}

impl fmt::Display for SpeedClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SpeedClass {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| GeoError::UnknownLabel {
                kind: "speed class",
                label: s.to_string(),
            })
    }
}

/// Slow on `[0, 20)`, medium on `[20, 50)`, fast from 50 up. Readings above
/// 120 km/h are still fast but get a warning.
pub fn classify_speed(kmh: f64) -> Result<SpeedClass, GeoError> {
    if !kmh.is_finite() || kmh < 0.0 {
        return Err(GeoError::InvalidSpeed(kmh));
    }
    Ok(if kmh < SLOW_MAX_KMH {
        SpeedClass::Slow
    } else if kmh < MEDIUM_MAX_KMH {
        SpeedClass::Medium
    } else {
        if kmh > FAST_MAX_KMH {
            log::warn!("speed {kmh} km/h exceeds the fast band, clamping to fast");
        }
        SpeedClass::Fast
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LocationMatch {
    Same,
    Near,
    Far,
}

/// Same below 8 m, near on `[8, 30]`, far beyond 30 m.
pub fn classify_location(meters: f64) -> Result<LocationMatch, GeoError> {
    if !meters.is_finite() || meters < 0.0 {
        return Err(GeoError::InvalidDistance(meters));
    }
    Ok(if meters < SAME_LOCATION_M {
        LocationMatch::Same
    } else if meters <= NEAR_LOCATION_M {
        LocationMatch::Near
    } else {
        LocationMatch::Far
    })
}
