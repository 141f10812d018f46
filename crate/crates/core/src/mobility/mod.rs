//! Vehicle motion: a Manhattan-grid random walk and replay of recorded
//! traces.

mod trace;

pub use trace::{load_trace, parse_trace, write_trace, TraceError, TraceRecord, TraceSummary, TRACE_HEADER};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{classify_speed, kmh_to_mps, GeoPosition, Kinematics, SpeedClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MobilityError {
    #[error("invalid mobility parameters: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldBounds {
    pub width_m: f64,
    pub height_m: f64,
}

impl WorldBounds {
    pub fn contains(&self, p: GeoPosition) -> bool {
        (0.0..=self.width_m).contains(&p.x) && (0.0..=self.height_m).contains(&p.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub block_length_m: f64,
    pub turn_probability: f64,
    /// Row `i` gives the probabilities of moving from class `i` to each class
    /// at every tick (slow, medium, fast order).
    pub speed_transition: [[f64; 3]; 3],
    /// Representative speed of each class, km/h.
    pub class_speeds_kmh: [f64; 3],
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            block_length_m: 100.0,
            turn_probability: 0.5,
            speed_transition: [[0.98, 0.02, 0.0], [0.01, 0.98, 0.01], [0.0, 0.02, 0.98]],
            class_speeds_kmh: [10.0, 35.0, 80.0],
        }
    }
}

impl GridParams {
    pub fn validate(&self, world: &WorldBounds) -> Result<(), MobilityError> {
        let bad = |m: String| Err(MobilityError::Invalid(m));
        if !(self.block_length_m > 0.0) {
            return bad(format!("block_length {} must be positive", self.block_length_m));
        }
        if !(world.width_m >= self.block_length_m && world.height_m >= self.block_length_m) {
            return bad("world must be at least one block in each direction".into());
        }
        if !(0.0..=1.0).contains(&self.turn_probability) {
            return bad(format!("turn_probability {} outside [0, 1]", self.turn_probability));
        }
        for (i, row) in self.speed_transition.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad(format!("speed_transition row {i} has an entry outside [0, 1]"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return bad(format!("speed_transition row {i} sums to {sum}"));
            }
        }
        for (class, &kmh) in SpeedClass::ALL.iter().zip(&self.class_speeds_kmh) {
            if classify_speed(kmh).ok() != Some(*class) {
                return bad(format!("class speed {kmh} km/h is not {class}"));
            }
        }
        Ok(())
    }

    fn speed_for(&self, class: SpeedClass) -> f64 {
        self.class_speeds_kmh[class.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MobilityModel {
    GridSynthetic { world: WorldBounds, grid: GridParams },
    TraceReplay { records: Vec<TraceRecord> },
}

fn snap_heading(deg: f64) -> f64 {
    (((deg / 90.0).round() as i64).rem_euclid(4) * 90) as f64
}

/// Places a vehicle on a random road segment heading along it, in a random
/// speed class.
pub fn random_grid_start<R: Rng + ?Sized>(world: &WorldBounds, grid: &GridParams, rng: &mut R) -> Kinematics {
    let b = grid.block_length_m;
    let horizontal = rng.gen_bool(0.5);
    let class = SpeedClass::ALL[rng.gen_range(0..3)];
    let forward = rng.gen_bool(0.5);
    let (position, heading) = if horizontal {
        let lines = (world.height_m / b).floor() as u32;
        let y = rng.gen_range(0..=lines) as f64 * b;
        let x = rng.gen_range(0.0..world.width_m);
        (GeoPosition::new(x, y), if forward { 90.0 } else { 270.0 })
    } else {
        let lines = (world.width_m / b).floor() as u32;
        let x = rng.gen_range(0..=lines) as f64 * b;
        let y = rng.gen_range(0.0..world.height_m);
        (GeoPosition::new(x, y), if forward { 0.0 } else { 180.0 })
    };
    Kinematics::new(position, grid.speed_for(class), heading)
}

/// Coordinate of the next stop along one axis: the next grid line strictly
/// ahead, or the world edge if that comes first.
fn next_stop(coord: f64, dir: f64, block: f64, limit: f64) -> f64 {
    let k = (coord / block).floor();
    if dir > 0.0 {
        ((k + 1.0) * block).min(limit)
    } else {
        let line = if coord - k * block > 1e-9 {
            k * block
        } else {
            (k - 1.0) * block
        };
        line.max(0.0)
    }
}

/// Advances one vehicle by `dt` seconds on the grid.
///
/// The vehicle moves at its current speed; at each intersection it passes it
/// turns left or right with `turn_probability` (split evenly), and at the
/// world edge it reverses. Afterwards the speed class is resampled from the
/// transition matrix.
pub fn step_vehicle<R: Rng + ?Sized>(
    state: &Kinematics,
    dt: f64,
    world: &WorldBounds,
    grid: &GridParams,
    rng: &mut R,
) -> Kinematics {
    let mut pos = state.position;
    let mut heading = snap_heading(state.heading_deg);
    let mut remaining = kmh_to_mps(state.speed_kmh) * dt.max(0.0);
    let b = grid.block_length_m;

    let mut guard = 0;
    while remaining > 0.0 && guard < 10_000 {
        guard += 1;
        let (along_x, dir) = match heading as i64 {
            0 => (false, 1.0),
            90 => (true, 1.0),
            180 => (false, -1.0),
            _ => (true, -1.0),
        };
        let (coord, limit) = if along_x {
            (pos.x, world.width_m)
        } else {
            (pos.y, world.height_m)
        };
        let stop = next_stop(coord, dir, b, limit);
        let gap = (stop - coord).abs();
        if remaining < gap {
            let moved = coord + dir * remaining;
            if along_x {
                pos.x = moved;
            } else {
                pos.y = moved;
            }
            break;
        }
        remaining -= gap;
        if along_x {
            pos.x = stop;
        } else {
            pos.y = stop;
        }
        let at_edge = stop <= 0.0 || stop >= limit;
        if at_edge {
            heading = (heading + 180.0) % 360.0;
            continue;
        }
        if rng.gen::<f64>() < grid.turn_probability {
            let turn = if rng.gen_bool(0.5) { 90.0 } else { 270.0 };
            heading = (heading + turn) % 360.0;
            // turning onto a road that immediately leaves the world
            let out = match heading as i64 {
                0 => pos.y >= world.height_m,
                90 => pos.x >= world.width_m,
                180 => pos.y <= 0.0,
                _ => pos.x <= 0.0,
            };
            if out {
                heading = (heading + 180.0) % 360.0;
            }
        }
    }
    pos.x = pos.x.clamp(0.0, world.width_m);
    pos.y = pos.y.clamp(0.0, world.height_m);

    let class = classify_speed(state.speed_kmh).unwrap_or(SpeedClass::Slow);
    let row = &grid.speed_transition[class.index()];
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut next = SpeedClass::Fast;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            next = SpeedClass::ALL[i];
            break;
        }
    }
    let speed = grid.speed_for(next);
    Kinematics::new(pos, speed, heading)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn world() -> WorldBounds {
        WorldBounds {
            width_m: 1000.0,
            height_m: 1000.0,
        }
    }

    #[test]
    fn straight_line_unit_conversion() {
        let grid = GridParams {
            speed_transition: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            turn_probability: 0.0,
            ..GridParams::default()
        };
        let s = Kinematics::new(GeoPosition::new(150.0, 200.0), 36.0, 90.0);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let n = step_vehicle(&s, 1.0, &world(), &grid, &mut rng);
        assert!((n.position.x - 160.0).abs() < 1e-9);
        assert_eq!(n.position.y, 200.0);
        assert_eq!(n.heading_deg, 90.0);
        assert_eq!(n.speed_kmh, 35.0);
    }

    #[test]
    fn no_turns_means_constant_heading_axis() {
        let grid = GridParams {
            turn_probability: 0.0,
            ..GridParams::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut s = Kinematics::new(GeoPosition::new(0.0, 300.0), 80.0, 90.0);
        for _ in 0..2000 {
            s = step_vehicle(&s, 1.0, &world(), &grid, &mut rng);
            // only edge reflections are possible
            assert!(s.heading_deg == 90.0 || s.heading_deg == 270.0);
            assert_eq!(s.position.y, 300.0);
        }
    }

    #[test]
    fn identity_transition_keeps_class() {
        let grid = GridParams {
            speed_transition: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            ..GridParams::default()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut s = Kinematics::new(GeoPosition::new(100.0, 0.0), 10.0, 0.0);
        for _ in 0..1000 {
            s = step_vehicle(&s, 1.0, &world(), &grid, &mut rng);
            assert_eq!(classify_speed(s.speed_kmh).unwrap(), SpeedClass::Slow);
        }
    }

    #[test]
    fn validation() {
        let w = world();
        GridParams::default().validate(&w).unwrap();
        let mut g = GridParams::default();
        g.speed_transition[1] = [0.5, 0.6, 0.0];
        assert!(g.validate(&w).is_err());
        let g = GridParams {
            class_speeds_kmh: [10.0, 60.0, 80.0],
            ..GridParams::default()
        };
        assert!(g.validate(&w).is_err());
        let g = GridParams {
            block_length_m: 0.0,
            ..GridParams::default()
        };
        assert!(g.validate(&w).is_err());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let grid = GridParams::default();
        let run = |seed| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut s = random_grid_start(&world(), &grid, &mut rng);
            let mut out = Vec::new();
            for _ in 0..500 {
                s = step_vehicle(&s, 1.0, &world(), &grid, &mut rng);
                out.push(s);
            }
            out
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    proptest! {
        #[test]
        fn stays_on_grid_inside_world(seed in any::<u64>(), turn in 0.0..1.0f64, dt in 0.1..5.0f64) {
            let w = WorldBounds { width_m: 750.0, height_m: 500.0 };
            let grid = GridParams { turn_probability: turn, ..GridParams::default() };
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let mut s = random_grid_start(&w, &grid, &mut rng);
            for _ in 0..300 {
                s = step_vehicle(&s, dt, &w, &grid, &mut rng);
                prop_assert!(w.contains(s.position), "{:?}", s);
                let on_line = |c: f64| (c / 100.0 - (c / 100.0).round()).abs() < 1e-6;
                prop_assert!(on_line(s.position.x) || on_line(s.position.y), "{:?}", s);
                prop_assert!([0.0, 90.0, 180.0, 270.0].contains(&s.heading_deg));
            }
        }
    }
}
