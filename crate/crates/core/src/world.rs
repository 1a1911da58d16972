//! The simulated parking lot.
//!
//! A lot is an axis-aligned rectangle centered at the origin with a list of
//! parking spots and four boundary walls. Vehicles are oriented 5 x 2 m
//! rectangles (configurable) with one of two roles: `Controlled` vehicles
//! move, `Parked` vehicles never do. All controlled vehicles advance
//! simultaneously in a tick, then vehicle-vehicle and vehicle-wall contacts
//! are evaluated; the first contact terminates the episode.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    step_stochastic, ActionCommand, DynamicsParams, NoiseCovariance, VehicleState,
};
use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::Rng as _;

/// Wall thickness used to model the lot boundary as four rectangles.
const WALL_THICKNESS: f64 = 0.5;
/// Resampling budget for random placement before giving up.
const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// A parking spot: center position and orientation of its long axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spot {
    pub center: (f64, f64),
    pub orientation: f64,
}

/// Geometry and population of the lot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotConfig {
    /// Lot extent along x (m); the lot spans `[-width/2, width/2]`.
    pub width: f64,
    /// Lot extent along y (m).
    pub height: f64,
    pub spots: Vec<Spot>,
    /// Spot footprint: length x width (m).
    pub spot_size: (f64, f64),
    pub n_controlled: usize,
    pub n_parked: usize,
}

/// Role of a vehicle in the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleRole {
    Controlled,
    Parked,
}

/// One vehicle plus its bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldVehicle {
    pub state: VehicleState,
    pub role: VehicleRole,
    /// Spot the vehicle started from (training placement).
    pub origin_spot: Option<usize>,
    /// Destination spot assigned for control.
    pub target_spot: Option<usize>,
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalEvent {
    /// Two vehicles intersect (indices).
    Collision(usize, usize),
    /// A vehicle touched the lot boundary (index).
    Boundary(usize),
    /// The step cap was reached without contact.
    MaxSteps,
}

/// Full mutable state of the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub lot: LotConfig,
    pub vehicles: Vec<WorldVehicle>,
    pub step_count: usize,
    pub terminal_event: Option<TerminalEvent>,
    pub max_steps: usize,
}

/// How [`build_world`] places vehicles.
#[derive(Debug, Clone, PartialEq)]
pub enum Placement {
    /// Training: every vehicle centered in a distinct random spot, at rest.
    RandomSpots,
    /// Training with explicit spot assignments (first `n_controlled`
    /// entries are the controlled vehicles).
    FixedSpots(Vec<usize>),
    /// Control: parked vehicles in distinct random spots; controlled
    /// vehicles at random interior poses with speed in [0, 2] m/s and a
    /// distinct destination spot each.
    ControlRandom,
}

/// Oriented rectangle used for all contact tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionGeometry {
    pub center: (f64, f64),
    /// Half extents along the local axes (half length, half width).
    pub half_extents: (f64, f64),
    pub rotation: f64,
}

impl CollisionGeometry {
    pub fn new(center: (f64, f64), length: f64, width: f64, rotation: f64) -> Self {
        CollisionGeometry {
            center,
            half_extents: (length / 2.0, width / 2.0),
            rotation,
        }
    }

    /// Footprint rectangle of a vehicle state.
    pub fn of_vehicle(s: &VehicleState, p: &DynamicsParams) -> Self {
        Self::new((s.x, s.y), p.footprint.0, p.footprint.1, s.h)
    }

    /// Footprint rectangle of a parking spot.
    pub fn of_spot(spot: &Spot, size: (f64, f64)) -> Self {
        Self::new(spot.center, size.0, size.1, spot.orientation)
    }

    fn axes(&self) -> [(f64, f64); 2] {
        let (sin, cos) = self.rotation.sin_cos();
        [(cos, sin), (-sin, cos)]
    }

    pub fn corners(&self) -> [(f64, f64); 4] {
        let [ax, ay] = self.axes();
        let (hl, hw) = self.half_extents;
        let ex = (ax.0 * hl, ax.1 * hl);
        let ey = (ay.0 * hw, ay.1 * hw);
        let c = self.center;
        [
            (c.0 + ex.0 + ey.0, c.1 + ex.1 + ey.1),
            (c.0 + ex.0 - ey.0, c.1 + ex.1 - ey.1),
            (c.0 - ex.0 + ey.0, c.1 - ex.1 + ey.1),
            (c.0 - ex.0 - ey.0, c.1 - ex.1 - ey.1),
        ]
    }

    fn project(&self, axis: (f64, f64)) -> (f64, f64) {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for c in self.corners() {
            let d = c.0 * axis.0 + c.1 * axis.1;
            min = min.min(d);
            max = max.max(d);
        }
        (min, max)
    }
}

/// Separating-axis intersection test on oriented rectangles. A shared
/// boundary counts as intersecting.
pub fn check_collision(a: &CollisionGeometry, b: &CollisionGeometry) -> bool {
    for axis in a.axes().into_iter().chain(b.axes()) {
        let (min_a, max_a) = a.project(axis);
        let (min_b, max_b) = b.project(axis);
        if max_a < min_b || max_b < min_a {
            return false;
        }
    }
    true
}

/// Success tolerances for [`is_parked`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParkTolerance {
    /// Position tolerance around the spot center (m).
    pub pos: f64,
    /// Heading tolerance modulo pi (rad): nose-in and reverse-in both count.
    pub heading: f64,
    /// Speed-magnitude tolerance (m/s).
    pub speed: f64,
}

impl Default for ParkTolerance {
    fn default() -> Self {
        ParkTolerance { pos: 0.5, heading: 0.3, speed: 0.5 }
    }
}

/// True iff the vehicle sits in the spot within tolerance: position near the
/// center, heading aligned with the spot axis modulo pi, nearly stopped.
pub fn is_parked(s: &VehicleState, spot: &Spot, tol: &ParkTolerance) -> bool {
    let dx = s.x - spot.center.0;
    let dy = s.y - spot.center.1;
    if dx.hypot(dy) > tol.pos {
        return false;
    }
    let diff = crate::dynamics::normalize_angle(s.h - spot.orientation).abs();
    let axis_diff = diff.min(std::f64::consts::PI - diff);
    axis_diff <= tol.heading && s.speed() <= tol.speed
}

impl LotConfig {
    /// Scenario 1: six spots in two facing rows of three, four vehicles
    /// (two controlled, two parked).
    pub fn scenario_1() -> Self {
        Self::two_row_lot(3, 2, 2)
    }

    /// Scenario 2: ten spots in two rows of five, six vehicles (three
    /// controlled, three parked).
    pub fn scenario_2() -> Self {
        Self::two_row_lot(5, 3, 3)
    }

    fn two_row_lot(per_row: usize, n_controlled: usize, n_parked: usize) -> Self {
        let pitch = 2.6; // spot width 2.5 plus a 0.1 m gap
        let offset = (per_row as f64 - 1.0) / 2.0;
        let mut spots = Vec::new();
        for &row_y in &[7.5, -7.5] {
            for i in 0..per_row {
                spots.push(Spot {
                    center: ((i as f64 - offset) * pitch, row_y),
                    orientation: std::f64::consts::FRAC_PI_2,
                });
            }
        }
        LotConfig {
            width: 40.0,
            height: 28.0,
            spots,
            spot_size: (5.0, 2.5),
            n_controlled,
            n_parked,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::config("lot.width and lot.height must be > 0"));
        }
        if self.spot_size.0 <= 0.0 || self.spot_size.1 <= 0.0 {
            return Err(Error::config("lot.spot_size must be positive"));
        }
        if self.spots.is_empty() {
            return Err(Error::config("lot.spots must not be empty"));
        }
        let (hw, hh) = (self.width / 2.0, self.height / 2.0);
        for (i, spot) in self.spots.iter().enumerate() {
            let rect = CollisionGeometry::of_spot(spot, self.spot_size);
            for (cx, cy) in rect.corners() {
                if cx < -hw || cx > hw || cy < -hh || cy > hh {
                    return Err(Error::config(format!("lot.spots[{i}] extends outside the lot")));
                }
            }
        }
        // Pairwise overlap uses slightly shrunken rectangles so touching
        // neighbors are legal.
        for i in 0..self.spots.len() {
            for j in (i + 1)..self.spots.len() {
                let mut a = CollisionGeometry::of_spot(&self.spots[i], self.spot_size);
                let mut b = CollisionGeometry::of_spot(&self.spots[j], self.spot_size);
                a.half_extents = (a.half_extents.0 - 1e-9, a.half_extents.1 - 1e-9);
                b.half_extents = (b.half_extents.0 - 1e-9, b.half_extents.1 - 1e-9);
                if check_collision(&a, &b) {
                    return Err(Error::config(format!("lot.spots[{i}] and lot.spots[{j}] overlap")));
                }
            }
        }
        Ok(())
    }

    /// The four boundary walls as rectangles just outside the lot.
    pub fn walls(&self) -> [CollisionGeometry; 4] {
        let (hw, hh) = (self.width / 2.0, self.height / 2.0);
        let t = WALL_THICKNESS;
        [
            CollisionGeometry::new((0.0, hh + t / 2.0), self.width + 2.0 * t, t, 0.0),
            CollisionGeometry::new((0.0, -hh - t / 2.0), self.width + 2.0 * t, t, 0.0),
            CollisionGeometry::new((hw + t / 2.0, 0.0), t, self.height + 2.0 * t, 0.0),
            CollisionGeometry::new((-hw - t / 2.0, 0.0), t, self.height + 2.0 * t, 0.0),
        ]
    }
}

fn place_in_spot(spot: &Spot) -> VehicleState {
    VehicleState::at_rest(spot.center.0, spot.center.1, spot.orientation)
}

fn any_vehicle_overlap(vehicles: &[WorldVehicle], p: &DynamicsParams) -> Option<(usize, usize)> {
    for i in 0..vehicles.len() {
        for j in (i + 1)..vehicles.len() {
            let a = CollisionGeometry::of_vehicle(&vehicles[i].state, p);
            let b = CollisionGeometry::of_vehicle(&vehicles[j].state, p);
            if check_collision(&a, &b) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Build a world according to the placement mode.
///
/// Training placements put every vehicle at rest in a distinct spot and set
/// `max_steps = 100`; control placement scatters controlled vehicles inside
/// the lot with `max_steps = 300`. Placement failures after 1000 resampling
/// attempts are configuration errors.
pub fn build_world(
    cfg: &LotConfig,
    placement: &Placement,
    p: &DynamicsParams,
    rng: &mut Rng,
) -> Result<WorldState> {
    cfg.validate()?;
    let total = cfg.n_controlled + cfg.n_parked;
    let mut vehicles = Vec::with_capacity(total);

    match placement {
        Placement::RandomSpots | Placement::FixedSpots(_) => {
            if total > cfg.spots.len() {
                return Err(Error::config(format!(
                    "{} vehicles do not fit in {} spots",
                    total,
                    cfg.spots.len()
                )));
            }
            let assignment: Vec<usize> = match placement {
                Placement::FixedSpots(idx) => {
                    if idx.len() != total {
                        return Err(Error::config(format!(
                            "fixed placement needs {} spot indices, got {}",
                            total,
                            idx.len()
                        )));
                    }
                    for &i in idx {
                        if i >= cfg.spots.len() {
                            return Err(Error::config(format!("spot index {i} out of range")));
                        }
                    }
                    let mut sorted = idx.clone();
                    sorted.sort_unstable();
                    sorted.dedup();
                    if sorted.len() != idx.len() {
                        return Err(Error::config("fixed placement has duplicate spot indices"));
                    }
                    idx.clone()
                }
                _ => sample_distinct(cfg.spots.len(), total, rng),
            };
            for (k, &spot_idx) in assignment.iter().enumerate() {
                let role = if k < cfg.n_controlled { VehicleRole::Controlled } else { VehicleRole::Parked };
                vehicles.push(WorldVehicle {
                    state: place_in_spot(&cfg.spots[spot_idx]),
                    role,
                    origin_spot: Some(spot_idx),
                    target_spot: None,
                });
            }
            Ok(WorldState {
                lot: cfg.clone(),
                vehicles,
                step_count: 0,
                terminal_event: None,
                max_steps: 100,
            })
        }
        Placement::ControlRandom => {
            if total > cfg.spots.len() {
                return Err(Error::config(format!(
                    "{} vehicles need {} distinct spots but the lot has {}",
                    total,
                    total,
                    cfg.spots.len()
                )));
            }
            // Parked vehicles occupy distinct spots; the remaining spots are
            // available as destinations.
            let chosen = sample_distinct(cfg.spots.len(), total, rng);
            let (parked_spots, dest_spots) = chosen.split_at(cfg.n_parked);
            for &spot_idx in parked_spots {
                vehicles.push(WorldVehicle {
                    state: place_in_spot(&cfg.spots[spot_idx]),
                    role: VehicleRole::Parked,
                    origin_spot: Some(spot_idx),
                    target_spot: None,
                });
            }
            let margin = (p.footprint.0 / 2.0).hypot(p.footprint.1 / 2.0) + 0.1;
            let (hw, hh) = (cfg.width / 2.0 - margin, cfg.height / 2.0 - margin);
            if hw <= 0.0 || hh <= 0.0 {
                return Err(Error::config("lot too small for interior placement"));
            }
            for (k, &dest) in dest_spots.iter().enumerate() {
                let mut placed = false;
                for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                    let x = rng.random_range(-hw..hw);
                    let y = rng.random_range(-hh..hh);
                    let h = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                    let v = rng.random_range(0.0..2.0);
                    let state = VehicleState::new(x, y, v * h.cos(), v * h.sin(), h);
                    let candidate = WorldVehicle {
                        state,
                        role: VehicleRole::Controlled,
                        origin_spot: None,
                        target_spot: Some(dest),
                    };
                    vehicles.push(candidate);
                    if any_vehicle_overlap(&vehicles, p).is_none() {
                        placed = true;
                        break;
                    }
                    vehicles.pop();
                }
                if !placed {
                    return Err(Error::config(format!(
                        "could not place controlled vehicle {k} without overlap after {MAX_PLACEMENT_ATTEMPTS} attempts"
                    )));
                }
            }
            // Keep controlled vehicles first for stable indexing.
            vehicles.sort_by_key(|v| match v.role {
                VehicleRole::Controlled => 0,
                VehicleRole::Parked => 1,
            });
            Ok(WorldState {
                lot: cfg.clone(),
                vehicles,
                step_count: 0,
                terminal_event: None,
                max_steps: 300,
            })
        }
    }
}

fn sample_distinct(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    // Partial Fisher-Yates over the index set.
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

impl WorldState {
    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal_event.is_some()
    }

    pub fn controlled_indices(&self) -> Vec<usize> {
        self.vehicles
            .iter()
            .enumerate()
            .filter(|(_, v)| v.role == VehicleRole::Controlled)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Advance every controlled vehicle simultaneously, then evaluate contacts.
///
/// `actions` carries one command per controlled vehicle, in vehicle-index
/// order. Stepping a terminal world is a usage error.
pub fn world_step(
    w: &WorldState,
    actions: &[ActionCommand],
    p: &DynamicsParams,
    noise: &NoiseCovariance,
    rng: &mut Rng,
) -> Result<WorldState> {
    if w.is_terminal() {
        return Err(Error::usage("world_step called on a terminal world"));
    }
    let controlled = w.controlled_indices();
    if actions.len() != controlled.len() {
        return Err(Error::usage(format!(
            "expected {} actions, got {}",
            controlled.len(),
            actions.len()
        )));
    }
    let mut next = w.clone();
    for (&vehicle_idx, &action) in controlled.iter().zip(actions) {
        let s = next.vehicles[vehicle_idx].state;
        next.vehicles[vehicle_idx].state = step_stochastic(s, action, p, noise, rng);
    }
    next.step_count += 1;

    if let Some((i, j)) = any_vehicle_overlap(&next.vehicles, p) {
        next.terminal_event = Some(TerminalEvent::Collision(i, j));
        return Ok(next);
    }
    let walls = next.lot.walls();
    'outer: for (i, v) in next.vehicles.iter().enumerate() {
        if v.role != VehicleRole::Controlled {
            continue;
        }
        let body = CollisionGeometry::of_vehicle(&v.state, p);
        for wall in &walls {
            if check_collision(&body, wall) {
                next.terminal_event = Some(TerminalEvent::Boundary(i));
                break 'outer;
            }
        }
    }
    if next.terminal_event.is_none() && next.step_count >= next.max_steps {
        next.terminal_event = Some(TerminalEvent::MaxSteps);
    }
    Ok(next)
}
