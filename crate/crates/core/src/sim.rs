//! Discrete-time microsimulation of two one-way loop roads that cross at a
//! single signalized point.
//!
//! Each road is a ring of `loop_length_m` metres. A vehicle's position is its
//! distance to the stop line measured along the direction of travel, so a
//! vehicle moves by *decreasing* `dist_to_stopline_m` and wraps back to the far
//! end of the loop once it crosses the line. The first `approach_length_m`
//! metres before the stop line form the approach: only vehicles there are
//! observed and polled.
//!
//! Car following uses a safe-speed rule: a vehicle never drives faster than
//! the speed from which it could still stop behind its leader (or behind the
//! stop line while its road shows red) when braking at `decel_mps2`. Hard
//! caps on the distance travelled per tick guarantee that vehicles never
//! overlap and never enter the intersection on red, even when that requires
//! braking harder than `decel_mps2`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integration step in seconds.
pub const DT: f64 = 1.0;

/// The six demand configurations `(n_ns, n_we)` used throughout the experiments.
pub const DEMANDS: [(usize, usize); 6] = [(11, 6), (11, 11), (22, 11), (22, 22), (32, 16), (32, 32)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_ns: usize,
    pub n_we: usize,
    pub horizon_steps: u32,
    pub t_act: u32,
    pub loop_length_m: f64,
    pub approach_length_m: f64,
    pub n_segments: usize,
    pub v_max_mps: f64,
    pub accel_mps2: f64,
    pub decel_mps2: f64,
    pub vehicle_length_m: f64,
    pub min_gap_m: f64,
    pub stop_speed_threshold_mps: f64,
    pub preference_split: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_ns: 11,
            n_we: 6,
            horizon_steps: 3600,
            t_act: 5,
            loop_length_m: 600.0,
            approach_length_m: 300.0,
            n_segments: 3,
            v_max_mps: 13.89,
            accel_mps2: 2.0,
            decel_mps2: 4.5,
            vehicle_length_m: 5.0,
            min_gap_m: 2.5,
            stop_speed_threshold_mps: 0.1,
            preference_split: 0.5,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn with_demand(mut self, n_ns: usize, n_we: usize) -> Self {
        self.n_ns = n_ns;
        self.n_we = n_we;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn fleet_size(&self) -> usize {
        self.n_ns + self.n_we
    }

    /// Short identifier such as `22_11`.
    pub fn scenario_id(&self) -> String {
        format!("{}_{}", self.n_ns, self.n_we)
    }

    pub fn segment_length_m(&self) -> f64 {
        self.approach_length_m / self.n_segments as f64
    }

    pub fn obs_dim(&self) -> usize {
        2 * self.n_segments
    }

    pub fn decisions_per_episode(&self) -> u32 {
        self.horizon_steps / self.t_act
    }

    fn spacing(&self) -> f64 {
        self.vehicle_length_m + self.min_gap_m
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("loop_length_m", self.loop_length_m),
            ("approach_length_m", self.approach_length_m),
            ("v_max_mps", self.v_max_mps),
            ("accel_mps2", self.accel_mps2),
            ("decel_mps2", self.decel_mps2),
            ("vehicle_length_m", self.vehicle_length_m),
            ("min_gap_m", self.min_gap_m),
            ("stop_speed_threshold_mps", self.stop_speed_threshold_mps),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {value}")));
            }
        }
        if self.t_act == 0 || self.horizon_steps == 0 || self.n_segments == 0 {
            return Err(Error::InvalidConfig(
                "t_act, horizon_steps and n_segments must be positive".into(),
            ));
        }
        if self.approach_length_m > self.loop_length_m {
            return Err(Error::InvalidConfig(format!(
                "approach_length_m {} exceeds loop_length_m {}",
                self.approach_length_m, self.loop_length_m
            )));
        }
        if !(0.0..=1.0).contains(&self.preference_split) {
            return Err(Error::InvalidConfig(format!(
                "preference_split must lie in [0, 1], got {}",
                self.preference_split
            )));
        }
        if self.stop_speed_threshold_mps >= self.v_max_mps {
            return Err(Error::InvalidConfig("stop threshold must be below v_max".into()));
        }
        for n in [self.n_ns, self.n_we] {
            if n as f64 * self.spacing() >= self.loop_length_m {
                return Err(Error::Placement {
                    fleet: n,
                    spacing: self.spacing(),
                    loop_length: self.loop_length_m,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Road {
    Ns,
    We,
}

impl Road {
    pub const ALL: [Road; 2] = [Road::Ns, Road::We];

    pub fn index(self) -> usize {
        match self {
            Road::Ns => 0,
            Road::We => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Road::Ns => "ns",
            Road::We => "we",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preference {
    Stops,
    Wait,
}

/// Which road holds green. Doubles as the controller's action space:
/// action 0 is `NsGreen`, action 1 is `WeGreen`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Phase {
    #[default]
    NsGreen,
    WeGreen,
}

impl Phase {
    pub fn from_action(action: usize) -> Phase {
        if action == 0 {
            Phase::NsGreen
        } else {
            Phase::WeGreen
        }
    }

    pub fn action(self) -> usize {
        match self {
            Phase::NsGreen => 0,
            Phase::WeGreen => 1,
        }
    }

    pub fn green_road(self) -> Road {
        match self {
            Phase::NsGreen => Road::Ns,
            Phase::WeGreen => Road::We,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::NsGreen => "ns_green",
            Phase::WeGreen => "we_green",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: usize,
    pub road: Road,
    pub dist_to_stopline_m: f64,
    pub speed_mps: f64,
    pub preference: Preference,
    pub stop_count: u32,
    pub wait_time_s: f64,
    pub is_stopped: bool,
}

/// Segment occupancies: NS segments near to far from the stop line, then WE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub occupancy: Vec<f64>,
}

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.occupancy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoteTally {
    pub votes_stops: u32,
    pub votes_wait: u32,
}

impl VoteTally {
    pub fn new(votes_stops: u32, votes_wait: u32) -> Self {
        Self {
            votes_stops,
            votes_wait,
        }
    }

    pub fn polled(&self) -> u32 {
        self.votes_stops + self.votes_wait
    }
}

/// Stop and wait accounting accumulated since the previous drain.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalEvents {
    /// New stop events per vehicle id.
    pub vehicle_stops: Vec<u32>,
    /// Stopped seconds per vehicle id.
    pub vehicle_stopped_s: Vec<f64>,
    pub new_stops: u32,
    pub stopped_seconds: f64,
}

/// Per-road aggregate of a single tick, the raw material of episode metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoadTick {
    pub vehicles: u32,
    pub speed_sum: f64,
    pub new_stops: u32,
    pub stopped: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickTelemetry {
    pub clock: u64,
    pub phase: Phase,
    pub roads: [RoadTick; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimWorld {
    cfg: ScenarioConfig,
    /// Per road, sorted by increasing distance to the stop line.
    roads: [Vec<VehicleState>; 2],
    phase: Phase,
    clock: u64,
    rng: ChaCha8Rng,
    pending: IntervalEvents,
    last_tick: Option<TickTelemetry>,
}

/// Largest speed from which a vehicle can still stop within `gap` metres
/// behind an obstacle moving at `leader_speed` that itself brakes at `decel`.
fn safe_speed(gap: f64, leader_speed: f64, decel: f64) -> f64 {
    let gap = gap.max(0.0);
    let bt = decel * DT;
    -bt + (bt * bt + leader_speed * leader_speed + 2.0 * decel * gap).sqrt()
}

pub fn init_scenario(cfg: &ScenarioConfig) -> Result<SimWorld> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fleet = cfg.fleet_size();

    let n_stops = (cfg.preference_split * fleet as f64).round() as usize;
    let mut prefs: Vec<Preference> = (0..fleet)
        .map(|i| {
            if i < n_stops {
                Preference::Stops
            } else {
                Preference::Wait
            }
        })
        .collect();
    prefs.shuffle(&mut rng);

    let mut roads: [Vec<VehicleState>; 2] = [Vec::new(), Vec::new()];
    let mut next_id = 0;
    for (road, n) in [(Road::Ns, cfg.n_ns), (Road::We, cfg.n_we)] {
        for dist in place_on_loop(n, cfg, &mut rng)? {
            roads[road.index()].push(VehicleState {
                id: next_id,
                road,
                dist_to_stopline_m: dist,
                speed_mps: 0.0,
                preference: prefs[next_id],
                stop_count: 0,
                wait_time_s: 0.0,
                is_stopped: true,
            });
            next_id += 1;
        }
        sort_road(&mut roads[road.index()]);
    }

    Ok(SimWorld {
        cfg: cfg.clone(),
        roads,
        phase: Phase::NsGreen,
        clock: 0,
        rng,
        pending: IntervalEvents {
            vehicle_stops: vec![0; fleet],
            vehicle_stopped_s: vec![0.0; fleet],
            ..Default::default()
        },
        last_tick: None,
    })
}

/// Uniformly random non-overlapping positions on a loop: draw sorted offsets
/// in the slack length, then re-insert one mandatory spacing before each
/// vehicle and rotate the whole arrangement by a random amount.
fn place_on_loop(n: usize, cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let spacing = cfg.spacing();
    let slack = cfg.loop_length_m - n as f64 * spacing;
    if slack <= 0.0 {
        return Err(Error::Placement {
            fleet: n,
            spacing,
            loop_length: cfg.loop_length_m,
        });
    }
    let mut offsets: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * slack).collect();
    offsets.sort_by(f64::total_cmp);
    let rotation = rng.random::<f64>() * cfg.loop_length_m;
    Ok(offsets
        .iter()
        .enumerate()
        .map(|(i, off)| wrap(off + i as f64 * spacing + rotation, cfg.loop_length_m))
        .collect())
}

fn wrap(x: f64, length: f64) -> f64 {
    let w = x.rem_euclid(length);
    if w >= length {
        0.0
    } else {
        w
    }
}

/// Index of the vehicle with the most room to its leader (first on ties).
fn largest_headway(road: &[VehicleState], loop_length: f64) -> usize {
    let n = road.len();
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..n {
        let mut ahead = road[i].dist_to_stopline_m - road[(i + n - 1) % n].dist_to_stopline_m;
        if ahead <= 0.0 {
            ahead += loop_length;
        }
        if ahead > best.1 {
            best = (i, ahead);
        }
    }
    best.0
}

fn sort_road(road: &mut [VehicleState]) {
    road.sort_by(|a, b| a.dist_to_stopline_m.total_cmp(&b.dist_to_stopline_m));
}

impl SimWorld {
    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Vehicles on one road, nearest to the stop line first.
    pub fn road(&self, road: Road) -> &[VehicleState] {
        &self.roads[road.index()]
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        self.roads.iter().flatten()
    }

    pub fn fleet_size(&self) -> usize {
        self.roads.iter().map(Vec::len).sum()
    }

    /// Random stream owned by this world; consumers that need per-episode
    /// randomness draw from it to keep a single seeded source.
    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Telemetry of the most recent tick, if any.
    pub fn last_tick(&self) -> Option<&TickTelemetry> {
        self.last_tick.as_ref()
    }

    /// Replace a road's vehicles (tests and hand-built scenarios). Vehicles
    /// are re-sorted; ids must be unique and below the fleet size.
    pub fn set_vehicles(&mut self, road: Road, mut vehicles: Vec<VehicleState>) {
        for v in &mut vehicles {
            v.road = road;
            v.is_stopped = v.speed_mps < self.cfg.stop_speed_threshold_mps;
        }
        sort_road(&mut vehicles);
        self.roads[road.index()] = vehicles;
        let fleet = self.vehicles().map(|v| v.id + 1).max().unwrap_or(0);
        self.pending.vehicle_stops.resize(fleet, 0);
        self.pending.vehicle_stopped_s.resize(fleet, 0.0);
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    /// Advance the world by one second.
    pub fn tick(&mut self) {
        let cfg = &self.cfg;
        let mut telemetry = TickTelemetry {
            clock: self.clock + 1,
            phase: self.phase,
            roads: [RoadTick::default(); 2],
        };
        for road in Road::ALL {
            let red = self.phase.green_road() != road;
            let vehicles = &mut self.roads[road.index()];
            let n = vehicles.len();
            let mut stats = RoadTick {
                vehicles: n as u32,
                ..Default::default()
            };
            // Leader is the next vehicle ahead (smaller distance); the nearest
            // vehicle follows the farthest one across the wrap. Vehicles are
            // processed front to back starting after the largest headway, so
            // the only leader not yet moved this tick is the one farthest away.
            let start = largest_headway(vehicles, cfg.loop_length_m);
            for k in 0..n {
                let i = (start + k) % n;
                let leader_idx = (i + n - 1) % n;
                let (leader_dist, leader_speed) = {
                    let l = &vehicles[leader_idx];
                    (l.dist_to_stopline_m, l.speed_mps)
                };
                let v = &vehicles[i];
                let mut ahead = v.dist_to_stopline_m - leader_dist;
                if ahead <= 0.0 {
                    ahead += cfg.loop_length_m;
                }
                let gap = ahead - cfg.vehicle_length_m - cfg.min_gap_m;

                let mut speed = (v.speed_mps + cfg.accel_mps2 * DT).min(cfg.v_max_mps);
                if n > 1 {
                    speed = speed
                        .min(safe_speed(gap, leader_speed, cfg.decel_mps2))
                        .min(gap.max(0.0) / DT);
                }
                if red {
                    let to_line = v.dist_to_stopline_m;
                    speed = speed.min(safe_speed(to_line, 0.0, cfg.decel_mps2)).min(to_line / DT);
                }
                let speed = speed.max(0.0);

                let v = &mut vehicles[i];
                let mut dist = v.dist_to_stopline_m - speed * DT;
                if dist < 0.0 {
                    dist = wrap(dist, cfg.loop_length_m);
                }
                v.dist_to_stopline_m = dist;
                v.speed_mps = speed;
                let stopped = speed < cfg.stop_speed_threshold_mps;
                if stopped && !v.is_stopped {
                    v.stop_count += 1;
                    self.pending.vehicle_stops[v.id] += 1;
                    self.pending.new_stops += 1;
                    stats.new_stops += 1;
                }
                if stopped {
                    v.wait_time_s += DT;
                    self.pending.vehicle_stopped_s[v.id] += DT;
                    self.pending.stopped_seconds += DT;
                    stats.stopped += 1;
                }
                v.is_stopped = stopped;
                stats.speed_sum += speed;
            }
            sort_road(vehicles);
            telemetry.roads[road.index()] = stats;
        }
        self.clock += 1;
        self.last_tick = Some(telemetry);
    }

    pub fn observe(&self) -> Observation {
        let cfg = &self.cfg;
        let seg = cfg.segment_length_m();
        let mut occupancy = vec![0.0; cfg.obs_dim()];
        for road in Road::ALL {
            let base = road.index() * cfg.n_segments;
            for v in self.road(road) {
                if v.dist_to_stopline_m < cfg.approach_length_m {
                    let bin = ((v.dist_to_stopline_m / seg) as usize).min(cfg.n_segments - 1);
                    occupancy[base + bin] += cfg.vehicle_length_m;
                }
            }
        }
        for o in &mut occupancy {
            *o = (*o / seg).clamp(0.0, 1.0);
        }
        Observation { occupancy }
    }

    pub fn poll_voters(&self) -> VoteTally {
        let mut tally = VoteTally::default();
        for v in self.vehicles() {
            if v.dist_to_stopline_m < self.cfg.approach_length_m {
                match v.preference {
                    Preference::Stops => tally.votes_stops += 1,
                    Preference::Wait => tally.votes_wait += 1,
                }
            }
        }
        tally
    }

    pub fn drain_interval_events(&mut self) -> IntervalEvents {
        let fleet = self.pending.vehicle_stops.len();
        std::mem::replace(
            &mut self.pending,
            IntervalEvents {
                vehicle_stops: vec![0; fleet],
                vehicle_stopped_s: vec![0.0; fleet],
                ..Default::default()
            },
        )
    }
}
