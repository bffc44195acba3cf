//! Reward functions over one decision interval, and episode-level metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{IntervalEvents, Road, ScenarioConfig, TickTelemetry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RewardKind {
    Stops,
    Wait,
    Linear,
    Cobb,
}

impl RewardKind {
    pub const ALL: [RewardKind; 4] = [
        RewardKind::Stops,
        RewardKind::Wait,
        RewardKind::Linear,
        RewardKind::Cobb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardKind::Stops => "stops",
            RewardKind::Wait => "wait",
            RewardKind::Linear => "linear",
            RewardKind::Cobb => "cobb",
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RewardKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown reward `{s}` (expected stops|wait|linear|cobb)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub alpha: f64,
    pub beta: f64,
    pub max_stops_norm: f64,
    pub max_wait_norm: f64,
}

impl RewardParams {
    /// Norms are the per-interval ceilings for a scenario: one stop per
    /// vehicle for stops, and half of `t_act` stopped seconds per vehicle for
    /// waits. An empty fleet falls back to a fleet of one.
    pub fn for_scenario(cfg: &ScenarioConfig) -> Self {
        let fleet = cfg.fleet_size().max(1) as f64;
        Self {
            alpha: 0.5,
            beta: 0.5,
            max_stops_norm: fleet,
            max_wait_norm: cfg.t_act as f64 * fleet / 2.0,
        }
    }

    fn check(&self) -> Result<()> {
        for n in [self.max_stops_norm, self.max_wait_norm] {
            // also rejects NaN
            if n.is_nan() || n <= 0.0 {
                return Err(Error::NonPositiveNorm(n));
            }
        }
        Ok(())
    }
}

pub fn reward_stops(ev: &IntervalEvents) -> f64 {
    -(ev.new_stops as f64)
}

pub fn reward_wait(ev: &IntervalEvents) -> f64 {
    -ev.stopped_seconds
}

pub fn reward_linear(r_stops: f64, r_wait: f64, p: &RewardParams) -> Result<f64> {
    p.check()?;
    Ok(p.alpha * (r_stops / p.max_stops_norm) + p.beta * (r_wait / p.max_wait_norm))
}

/// `0^x` is taken as 0 for the fractional exponents used here.
fn pow0(base: f64, exp: f64) -> f64 {
    if base <= 0.0 {
        0.0
    } else {
        base.powf(exp)
    }
}

pub fn reward_cobb_douglas(r_stops: f64, r_wait: f64, p: &RewardParams) -> Result<f64> {
    p.check()?;
    let s = -r_stops / p.max_stops_norm;
    let w = -r_wait / p.max_wait_norm;
    let v = pow0(s, p.alpha) * pow0(w, p.beta);
    Ok(if v == 0.0 { 0.0 } else { -v })
}

/// Reward used for training. With `normalized` set, the two single-objective
/// rewards are divided by the same norms the combined rewards use, so all
/// four objectives live on comparable scales.
pub fn interval_reward(kind: RewardKind, ev: &IntervalEvents, p: &RewardParams, normalized: bool) -> Result<f64> {
    let rs = reward_stops(ev);
    let rw = reward_wait(ev);
    match kind {
        RewardKind::Stops if normalized => {
            p.check()?;
            Ok(rs / p.max_stops_norm)
        }
        RewardKind::Wait if normalized => {
            p.check()?;
            Ok(rw / p.max_wait_norm)
        }
        RewardKind::Stops => Ok(rs),
        RewardKind::Wait => Ok(rw),
        RewardKind::Linear => reward_linear(rs, rw, p),
        RewardKind::Cobb => reward_cobb_douglas(rs, rw, p),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoadMetrics {
    pub vehicles: u32,
    pub mean_speed_mps: f64,
    pub total_stops: u64,
    pub mean_wait_s: f64,
}

/// Speeds, stops and waits of one episode. Stops are a count of events.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_speed_mps: f64,
    pub total_stops: u64,
    pub mean_wait_s: f64,
    pub ns: RoadMetrics,
    pub we: RoadMetrics,
}

impl MetricsReport {
    pub fn road(&self, road: Road) -> &RoadMetrics {
        match road {
            Road::Ns => &self.ns,
            Road::We => &self.we,
        }
    }
}

#[derive(Default)]
struct Totals {
    vehicles: u32,
    speed_sum: f64,
    vehicle_seconds: u64,
    stops: u64,
    wait: f64,
}

impl Totals {
    fn road_metrics(&self) -> RoadMetrics {
        RoadMetrics {
            vehicles: self.vehicles,
            mean_speed_mps: ratio(self.speed_sum, self.vehicle_seconds as f64),
            total_stops: self.stops,
            mean_wait_s: ratio(self.wait, self.vehicles as f64),
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn metrics(trace: &[TickTelemetry]) -> Result<MetricsReport> {
    if trace.is_empty() {
        return Err(Error::Empty("trace"));
    }
    let mut roads = [Totals::default(), Totals::default()];
    for tick in trace {
        for (t, r) in roads.iter_mut().zip(tick.roads.iter()) {
            t.vehicles = t.vehicles.max(r.vehicles);
            t.speed_sum += r.speed_sum;
            t.vehicle_seconds += r.vehicles as u64;
            t.stops += r.new_stops as u64;
            t.wait += r.stopped as f64;
        }
    }
    let all = Totals {
        vehicles: roads[0].vehicles + roads[1].vehicles,
        speed_sum: roads[0].speed_sum + roads[1].speed_sum,
        vehicle_seconds: roads[0].vehicle_seconds + roads[1].vehicle_seconds,
        stops: roads[0].stops + roads[1].stops,
        wait: roads[0].wait + roads[1].wait,
    }
    .road_metrics();
    Ok(MetricsReport {
        mean_speed_mps: all.mean_speed_mps,
        total_stops: all.total_stops,
        mean_wait_s: all.mean_wait_s,
        ns: roads[0].road_metrics(),
        we: roads[1].road_metrics(),
    })
}
