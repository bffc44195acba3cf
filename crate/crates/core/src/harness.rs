//! Episodes, demand sweeps, action-agreement analysis and result files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neural::Mlp;
use crate::policy::{integrate, normalize_q, select_action, Controller, Decision, NormalizedQ, PolicyId, QVector};
use crate::rewards::{metrics, MetricsReport, RewardKind};
use crate::sim::{init_scenario, Observation, Phase, ScenarioConfig, TickTelemetry, VoteTally, DEMANDS};
use crate::voting::{VoteRule, Weights};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    /// Simulation clock when the decision was taken.
    pub clock: u64,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub n_ns: usize,
    pub n_we: usize,
    pub seed: u64,
    pub policy: PolicyId,
    pub decisions: Vec<DecisionRecord>,
    /// One entry per simulated second. Empty for logs kept only for replay.
    pub telemetry: Vec<TickTelemetry>,
}

impl EpisodeLog {
    pub fn scenario(&self) -> String {
        format!("{}_{}", self.n_ns, self.n_we)
    }

    pub fn fleet_size(&self) -> usize {
        self.n_ns + self.n_we
    }

    pub fn metrics(&self) -> Result<MetricsReport> {
        if self.telemetry.is_empty() {
            return Err(Error::Empty("episode telemetry"));
        }
        metrics(&self.telemetry)
    }

    /// Fraction of decisions that changed the phase.
    pub fn switch_rate(&self) -> f64 {
        if self.decisions.is_empty() {
            return 0.0;
        }
        let switches = self
            .decisions
            .iter()
            .filter(|d| d.decision.action != d.decision.incumbent.action())
            .count();
        switches as f64 / self.decisions.len() as f64
    }

    /// Per-second trace: clock, phase, per-road mean speed, cumulative stops
    /// and cumulative wait (seconds).
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("clock,phase,ns_mean_speed,we_mean_speed,cum_stops,cum_wait\n");
        let (mut stops, mut wait) = (0u64, 0u64);
        for t in &self.telemetry {
            let mean = |i: usize| {
                let r = &t.roads[i];
                if r.vehicles == 0 {
                    0.0
                } else {
                    r.speed_sum / r.vehicles as f64
                }
            };
            stops += t.roads.iter().map(|r| r.new_stops as u64).sum::<u64>();
            wait += t.roads.iter().map(|r| r.stopped as u64).sum::<u64>();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                t.clock,
                t.phase.name(),
                mean(0),
                mean(1),
                stops,
                wait
            );
        }
        out
    }

    pub fn decisions_csv(&self) -> String {
        let mut out = String::new();
        write_decisions(&mut out, self, true);
        out
    }

    /// SHA-256 over the decision log and the per-second trace.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.decisions_csv());
        h.update(self.trace_csv());
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

const OBJECTIVES: [RewardKind; 2] = [RewardKind::Stops, RewardKind::Wait];

fn decisions_header(obs_dim: usize) -> String {
    let mut h = String::from("scenario,n_ns,n_we,seed,policy,vote_rule,clock,incumbent");
    for i in 0..obs_dim {
        let _ = write!(h, ",obs_{i}");
    }
    h.push_str(",votes_stops,votes_wait,w_stops,w_wait,q_stops_0,q_stops_1,q_wait_0,q_wait_1,qp_0,qp_1,action");
    h
}

fn write_decisions(out: &mut String, log: &EpisodeLog, header: bool) {
    let obs_dim = log
        .decisions
        .first()
        .map_or(6, |d| d.decision.observation.occupancy.len());
    if header {
        out.push_str(&decisions_header(obs_dim));
        out.push('\n');
    }
    let nan2 = [f64::NAN, f64::NAN];
    for r in &log.decisions {
        let d = &r.decision;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            log.scenario(),
            log.n_ns,
            log.n_we,
            log.seed,
            log.policy.name(),
            log.policy.rule_name(),
            r.clock,
            d.incumbent.action()
        );
        for o in &d.observation.occupancy {
            let _ = write!(out, ",{o}");
        }
        let _ = write!(
            out,
            ",{},{},{},{}",
            d.tally.votes_stops,
            d.tally.votes_wait,
            d.weights.stops(),
            d.weights.wait()
        );
        for k in OBJECTIVES {
            let q = d.per_objective.get(&k).map_or(&nan2[..], |q| &q.values[..]);
            let _ = write!(out, ",{},{}", q[0], q[1]);
        }
        let _ = writeln!(
            out,
            ",{},{},{}",
            d.integrated.values[0], d.integrated.values[1], d.action
        );
    }
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("decision log line {line}: {msg}"))
}

/// Read a decision log written by [`write_decision_logs`]. Telemetry is not
/// part of the file, so the returned logs carry none.
pub fn read_decision_logs(text: &str) -> Result<Vec<EpisodeLog>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Empty("decision log"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let obs_dim = cols.iter().filter(|c| c.starts_with("obs_")).count();
    if cols.len() != 19 + obs_dim || header != decisions_header(obs_dim) {
        return Err(parse_err(1, "unexpected header"));
    }
    let mut logs: Vec<EpisodeLog> = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(parse_err(
                n,
                format!("expected {} fields, found {}", cols.len(), f.len()),
            ));
        }
        let num = |j: usize| {
            f[j].parse::<f64>()
                .map_err(|e| parse_err(n, format!("{}: {e}", cols[j])))
        };
        let int = |j: usize| {
            f[j].parse::<u64>()
                .map_err(|e| parse_err(n, format!("{}: {e}", cols[j])))
        };
        let n_ns = int(1)? as usize;
        let n_we = int(2)? as usize;
        let seed = int(3)?;
        let rule = if f[5] == "-" {
            None
        } else {
            Some(f[5].parse::<VoteRule>()?)
        };
        let policy = PolicyId::parse(f[4], rule)?;
        let clock = int(6)?;
        let incumbent = Phase::from_action(int(7)? as usize);
        let base = 8 + obs_dim;
        let occupancy = (8..base).map(num).collect::<Result<Vec<_>>>()?;
        let tally = VoteTally::new(int(base)? as u32, int(base + 1)? as u32);
        let weights = match policy {
            PolicyId::Multi(_) => Weights::pair(num(base + 2)?, num(base + 3)?),
            PolicyId::Single(k) => Weights {
                w: BTreeMap::from([(k, 1.0)]),
            },
        };
        let mut per_objective = BTreeMap::new();
        for (j, k) in OBJECTIVES.iter().enumerate() {
            let a = num(base + 4 + 2 * j)?;
            let b = num(base + 5 + 2 * j)?;
            if !a.is_nan() {
                per_objective.insert(*k, NormalizedQ { values: vec![a, b] });
            }
        }
        let integrated = QVector::new(vec![num(base + 8)?, num(base + 9)?]);
        let action = int(base + 10)? as usize;
        let record = DecisionRecord {
            clock,
            decision: Decision {
                observation: Observation { occupancy },
                tally,
                weights,
                per_objective,
                integrated,
                incumbent,
                action,
            },
        };
        match logs.last_mut() {
            Some(l) if l.n_ns == n_ns && l.n_we == n_we && l.seed == seed && l.policy == policy => {
                l.decisions.push(record)
            }
            _ => logs.push(EpisodeLog {
                n_ns,
                n_we,
                seed,
                policy,
                decisions: vec![record],
                telemetry: Vec::new(),
            }),
        }
    }
    Ok(logs)
}

pub fn write_decision_logs(logs: &[EpisodeLog], path: &Path) -> Result<()> {
    let mut out = String::new();
    for (i, log) in logs.iter().enumerate() {
        write_decisions(&mut out, log, i == 0);
    }
    if logs.is_empty() {
        out.push_str(&decisions_header(6));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Run one episode: `horizon / t_act` cycles of decide, set phase, tick
/// `t_act` seconds, drain the interval accounting.
pub fn run_episode(cfg: &ScenarioConfig, controller: &Controller) -> Result<EpisodeLog> {
    if controller.input_dim() != cfg.obs_dim() {
        return Err(Error::DimensionMismatch {
            expected: cfg.obs_dim(),
            got: controller.input_dim(),
        });
    }
    let mut world = init_scenario(cfg)?;
    let n_decisions = cfg.decisions_per_episode();
    let mut decisions = Vec::with_capacity(n_decisions as usize);
    let mut telemetry = Vec::with_capacity(cfg.horizon_steps as usize);
    let mut tick = |world: &mut crate::sim::SimWorld| {
        world.tick();
        telemetry.push(world.last_tick().cloned().expect("tick recorded"));
    };
    for _ in 0..n_decisions {
        let clock = world.clock();
        let decision = controller.decide_world(&world)?;
        world.set_phase(Phase::from_action(decision.action));
        decisions.push(DecisionRecord { clock, decision });
        for _ in 0..cfg.t_act {
            tick(&mut world);
        }
        world.drain_interval_events();
    }
    while world.clock() < cfg.horizon_steps as u64 {
        tick(&mut world);
    }
    Ok(EpisodeLog {
        n_ns: cfg.n_ns,
        n_we: cfg.n_we,
        seed: cfg.seed,
        policy: controller.id(),
        decisions,
        telemetry,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub n_ns: usize,
    pub n_we: usize,
    pub seed: u64,
    pub policy: PolicyId,
    pub metrics: MetricsReport,
    pub switch_rate: f64,
}

impl EpisodeSummary {
    pub fn scenario(&self) -> String {
        format!("{}_{}", self.n_ns, self.n_we)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub n_ns: usize,
    pub n_we: usize,
    pub policy: PolicyId,
    pub seeds: usize,
    pub mean_speed: MeanStd,
    pub total_stops: MeanStd,
    pub mean_wait: MeanStd,
    pub switch_rate: MeanStd,
}

impl AggregateRow {
    pub fn scenario(&self) -> String {
        format!("{}_{}", self.n_ns, self.n_we)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub per_seed: Vec<EpisodeSummary>,
    pub aggregate: Vec<AggregateRow>,
}

impl SweepResult {
    pub fn row(&self, n_ns: usize, n_we: usize, policy: PolicyId) -> Option<&AggregateRow> {
        self.aggregate
            .iter()
            .find(|r| r.n_ns == n_ns && r.n_we == n_we && r.policy == policy)
    }

    pub fn per_seed_csv(&self) -> String {
        let mut out = String::from(
            "scenario,seed,policy,vote_rule,mean_speed,total_stops,mean_wait,switch_rate,\
             ns_mean_speed,ns_total_stops,ns_mean_wait,we_mean_speed,we_total_stops,we_mean_wait\n",
        );
        for s in &self.per_seed {
            let m = &s.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.scenario(),
                s.seed,
                s.policy.name(),
                s.policy.rule_name(),
                m.mean_speed_mps,
                m.total_stops,
                m.mean_wait_s,
                s.switch_rate,
                m.ns.mean_speed_mps,
                m.ns.total_stops,
                m.ns.mean_wait_s,
                m.we.mean_speed_mps,
                m.we.total_stops,
                m.we.mean_wait_s
            );
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = format!("{AGGREGATE_HEADER}\n");
        for r in &self.aggregate {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.scenario(),
                r.policy.name(),
                r.policy.rule_name(),
                r.seeds,
                r.mean_speed.mean,
                r.mean_speed.std,
                r.total_stops.mean,
                r.total_stops.std,
                r.mean_wait.mean,
                r.mean_wait.std,
                r.switch_rate.mean,
                r.switch_rate.std
            );
        }
        out
    }

    /// Per-demand records `{policy -> {speed, stops, wait}}` of the seed means.
    pub fn radar_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Cell {
            speed: f64,
            stops: f64,
            wait: f64,
        }
        #[derive(Serialize)]
        struct Record {
            scenario: String,
            n_ns: usize,
            n_we: usize,
            policies: BTreeMap<String, Cell>,
        }
        let mut records: Vec<Record> = Vec::new();
        for r in &self.aggregate {
            let cell = Cell {
                speed: r.mean_speed.mean,
                stops: r.total_stops.mean,
                wait: r.mean_wait.mean,
            };
            match records.iter_mut().find(|x| x.n_ns == r.n_ns && x.n_we == r.n_we) {
                Some(rec) => {
                    rec.policies.insert(r.policy.label(), cell);
                }
                None => records.push(Record {
                    scenario: r.scenario(),
                    n_ns: r.n_ns,
                    n_we: r.n_we,
                    policies: BTreeMap::from([(r.policy.label(), cell)]),
                }),
            }
        }
        let mut s = serde_json::to_string_pretty(&records)?;
        s.push('\n');
        Ok(s)
    }
}

const AGGREGATE_HEADER: &str =
    "scenario,policy,vote_rule,seeds,mean_speed_mean,mean_speed_std,total_stops_mean,total_stops_std,\
     mean_wait_mean,mean_wait_std,switch_rate_mean,switch_rate_std";

/// Parse the file written from [`SweepResult::aggregate_csv`].
pub fn read_aggregate_csv(text: &str) -> Result<Vec<AggregateRow>> {
    let err = |line: usize, msg: &str| Error::Parse(format!("aggregate csv line {line}: {msg}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == AGGREGATE_HEADER => {}
        _ => return Err(err(1, "unexpected header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(err(i + 1, "expected 12 fields"));
        }
        let (n_ns, n_we) = f[0].split_once('_').ok_or_else(|| err(i + 1, "bad scenario"))?;
        let policy = match f[1] {
            "multi" => PolicyId::Multi(f[2].parse()?),
            p => PolicyId::Single(p.parse()?),
        };
        let num = |j: usize| f[j].parse::<f64>().map_err(|_| err(i + 1, "bad number"));
        let ms = |j: usize| -> Result<MeanStd> {
            Ok(MeanStd {
                mean: num(j)?,
                std: num(j + 1)?,
            })
        };
        rows.push(AggregateRow {
            n_ns: n_ns.parse().map_err(|_| err(i + 1, "bad scenario"))?,
            n_we: n_we.parse().map_err(|_| err(i + 1, "bad scenario"))?,
            policy,
            seeds: f[3].parse().map_err(|_| err(i + 1, "bad seed count"))?,
            mean_speed: ms(4)?,
            total_stops: ms(6)?,
            mean_wait: ms(8)?,
            switch_rate: ms(10)?,
        });
    }
    Ok(rows)
}

/// Proportional against majority voting on one demand.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleComparison {
    pub n_ns: usize,
    pub n_we: usize,
    pub proportional: AggregateRow,
    pub majority: AggregateRow,
}

impl RuleComparison {
    /// Majority is better on both stops and waits by more than one standard
    /// deviation (the larger of the two rules' deviations).
    pub fn proportional_dominated(&self) -> bool {
        let worse = |p: MeanStd, m: MeanStd| p.mean - m.mean > p.std.max(m.std);
        worse(self.proportional.total_stops, self.majority.total_stops)
            && worse(self.proportional.mean_wait, self.majority.mean_wait)
    }
}

/// Pair up the proportional and majority rows of every demand holding both.
pub fn compare_vote_rules(rows: &[AggregateRow]) -> Vec<RuleComparison> {
    let find = |n_ns, n_we, rule| {
        rows.iter()
            .find(|r| r.n_ns == n_ns && r.n_we == n_we && r.policy == PolicyId::Multi(rule))
    };
    let mut out: Vec<RuleComparison> = Vec::new();
    for r in rows {
        if out.iter().any(|c| (c.n_ns, c.n_we) == (r.n_ns, r.n_we)) {
            continue;
        }
        if let (Some(p), Some(m)) = (
            find(r.n_ns, r.n_we, VoteRule::Proportional),
            find(r.n_ns, r.n_we, VoteRule::Majority),
        ) {
            out.push(RuleComparison {
                n_ns: r.n_ns,
                n_we: r.n_we,
                proportional: p.clone(),
                majority: m.clone(),
            });
        }
    }
    out
}

/// Text table of [`compare_vote_rules`].
pub fn rule_comparison_csv(cmp: &[RuleComparison]) -> String {
    let mut out = String::from(
        "scenario,prop_stops_mean,prop_stops_std,maj_stops_mean,maj_stops_std,\
         prop_wait_mean,prop_wait_std,maj_wait_mean,maj_wait_std,proportional_dominated\n",
    );
    for c in cmp {
        let (p, m) = (&c.proportional, &c.majority);
        let _ = writeln!(
            out,
            "{}_{},{},{},{},{},{},{},{},{},{}",
            c.n_ns,
            c.n_we,
            p.total_stops.mean,
            p.total_stops.std,
            m.total_stops.mean,
            m.total_stops.std,
            p.mean_wait.mean,
            p.mean_wait.std,
            m.mean_wait.mean,
            m.mean_wait.std,
            c.proportional_dominated()
        );
    }
    out
}

pub fn emit_radar_data(sweep: &SweepResult, path: &Path) -> Result<()> {
    if sweep.aggregate.is_empty() {
        return Err(Error::Empty("sweep"));
    }
    fs::write(path, sweep.radar_json()?)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub demands: Vec<(usize, usize)>,
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicyId>,
    /// Worker threads; results do not depend on it.
    pub parallel: usize,
    /// Keep decision logs of multi-objective episodes whose seed is among
    /// the first `log_seeds` seeds.
    pub log_seeds: usize,
}

impl SweepSpec {
    pub fn standard_demands(base: ScenarioConfig, seeds: u64, policies: Vec<PolicyId>) -> Self {
        Self {
            base,
            demands: DEMANDS.to_vec(),
            seeds: (1..=seeds).collect(),
            policies,
            parallel: 1,
            log_seeds: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    pub result: SweepResult,
    /// Decision logs (without telemetry) of the retained multi-objective episodes.
    pub logs: Vec<EpisodeLog>,
}

pub fn run_sweep(spec: &SweepSpec, controllers: &BTreeMap<PolicyId, Controller>) -> Result<SweepOutput> {
    if spec.seeds.is_empty() {
        return Err(Error::Empty("seeds"));
    }
    for p in &spec.policies {
        if !controllers.contains_key(p) {
            return Err(Error::Parse(format!("no controller for policy {}", p.label())));
        }
    }
    let mut jobs = Vec::new();
    for &(n_ns, n_we) in &spec.demands {
        for &policy in &spec.policies {
            for (i, &seed) in spec.seeds.iter().enumerate() {
                jobs.push((n_ns, n_we, policy, seed, i < spec.log_seeds));
            }
        }
    }
    let run = |&(n_ns, n_we, policy, seed, keep): &(usize, usize, PolicyId, u64, bool)| -> Result<(EpisodeSummary, Option<EpisodeLog>)> {
        let cfg = spec.base.clone().with_demand(n_ns, n_we).with_seed(seed);
        let mut log = run_episode(&cfg, &controllers[&policy])?;
        let summary = EpisodeSummary {
            n_ns,
            n_we,
            seed,
            policy,
            metrics: log.metrics()?,
            switch_rate: log.switch_rate(),
        };
        let kept = (keep && matches!(policy, PolicyId::Multi(_))).then(|| {
            log.telemetry = Vec::new();
            log
        });
        Ok((summary, kept))
    };
    let results: Vec<Result<(EpisodeSummary, Option<EpisodeLog>)>> = if spec.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.parallel)
            .build()
            .map_err(|e| Error::Parse(format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    } else {
        jobs.iter().map(run).collect()
    };
    let mut per_seed = Vec::with_capacity(results.len());
    let mut logs = Vec::new();
    for r in results {
        let (summary, log) = r?;
        per_seed.push(summary);
        logs.extend(log);
    }
    let mut aggregate = Vec::new();
    for &(n_ns, n_we) in &spec.demands {
        for &policy in &spec.policies {
            let rows: Vec<&EpisodeSummary> = per_seed
                .iter()
                .filter(|s| s.n_ns == n_ns && s.n_we == n_we && s.policy == policy)
                .collect();
            let col = |f: &dyn Fn(&EpisodeSummary) -> f64| MeanStd::of(&rows.iter().map(|s| f(s)).collect::<Vec<_>>());
            aggregate.push(AggregateRow {
                n_ns,
                n_we,
                policy,
                seeds: rows.len(),
                mean_speed: col(&|s| s.metrics.mean_speed_mps),
                total_stops: col(&|s| s.metrics.total_stops as f64),
                mean_wait: col(&|s| s.metrics.mean_wait_s),
                switch_rate: col(&|s| s.switch_rate),
            });
        }
    }
    Ok(SweepOutput {
        result: SweepResult { per_seed, aggregate },
        logs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum DemandBucket {
    Low,
    Medium,
    High,
}

impl DemandBucket {
    pub const ALL: [DemandBucket; 3] = [DemandBucket::Low, DemandBucket::Medium, DemandBucket::High];

    /// Low: (11, 6), (11, 11); medium: (22, 11), (22, 22); high: (32, 16), (32, 32).
    pub fn of(n_ns: usize) -> Self {
        match n_ns {
            0..=16 => DemandBucket::Low,
            17..=27 => DemandBucket::Medium,
            _ => DemandBucket::High,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DemandBucket::Low => "low",
            DemandBucket::Medium => "medium",
            DemandBucket::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum AlignPolicy {
    Stops,
    Wait,
    Multi,
}

impl AlignPolicy {
    pub const ALL: [AlignPolicy; 3] = [AlignPolicy::Stops, AlignPolicy::Wait, AlignPolicy::Multi];

    pub fn name(self) -> &'static str {
        match self {
            AlignPolicy::Stops => "stops",
            AlignPolicy::Wait => "wait",
            AlignPolicy::Multi => "multi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementRow {
    pub bucket: DemandBucket,
    pub rule: VoteRule,
    pub a: AlignPolicy,
    pub b: AlignPolicy,
    /// Fraction of replayed decisions where both policies pick the same action.
    pub agreement: f64,
    pub decisions: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlignmentReport {
    pub rows: Vec<AgreementRow>,
    /// Replayed multi-objective actions that differ from the logged ones.
    pub replay_mismatches: usize,
}

impl AlignmentReport {
    pub fn get(&self, bucket: DemandBucket, rule: VoteRule, a: AlignPolicy, b: AlignPolicy) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.bucket == bucket && r.rule == rule && r.a == a && r.b == b)
            .map(|r| r.agreement)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("bucket,vote_rule,policy_a,policy_b,agreement,decisions\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.bucket.name(),
                r.rule.name(),
                r.a.name(),
                r.b.name(),
                r.agreement,
                r.decisions
            );
        }
        out
    }
}

/// Replay every logged multi-objective observation through the stops-greedy,
/// wait-greedy and multi-objective policies, and report pairwise action
/// agreement per demand bucket and vote rule (all nine ordered pairs).
pub fn alignment_analysis(logs: &[EpisodeLog], stops: &Mlp, wait: &Mlp) -> Result<AlignmentReport> {
    let mut actions: BTreeMap<(DemandBucket, VoteRule), Vec<[usize; 3]>> = BTreeMap::new();
    let mut mismatches = 0;
    for log in logs {
        let PolicyId::Multi(rule) = log.policy else {
            continue;
        };
        let bucket = DemandBucket::of(log.n_ns);
        let entry = actions.entry((bucket, rule)).or_default();
        for r in &log.decisions {
            let d = &r.decision;
            let obs = d.observation.as_slice();
            for net in [stops, wait] {
                if net.input_dim() != obs.len() {
                    return Err(Error::DimensionMismatch {
                        expected: net.input_dim(),
                        got: obs.len(),
                    });
                }
            }
            let incumbent = d.incumbent.action();
            let qs = stops.forward(obs)?;
            let qw = wait.forward(obs)?;
            let a_stops = select_action(&qs, incumbent)?;
            let a_wait = select_action(&qw, incumbent)?;
            let per = BTreeMap::from([
                (RewardKind::Stops, normalize_q(&qs)?),
                (RewardKind::Wait, normalize_q(&qw)?),
            ]);
            let a_multi = select_action(&integrate(&per, &d.weights)?, incumbent)?;
            if a_multi != d.action {
                mismatches += 1;
            }
            entry.push([a_stops, a_wait, a_multi]);
        }
    }
    let mut rows = Vec::new();
    for ((bucket, rule), acts) in &actions {
        for a in AlignPolicy::ALL {
            for b in AlignPolicy::ALL {
                let (ia, ib) = (a as usize, b as usize);
                let same = acts.iter().filter(|x| x[ia] == x[ib]).count();
                rows.push(AgreementRow {
                    bucket: *bucket,
                    rule: *rule,
                    a,
                    b,
                    agreement: if acts.is_empty() {
                        1.0
                    } else {
                        same as f64 / acts.len() as f64
                    },
                    decisions: acts.len(),
                });
            }
        }
    }
    Ok(AlignmentReport {
        rows,
        replay_mismatches: mismatches,
    })
}
