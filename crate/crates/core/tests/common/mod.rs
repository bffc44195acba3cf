//! Independent oracles shared by the property tests and the acceptance run.
//! Each check draws its case from a seed and returns a description of the
//! first violation.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::time::Instant;

use crossvote::harness::{run_sweep, SweepSpec};
use crossvote::neural::{decode_checkpoint, encode_checkpoint, DqnTrainer, Hyperparams, Layer, Mlp, Transition};
use crossvote::policy::{integrate, normalize_q, select_action, Controller, PolicyId, QVector};
use crossvote::rewards::RewardKind;
use crossvote::sim::{init_scenario, Phase, Road, ScenarioConfig};
use crossvote::voting::{majority, proportional, VoteRule, Weights};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn mse(net: &Mlp, batch: &[(Vec<f64>, usize, f64)]) -> f64 {
    batch
        .iter()
        .map(|(x, a, y)| (net.forward(x).unwrap().values[*a] - y).powi(2))
        .sum::<f64>()
        / batch.len() as f64
}

/// Smallest |pre-activation| of any hidden unit over the batch.
fn kink_margin(net: &Mlp, batch: &[(Vec<f64>, usize, f64)]) -> f64 {
    let mut margin = f64::INFINITY;
    let n = net.layers().len();
    for (x, _, _) in batch {
        let mut cur = x.clone();
        for (k, l) in net.layers().iter().enumerate() {
            let mut next = l.bias.clone();
            for (o, out) in next.iter_mut().enumerate() {
                *out += (0..l.inputs).map(|i| l.weights[o * l.inputs + i] * cur[i]).sum::<f64>();
            }
            if k + 1 < n {
                margin = next.iter().fold(margin, |m, z| m.min(z.abs()));
                next.iter_mut().for_each(|z| *z = z.max(0.0));
            }
            cur = next;
        }
    }
    margin
}

/// Backprop against central differences (h = 1e-5) on a random small net.
/// Returns the worst relative error; gradients smaller than 1e-3 are
/// compared on that absolute scale instead.
pub fn gradient_case(seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let h = 1e-5;
    for _ in 0..100 {
        let mut dims = vec![r.random_range(1..=4)];
        for _ in 0..r.random_range(1..=2) {
            dims.push(r.random_range(1..=5));
        }
        dims.push(r.random_range(1..=3));
        let mut net = Mlp::random(&dims, &mut r).unwrap();
        for p in net.params_mut() {
            *p += r.random_range(-0.3..0.3);
        }
        let out = *dims.last().unwrap();
        let batch: Vec<(Vec<f64>, usize, f64)> = (0..r.random_range(1..=4))
            .map(|_| {
                let x = (0..dims[0]).map(|_| r.random_range(-1.0..1.0)).collect();
                (x, r.random_range(0..out), r.random_range(-2.0..2.0))
            })
            .collect();
        if kink_margin(&net, &batch) < 1e-3 {
            continue;
        }
        let refs: Vec<(&[f64], usize, f64)> = batch.iter().map(|(x, a, y)| (x.as_slice(), *a, *y)).collect();
        let analytic: Vec<f64> = net.gradients(&refs).unwrap().iter().collect();
        let mut worst: f64 = 0.0;
        for (i, &g) in analytic.iter().enumerate() {
            let orig = *net.params().nth(i).unwrap();
            *net.params_mut().nth(i).unwrap() = orig + h;
            let up = mse(&net, &batch);
            *net.params_mut().nth(i).unwrap() = orig - h;
            let down = mse(&net, &batch);
            *net.params_mut().nth(i).unwrap() = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
        if worst >= 1e-4 {
            return Err(format!("seed {seed}: dims {dims:?} relative gradient error {worst:e}"));
        }
        return Ok(worst);
    }
    Err(format!("seed {seed}: no kink-free case found"))
}

fn random_q(r: &mut ChaCha8Rng, n: usize) -> QVector {
    QVector::new((0..n).map(|_| r.random_range(-50.0..50.0)).collect())
}

/// Softmax sums to one, lies in (0, 1], is shift invariant and keeps the
/// argmax.
pub fn softmax_case(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(2..=6);
    let q = random_q(&mut r, n);
    let p = normalize_q(&q).map_err(|e| e.to_string())?.values;
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-12 || p.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
        return Err(format!("seed {seed}: softmax {p:?} sums to {sum}"));
    }
    let c = r.random_range(-1e3..1e3);
    let shifted = normalize_q(&QVector::new(q.values.iter().map(|v| v + c).collect()))
        .map_err(|e| e.to_string())?
        .values;
    if p.iter().zip(&shifted).any(|(a, b)| (a - b).abs() > 1e-9) {
        return Err(format!("seed {seed}: shift by {c} changed softmax"));
    }
    let argmax = |v: &[f64]| select_action(&QVector::new(v.to_vec()), 0).unwrap();
    if argmax(&q.values) != argmax(&p) || argmax(&p) != argmax(&shifted) {
        return Err(format!("seed {seed}: softmax moved the argmax"));
    }
    Ok(())
}

/// Integration against a plain double loop, and action selection against a
/// scan with ties going to the incumbent. Returns the largest difference.
pub fn integration_case(seed: u64) -> Result<f64, String> {
    let mut r = rng(seed);
    let n_actions = r.random_range(2..=5);
    let mut kinds = RewardKind::ALL.to_vec();
    kinds.shuffle(&mut r);
    kinds.truncate(r.random_range(1..=4));
    let mut qs = BTreeMap::new();
    let mut w = BTreeMap::new();
    for &k in &kinds {
        let raw = random_q(&mut r, n_actions);
        qs.insert(k, normalize_q(&raw).unwrap());
        w.insert(k, r.random_range(0.0..1.0));
    }
    let got = integrate(&qs, &Weights { w: w.clone() }).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut expect = vec![0.0; n_actions];
    for (a, e) in expect.iter_mut().enumerate() {
        for k in kinds.iter().rev() {
            *e += w[k] * qs[k].values[a];
        }
        worst = worst.max((got.values[a] - *e).abs());
    }
    if worst >= 1e-12 {
        return Err(format!("seed {seed}: integration differs by {worst:e}"));
    }
    let incumbent = r.random_range(0..n_actions);
    let best = got.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let oracle = if got.values[incumbent] == best {
        incumbent
    } else {
        got.values.iter().position(|&v| v == best).unwrap()
    };
    let chosen = select_action(&got, incumbent).map_err(|e| e.to_string())?;
    if chosen != oracle {
        return Err(format!("seed {seed}: selected {chosen}, oracle {oracle}"));
    }
    Ok(worst)
}

/// With two objectives and two actions, sweeping w_stops over a 1e-3 grid
/// (w_wait = 1 - w_stops) changes the chosen action at most once.
pub fn single_crossing_case(seed: u64) -> Check {
    let mut r = rng(seed);
    let qs = BTreeMap::from([
        (RewardKind::Stops, normalize_q(&random_q(&mut r, 2)).unwrap()),
        (RewardKind::Wait, normalize_q(&random_q(&mut r, 2)).unwrap()),
    ]);
    let incumbent = r.random_range(0..2);
    let mut prev = None;
    let mut changes = 0;
    for i in 0..=1000 {
        let ws = i as f64 / 1000.0;
        let qp = integrate(&qs, &Weights::pair(ws, 1.0 - ws)).unwrap();
        let a = select_action(&qp, incumbent).unwrap();
        if prev.is_some_and(|p| p != a) {
            changes += 1;
        }
        prev = Some(a);
    }
    if changes > 1 {
        return Err(format!("seed {seed}: action changed {changes} times"));
    }
    Ok(())
}

/// Sum to one, permutation equivariance, proportional scale invariance and
/// the majority range.
pub fn voting_case(seed: u64) -> Check {
    let mut r = rng(seed);
    let mut kinds = RewardKind::ALL.to_vec();
    kinds.shuffle(&mut r);
    kinds.truncate(r.random_range(1..=4));
    let votes: BTreeMap<RewardKind, u32> = kinds.iter().map(|&k| (k, r.random_range(0..20))).collect();
    let fail = |m: &str| Err(format!("seed {seed}: {m} for votes {votes:?}"));
    for (name, w) in [("majority", majority(&votes)), ("proportional", proportional(&votes))] {
        if (w.sum() - 1.0).abs() > 1e-12 {
            return fail(&format!("{name} weights sum to {}", w.sum()));
        }
        if w.w.keys().ne(votes.keys()) || w.w.values().any(|&x| !(0.0..=1.0).contains(&x)) {
            return fail(&format!("{name} weights out of range"));
        }
    }
    let mut perm: Vec<RewardKind> = kinds.clone();
    perm.shuffle(&mut r);
    let moved: BTreeMap<RewardKind, u32> = kinds.iter().zip(&perm).map(|(k, p)| (*p, votes[k])).collect();
    for rule in [majority, proportional] {
        let (a, b) = (rule(&votes), rule(&moved));
        if kinds.iter().zip(&perm).any(|(k, p)| a.get(*k) != b.get(*p)) {
            return fail("weights not permutation equivariant");
        }
    }
    let k = r.random_range(2..7);
    let scaled: BTreeMap<RewardKind, u32> = votes.iter().map(|(&id, &v)| (id, v * k)).collect();
    let (a, b) = (proportional(&votes), proportional(&scaled));
    if votes.keys().any(|id| (a.get(*id) - b.get(*id)).abs() > 1e-12) {
        return fail("proportional weights not scale invariant");
    }
    let m = majority(&votes);
    let top = *votes.values().max().unwrap();
    let leaders = votes.values().filter(|&&v| v == top).count() as f64;
    for (id, &v) in &votes {
        let expect = if v == top { 1.0 / leaders } else { 0.0 };
        if m.get(*id) != expect {
            return fail("majority weight outside {0, 1/leaders}");
        }
    }
    Ok(())
}

/// Random demands and random phase flips for `ticks` seconds, checking
/// conservation, spacing, red-light compliance, monotone accounting and
/// occupancy bounds after every tick.
pub fn simulator_case(seed: u64, ticks: u32) -> Check {
    let mut r = rng(seed);
    let cfg = ScenarioConfig::default()
        .with_demand(r.random_range(0..=40), r.random_range(0..=40))
        .with_seed(seed);
    let mut world = init_scenario(&cfg).map_err(|e| e.to_string())?;
    let len = cfg.vehicle_length_m;
    let loop_len = cfg.loop_length_m;
    let ids = |road: Road, w: &crossvote::sim::SimWorld| {
        let mut v: Vec<usize> = w.road(road).iter().map(|v| v.id).collect();
        v.sort_unstable();
        v
    };
    let initial = [ids(Road::Ns, &world), ids(Road::We, &world)];
    let fail = |t: u64, m: String| Err(format!("seed {seed} {}: tick {t}: {m}", cfg.scenario_id()));
    for _ in 0..ticks {
        if r.random_bool(0.2) {
            world.set_phase(if r.random_bool(0.5) {
                Phase::NsGreen
            } else {
                Phase::WeGreen
            });
        }
        let red = match world.phase() {
            Phase::NsGreen => Road::We,
            Phase::WeGreen => Road::Ns,
        };
        let before: BTreeMap<usize, (f64, u32, f64)> = world
            .vehicles()
            .map(|v| (v.id, (v.dist_to_stopline_m, v.stop_count, v.wait_time_s)))
            .collect();
        world.tick();
        let t = world.clock();
        for (i, road) in [Road::Ns, Road::We].into_iter().enumerate() {
            if ids(road, &world) != initial[i] {
                return fail(t, format!("{} vehicle set changed", road.name()));
            }
            let vs = world.road(road);
            for (k, v) in vs.iter().enumerate() {
                if !(0.0..loop_len).contains(&v.dist_to_stopline_m) || v.speed_mps < 0.0 {
                    return fail(t, format!("vehicle {} has invalid state", v.id));
                }
                if v.is_stopped != (v.speed_mps < cfg.stop_speed_threshold_mps) {
                    return fail(t, format!("vehicle {} stopped flag disagrees with speed", v.id));
                }
                let (d0, stops0, wait0) = before[&v.id];
                if v.stop_count < stops0 || v.wait_time_s < wait0 {
                    return fail(t, format!("vehicle {} accounting decreased", v.id));
                }
                let travel = (d0 - v.dist_to_stopline_m).rem_euclid(loop_len);
                if road == red && travel > d0 + 1e-9 {
                    return fail(t, format!("vehicle {} crossed on red ({d0} m, travel {travel})", v.id));
                }
                if vs.len() > 1 {
                    let next = &vs[(k + 1) % vs.len()];
                    let gap = (next.dist_to_stopline_m - v.dist_to_stopline_m).rem_euclid(loop_len) - len;
                    if gap < -1e-9 {
                        return fail(t, format!("vehicles {} and {} overlap by {}", v.id, next.id, -gap));
                    }
                }
            }
        }
        if world.observe().as_slice().iter().any(|&o| !(0.0..=1.0).contains(&o)) {
            return fail(t, "occupancy out of [0, 1]".into());
        }
    }
    Ok(())
}

pub fn checkpoint_case(seed: u64) -> Check {
    let mut r = rng(seed);
    let net = Mlp::random(&[6, 64, 64, 2], &mut r).unwrap();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("net.ckpt");
    crossvote::neural::save_checkpoint(&net, &path).map_err(|e| e.to_string())?;
    let back = crossvote::neural::load_checkpoint(&path).map_err(|e| e.to_string())?;
    if net.params().zip(back.params()).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err(format!("seed {seed}: parameters changed in round trip"));
    }
    if encode_checkpoint(&decode_checkpoint(&encode_checkpoint(&back)).unwrap()) != encode_checkpoint(&net) {
        return Err(format!("seed {seed}: re-encoding differs"));
    }
    Ok(())
}

/// Serial and multi-threaded sweeps of the same controllers give identical
/// CSV text.
pub fn parallel_sweep_case(seed: u64, threads: usize) -> Check {
    let mut r = rng(seed);
    let s = Mlp::random(&[6, 16, 2], &mut r).unwrap();
    let w = Mlp::random(&[6, 16, 2], &mut r).unwrap();
    let mut ctrls = BTreeMap::new();
    ctrls.insert(
        PolicyId::Single(RewardKind::Stops),
        Controller::greedy(RewardKind::Stops, s.clone()),
    );
    ctrls.insert(
        PolicyId::Single(RewardKind::Wait),
        Controller::greedy(RewardKind::Wait, w.clone()),
    );
    for rule in VoteRule::ALL {
        let nets = BTreeMap::from([(RewardKind::Stops, s.clone()), (RewardKind::Wait, w.clone())]);
        ctrls.insert(PolicyId::Multi(rule), Controller::multi(nets, rule).unwrap());
    }
    let base = ScenarioConfig {
        horizon_steps: 600,
        ..Default::default()
    };
    let serial = SweepSpec::standard_demands(base, 3, ctrls.keys().copied().collect());
    let parallel = SweepSpec {
        parallel: threads,
        ..serial.clone()
    };
    let a = run_sweep(&serial, &ctrls).map_err(|e| e.to_string())?.result;
    let b = run_sweep(&parallel, &ctrls).map_err(|e| e.to_string())?.result;
    if a.per_seed_csv() != b.per_seed_csv() || a.aggregate_csv() != b.aggregate_csv() {
        return Err(format!("seed {seed}: CSVs differ between 1 and {threads} threads"));
    }
    Ok(())
}

/// Deterministic three-state MDP for the tabular oracle.
const GAMMA: f64 = 0.9;

/// (state, action) -> (reward, next state or None when terminal).
const MDP: [[(f64, Option<usize>); 2]; 3] = [
    [(0.0, Some(1)), (1.0, Some(0))],
    [(0.0, Some(2)), (0.0, Some(0))],
    [(2.0, Some(2)), (5.0, None)],
];

fn one_hot(s: usize) -> Vec<f64> {
    (0..3).map(|i| if i == s { 1.0 } else { 0.0 }).collect()
}

pub fn value_iteration() -> [[f64; 2]; 3] {
    let mut q = [[0.0f64; 2]; 3];
    for _ in 0..2000 {
        let v: Vec<f64> = q.iter().map(|r| r[0].max(r[1])).collect();
        for (s, row) in MDP.iter().enumerate() {
            for (a, &(r, next)) in row.iter().enumerate() {
                q[s][a] = r + next.map_or(0.0, |n| GAMMA * v[n]);
            }
        }
    }
    q
}

/// Returns the largest deviation from value iteration and the runtime.
pub fn tabular_gap() -> (f64, f64) {
    let start = Instant::now();
    let net = Mlp::from_layers(vec![Layer {
        inputs: 3,
        outputs: 2,
        weights: vec![0.0; 6],
        bias: vec![0.0; 2],
    }])
    .unwrap();
    let hp = Hyperparams {
        gamma: GAMMA,
        learning_rate: 0.1,
        // the buffer holds all six transitions
        batch_size: 6,
        target_sync_every: 1,
        grad_clip: 0.0,
        hidden: vec![],
        seed: 9,
        ..Default::default()
    };
    let mut trainer = DqnTrainer::from_network(net, hp).unwrap();
    for (s, row) in MDP.iter().enumerate() {
        for (a, &(reward, next)) in row.iter().enumerate() {
            trainer.remember(Transition {
                obs: one_hot(s),
                action: a,
                reward,
                next_obs: one_hot(next.unwrap_or(s)),
                terminal: next.is_none(),
            });
        }
    }
    for _ in 0..5000 {
        trainer.update().unwrap();
    }
    let expect = value_iteration();
    let mut gap: f64 = 0.0;
    for (s, row) in expect.iter().enumerate() {
        let q = trainer.network().forward(&one_hot(s)).unwrap().values;
        for a in 0..2 {
            gap = gap.max((q[a] - row[a]).abs());
        }
    }
    (gap, start.elapsed().as_secs_f64())
}

pub fn crossvote(out: &std::path::Path, args: &[&str]) -> Result<String, String> {
    let res = std::process::Command::new(env!("CARGO_BIN_EXE_crossvote"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !res.status.success() {
        return Err(format!("crossvote {args:?}: {}", String::from_utf8_lossy(&res.stderr)));
    }
    Ok(String::from_utf8_lossy(&res.stdout).into_owned())
}

/// The single subdirectory of `out` whose name starts with `prefix`.
pub fn run_dir(out: &std::path::Path, prefix: &str) -> Result<std::path::PathBuf, String> {
    let mut found: Vec<_> = std::fs::read_dir(out)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with(prefix)))
        .collect();
    match found.len() {
        1 => Ok(found.remove(0)),
        n => Err(format!("{n} directories named {prefix}* in {}", out.display())),
    }
}

/// Relative path -> contents for every file below `root`.
pub fn tree(root: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

/// train (seed 1) -> sweep (seeds 1-3) -> align, written below `out`.
pub fn pipeline(out: &std::path::Path, episodes: u32, horizon: u32) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let horizon = format!("horizon_steps={horizon}");
    let episodes = episodes.to_string();
    for reward in ["stops", "wait"] {
        crossvote(
            out,
            &[
                "train",
                "--reward",
                reward,
                "--seed",
                "1",
                "--episodes",
                &episodes,
                "--set",
                &horizon,
            ],
        )?;
    }
    crossvote(
        out,
        &[
            "sweep",
            "--policies",
            "stops,wait,multi",
            "--seeds",
            "3",
            "--parallel",
            "2",
            "--set",
            &horizon,
        ],
    )?;
    let sweep = run_dir(out, "sweep-")?;
    crossvote(out, &["align", "--logs", sweep.to_str().unwrap()])?;
    crossvote(out, &["report", "--sweep", sweep.to_str().unwrap()])?;
    Ok(tree(out))
}
