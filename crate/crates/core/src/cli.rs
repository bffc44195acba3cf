//! Command-line front end.
//!
//! Settings resolve as defaults, then `--config` file, then `--set key=value`
//! overrides, then dedicated flags. Each subcommand prints its effective
//! config before doing any work and writes its files under
//! `<out>/<command>-<hash>`, where the hash covers the effective config and
//! the content of every input file, so identical inputs give identical trees.
//! Checkpoints live in a shared store, `<out>/checkpoints` unless
//! `--checkpoints` says otherwise.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::harness::{
    alignment_analysis, compare_vote_rules, emit_radar_data, read_aggregate_csv, read_decision_logs,
    rule_comparison_csv, run_episode, run_sweep, write_decision_logs, SweepSpec,
};
use crate::keyval::ConfigFile;
use crate::neural::{decode_checkpoint, save_checkpoint, train_dqn, Mlp};
use crate::policy::{Controller, PolicyId};
use crate::rewards::RewardKind;
use crate::sim::DEMANDS;
use crate::voting::VoteRule;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "crossvote",
    version,
    about = "Voting-integrated multi-objective DQN traffic signal control"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output root.
    #[arg(long, env = "CROSSVOTE_OUT", default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CheckpointArgs {
    /// Checkpoint store (default `<out>/checkpoints`).
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one Q-network and store its checkpoint and training curve.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        store: CheckpointArgs,
        /// stops, wait, linear or cobb.
        #[arg(long)]
        reward: Option<String>,
        /// Training seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<u32>,
    },
    /// Run one episode and write its trace and decision log.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        store: CheckpointArgs,
        /// stops, wait, linear, cobb, multi or multi-<rule>.
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        vote_rule: Option<String>,
        /// Scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate policies over demands and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        store: CheckpointArgs,
        /// Comma-separated policies; `multi` expands to the vote rules given.
        #[arg(long, alias = "policy")]
        policies: Option<String>,
        /// majority, proportional or both.
        #[arg(long)]
        vote_rule: Option<String>,
        /// Number of seeds; seeds 1..=N are run.
        #[arg(long)]
        seeds: Option<u64>,
        /// Comma-separated demands such as `22_11`; all six by default.
        #[arg(long)]
        demands: Option<String>,
        /// Worker threads. Results do not depend on it.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Keep decision logs of multi-objective runs for the first N seeds.
        #[arg(long)]
        log_seeds: Option<usize>,
    },
    /// Replay logged multi-objective decisions through every policy and
    /// report action agreement.
    Align {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        store: CheckpointArgs,
        /// Decision log file, or a sweep directory holding `decisions.csv`.
        #[arg(long)]
        logs: PathBuf,
    },
    /// Summarize a sweep: per-policy table and vote-rule comparison.
    Report {
        #[command(flatten)]
        common: Common,
        /// Aggregate CSV, or a sweep directory holding `aggregate.csv`.
        #[arg(long)]
        sweep: PathBuf,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Train {
            common,
            store,
            reward,
            seed,
            episodes,
        } => train(&common, &store, reward, seed, episodes),
        Command::Run {
            common,
            store,
            policy,
            vote_rule,
            seed,
        } => run(&common, &store, policy, vote_rule, seed),
        Command::Sweep {
            common,
            store,
            policies,
            vote_rule,
            seeds,
            demands,
            parallel,
            log_seeds,
        } => sweep(
            &common, &store, policies, vote_rule, seeds, demands, parallel, log_seeds,
        ),
        Command::Align { common, store, logs } => align(&common, &store, &logs),
        Command::Report { common, sweep } => report(&common, &sweep),
    }
}

fn load_config(common: &Common) -> CliResult<ConfigFile> {
    let mut cfg = match &common.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::MissingFile(path.clone()).into());
            }
            ConfigFile::parse(&fs::read_to_string(path)?).map_err(|e| CliError::Usage(e.to_string()))?
        }
        None => ConfigFile::default(),
    };
    for kv in &common.set {
        let Some((k, v)) = kv.split_once('=') else {
            return usage(format!("--set expects KEY=VALUE, got `{kv}`"));
        };
        set(&mut cfg, k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn set(cfg: &mut ConfigFile, key: &str, value: &str) -> CliResult<()> {
    cfg.apply(key, value).map_err(|e| CliError::Usage(e.to_string()))
}

fn validate(cfg: &ConfigFile) -> CliResult<()> {
    cfg.scenario.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.hyperparams.validate().map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_run_key<T: std::str::FromStr<Err = Error>>(cfg: &ConfigFile, key: &str) -> CliResult<Option<T>> {
    cfg.run
        .get(key)
        .map(|v| v.parse().map_err(|e: Error| CliError::Usage(e.to_string())))
        .transpose()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex(&h.finalize())
}

fn checkpoint_dir(common: &Common, store: &CheckpointArgs) -> PathBuf {
    store
        .checkpoints
        .clone()
        .unwrap_or_else(|| common.out.join("checkpoints"))
}

pub fn checkpoint_path(dir: &Path, objective: RewardKind) -> PathBuf {
    dir.join(format!("{objective}.ckpt"))
}

/// Load the networks of `objectives` with the digest of each file.
fn load_nets(dir: &Path, objectives: &BTreeSet<RewardKind>) -> CliResult<(BTreeMap<RewardKind, Mlp>, Vec<String>)> {
    let mut nets = BTreeMap::new();
    let mut digests = Vec::new();
    for &obj in objectives {
        let path = checkpoint_path(dir, obj);
        if !path.exists() {
            return Err(Error::MissingFile(path).into());
        }
        let bytes = fs::read(&path)?;
        digests.push(format!("{obj}:{}", digest(&[&bytes])));
        nets.insert(obj, decode_checkpoint(&bytes)?);
    }
    Ok((nets, digests))
}

fn controller(policy: PolicyId, nets: &BTreeMap<RewardKind, Mlp>) -> CliResult<Controller> {
    Ok(match policy {
        PolicyId::Single(k) => Controller::greedy(k, nets[&k].clone()),
        PolicyId::Multi(rule) => {
            let sub = policy.objectives().into_iter().map(|k| (k, nets[&k].clone())).collect();
            Controller::multi(sub, rule)?
        }
    })
}

/// Print the effective config block and return `<out>/<command>-<hash>`.
fn announce(command: &str, out: &Path, rendered: &str, inputs: &[String]) -> PathBuf {
    let mut parts: Vec<&[u8]> = vec![command.as_bytes(), rendered.as_bytes()];
    parts.extend(inputs.iter().map(|s| s.as_bytes()));
    let hash = digest(&parts);
    let dir = out.join(format!("{command}-{}", &hash[..12]));
    println!("# effective config ({command})");
    print!("{rendered}");
    for i in inputs {
        println!("# input {i}");
    }
    println!("# output {}", dir.display());
    dir
}

fn write_config(dir: &Path, rendered: &str, inputs: &[String]) -> CliResult<()> {
    let mut text = rendered.to_string();
    for i in inputs {
        text.push_str(&format!("# input {i}\n"));
    }
    fs::write(dir.join("config.txt"), text)?;
    Ok(())
}

fn train(
    common: &Common,
    store: &CheckpointArgs,
    reward: Option<String>,
    seed: Option<u64>,
    episodes: Option<u32>,
) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    if let Some(r) = reward {
        set(&mut cfg, "reward", &r)?;
    }
    if let Some(s) = seed {
        cfg.hyperparams.seed = s;
    }
    if let Some(e) = episodes {
        cfg.hyperparams.train_episodes = e;
    }
    let Some(reward) = parse_run_key::<RewardKind>(&cfg, "reward")? else {
        return usage("train needs --reward (stops|wait|linear|cobb)");
    };
    validate(&cfg)?;
    let rendered = cfg.render();
    let dir = checkpoint_dir(common, store);
    println!("# effective config (train)");
    print!("{rendered}");
    let ckpt = checkpoint_path(&dir, reward);
    println!("# output {}", ckpt.display());

    let trained = train_dqn(&cfg.scenario, reward, &cfg.hyperparams)?;
    fs::create_dir_all(&dir)?;
    save_checkpoint(&trained.net, &ckpt)?;
    let mut curve = String::from("episode,return\n");
    for (i, r) in trained.returns.iter().enumerate() {
        curve.push_str(&format!("{},{}\n", i + 1, r));
    }
    fs::write(dir.join(format!("{reward}.curve.csv")), curve)?;
    fs::write(dir.join(format!("{reward}.config.txt")), &rendered)?;
    if let Some(last) = trained.returns.last() {
        println!("trained {} episodes, final return {last}", trained.returns.len());
    } else {
        println!("no training episodes; stored the initial network");
    }
    Ok(())
}

fn resolve_policy(cfg: &mut ConfigFile, policy: Option<String>, vote_rule: Option<String>) -> CliResult<PolicyId> {
    if let Some(p) = policy {
        set(cfg, "policy", &p)?;
    }
    if let Some(r) = vote_rule {
        set(cfg, "vote_rule", &r)?;
    }
    let rule = parse_run_key::<VoteRule>(cfg, "vote_rule")?;
    let Some(name) = cfg.run.get("policy") else {
        return usage("run needs --policy");
    };
    PolicyId::parse(name, rule).map_err(|e| CliError::Usage(e.to_string()))
}

fn run(
    common: &Common,
    store: &CheckpointArgs,
    policy: Option<String>,
    vote_rule: Option<String>,
    seed: Option<u64>,
) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    let policy = resolve_policy(&mut cfg, policy, vote_rule)?;
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    validate(&cfg)?;
    let objectives = policy.objectives().into_iter().collect();
    let (nets, digests) = load_nets(&checkpoint_dir(common, store), &objectives)?;
    let rendered = cfg.render();
    let dir = announce("run", &common.out, &rendered, &digests);

    let log = run_episode(&cfg.scenario, &controller(policy, &nets)?)?;
    let m = log.metrics()?;
    fs::create_dir_all(&dir)?;
    write_config(&dir, &rendered, &digests)?;
    fs::write(dir.join("trace.csv"), log.trace_csv())?;
    fs::write(dir.join("decisions.csv"), log.decisions_csv())?;
    let summary = serde_json::json!({
        "scenario": log.scenario(),
        "seed": log.seed,
        "policy": policy.label(),
        "metrics": m,
        "switch_rate": log.switch_rate(),
        "log_sha256": log.hash(),
    });
    fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n",
    )?;
    println!(
        "{} seed {} {}: mean speed {:.3} m/s, stops {}, mean wait {:.1} s, switch rate {:.3}",
        log.scenario(),
        log.seed,
        policy.label(),
        m.mean_speed_mps,
        m.total_stops,
        m.mean_wait_s,
        log.switch_rate()
    );
    Ok(())
}

fn parse_demands(text: &str) -> CliResult<Vec<(usize, usize)>> {
    text.split(',')
        .map(|d| {
            let d = d.trim();
            d.split_once('_')
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| CliError::Usage(format!("bad demand `{d}` (expected e.g. 22_11)")))
        })
        .collect()
}

fn parse_policies(list: &str, rules: &[VoteRule]) -> CliResult<Vec<PolicyId>> {
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let expanded: Vec<PolicyId> = if name == "multi" {
            rules.iter().map(|&r| PolicyId::Multi(r)).collect()
        } else {
            vec![PolicyId::parse(name, None).map_err(|e| CliError::Usage(e.to_string()))?]
        };
        for p in expanded {
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    if out.is_empty() {
        return usage("no policies given");
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    common: &Common,
    store: &CheckpointArgs,
    policies: Option<String>,
    vote_rule: Option<String>,
    seeds: Option<u64>,
    demands: Option<String>,
    parallel: usize,
    log_seeds: Option<usize>,
) -> CliResult<()> {
    let mut cfg = load_config(common)?;
    for (key, val) in [
        ("policies", policies),
        ("vote_rule", vote_rule),
        ("seeds", seeds.map(|s| s.to_string())),
        ("log_seeds", log_seeds.map(|s| s.to_string())),
    ] {
        if let Some(v) = val {
            set(&mut cfg, key, &v)?;
        }
    }
    let defaults = [
        ("policies", "stops,wait,multi"),
        ("vote_rule", "both"),
        ("seeds", "100"),
        ("log_seeds", "10"),
    ];
    for (k, v) in defaults {
        cfg.run.entry(k.to_string()).or_insert_with(|| v.to_string());
    }
    let rules = match cfg.run["vote_rule"].as_str() {
        "both" => VoteRule::ALL.to_vec(),
        r => vec![r.parse::<VoteRule>().map_err(|e| CliError::Usage(e.to_string()))?],
    };
    let policies = parse_policies(&cfg.run["policies"], &rules)?;
    let n_seeds: u64 = cfg.run["seeds"]
        .parse()
        .map_err(|_| CliError::Usage("seeds must be a positive integer".into()))?;
    let log_seeds: usize = cfg.run["log_seeds"]
        .parse()
        .map_err(|_| CliError::Usage("log_seeds must be a non-negative integer".into()))?;
    if n_seeds == 0 {
        return usage("seeds must be at least 1");
    }
    if parallel == 0 {
        return usage("--parallel must be at least 1");
    }
    let demands = match demands {
        Some(d) => parse_demands(&d)?,
        None => DEMANDS.to_vec(),
    };
    validate(&cfg)?;
    let objectives: BTreeSet<RewardKind> = policies.iter().flat_map(|p| p.objectives()).collect();
    let (nets, mut inputs) = load_nets(&checkpoint_dir(common, store), &objectives)?;
    inputs.insert(
        0,
        format!(
            "demands:{}",
            demands
                .iter()
                .map(|(a, b)| format!("{a}_{b}"))
                .collect::<Vec<_>>()
                .join(",")
        ),
    );
    let rendered = cfg.render();
    let dir = announce("sweep", &common.out, &rendered, &inputs);

    let controllers = policies
        .iter()
        .map(|&p| Ok((p, controller(p, &nets)?)))
        .collect::<CliResult<BTreeMap<_, _>>>()?;
    let spec = SweepSpec {
        base: cfg.scenario.clone(),
        demands,
        seeds: (1..=n_seeds).collect(),
        policies,
        parallel,
        log_seeds,
    };
    let out = run_sweep(&spec, &controllers)?;
    fs::create_dir_all(&dir)?;
    write_config(&dir, &rendered, &inputs)?;
    fs::write(dir.join("per_seed.csv"), out.result.per_seed_csv())?;
    fs::write(dir.join("aggregate.csv"), out.result.aggregate_csv())?;
    emit_radar_data(&out.result, &dir.join("radar.json"))?;
    if !out.logs.is_empty() {
        write_decision_logs(&out.logs, &dir.join("decisions.csv"))?;
    }
    print_aggregate(&out.result.aggregate);
    Ok(())
}

fn print_aggregate(rows: &[crate::harness::AggregateRow]) {
    println!(
        "{:<8} {:<20} {:>10} {:>12} {:>12} {:>8}",
        "scenario", "policy", "speed", "stops", "wait_s", "switch"
    );
    for r in rows {
        println!(
            "{:<8} {:<20} {:>10.3} {:>12.1} {:>12.1} {:>8.3}",
            r.scenario(),
            r.policy.label(),
            r.mean_speed.mean,
            r.total_stops.mean,
            r.mean_wait.mean,
            r.switch_rate.mean
        );
    }
}

fn input_file(path: &Path, default_name: &str) -> CliResult<PathBuf> {
    let file = if path.is_dir() {
        path.join(default_name)
    } else {
        path.to_path_buf()
    };
    if !file.exists() {
        return Err(Error::MissingFile(file).into());
    }
    Ok(file)
}

fn align(common: &Common, store: &CheckpointArgs, logs: &Path) -> CliResult<()> {
    let cfg = load_config(common)?;
    let file = input_file(logs, "decisions.csv")?;
    let text = fs::read_to_string(&file)?;
    let objectives = BTreeSet::from([RewardKind::Stops, RewardKind::Wait]);
    let (nets, mut inputs) = load_nets(&checkpoint_dir(common, store), &objectives)?;
    inputs.insert(0, format!("logs:{}", digest(&[text.as_bytes()])));
    let rendered = cfg.render();
    let dir = announce("align", &common.out, &rendered, &inputs);

    let logs = read_decision_logs(&text)?;
    let report = alignment_analysis(&logs, &nets[&RewardKind::Stops], &nets[&RewardKind::Wait])?;
    fs::create_dir_all(&dir)?;
    write_config(&dir, &rendered, &inputs)?;
    let csv = report.csv();
    fs::write(dir.join("agreement.csv"), &csv)?;
    print!("{csv}");
    if report.replay_mismatches > 0 {
        eprintln!(
            "warning: {} logged actions were not reproduced on replay",
            report.replay_mismatches
        );
    }
    Ok(())
}

fn report(common: &Common, sweep: &Path) -> CliResult<()> {
    let cfg = load_config(common)?;
    let file = input_file(sweep, "aggregate.csv")?;
    let text = fs::read_to_string(&file)?;
    let inputs = vec![format!("aggregate:{}", digest(&[text.as_bytes()]))];
    let rendered = cfg.render();
    let dir = announce("report", &common.out, &rendered, &inputs);

    let rows = read_aggregate_csv(&text)?;
    print_aggregate(&rows);
    let cmp = compare_vote_rules(&rows);
    let csv = rule_comparison_csv(&cmp);
    fs::create_dir_all(&dir)?;
    write_config(&dir, &rendered, &inputs)?;
    fs::write(dir.join("vote_rules.csv"), &csv)?;
    if !cmp.is_empty() {
        println!();
        println!(
            "{:<8} {:>16} {:>16} {:>14} {:>14}  dominated",
            "scenario", "prop_stops", "maj_stops", "prop_wait", "maj_wait"
        );
        for c in &cmp {
            let (p, m) = (&c.proportional, &c.majority);
            println!(
                "{:<8} {:>8.1}±{:<7.1} {:>8.1}±{:<7.1} {:>7.1}±{:<6.1} {:>7.1}±{:<6.1}  {}",
                format!("{}_{}", c.n_ns, c.n_we),
                p.total_stops.mean,
                p.total_stops.std,
                m.total_stops.mean,
                m.total_stops.std,
                p.mean_wait.mean,
                p.mean_wait.std,
                m.mean_wait.mean,
                m.mean_wait.std,
                if c.proportional_dominated() { "yes" } else { "no" }
            );
        }
    }
    Ok(())
}
