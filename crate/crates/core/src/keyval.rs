//! `key = value` configuration files.
//!
//! One assignment per line; blank lines and lines starting with `#` are
//! ignored. Keys are the field names of [`ScenarioConfig`] and
//! [`Hyperparams`] (`train_seed` for the training seed) plus the run-level
//! keys in [`RUN_KEYS`].

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::neural::Hyperparams;
use crate::sim::ScenarioConfig;

pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Parse(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse().map_err(|e| Error::Parse(format!("{key} = {value}: {e}")))
}

pub const SCENARIO_KEYS: [&str; 15] = [
    "n_ns",
    "n_we",
    "horizon_steps",
    "t_act",
    "loop_length_m",
    "approach_length_m",
    "n_segments",
    "v_max_mps",
    "accel_mps2",
    "decel_mps2",
    "vehicle_length_m",
    "min_gap_m",
    "stop_speed_threshold_mps",
    "preference_split",
    "seed",
];

pub const HYPERPARAM_KEYS: [&str; 14] = [
    "gamma",
    "learning_rate",
    "epsilon_start",
    "epsilon_end",
    "epsilon_decay_steps",
    "buffer_capacity",
    "batch_size",
    "target_sync_every",
    "train_episodes",
    "train_seed",
    "hidden",
    "grad_clip",
    "normalize_rewards",
    "explore_hold_max",
];

pub const RUN_KEYS: [&str; 6] = ["policy", "policies", "vote_rule", "reward", "seeds", "log_seeds"];

/// Apply one assignment to a scenario config. Returns `Ok(false)` when the
/// key is not a scenario key.
pub fn set_scenario(cfg: &mut ScenarioConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "n_ns" => cfg.n_ns = parse_value(key, value)?,
        "n_we" => cfg.n_we = parse_value(key, value)?,
        "horizon_steps" => cfg.horizon_steps = parse_value(key, value)?,
        "t_act" => cfg.t_act = parse_value(key, value)?,
        "loop_length_m" => cfg.loop_length_m = parse_value(key, value)?,
        "approach_length_m" => cfg.approach_length_m = parse_value(key, value)?,
        "n_segments" => cfg.n_segments = parse_value(key, value)?,
        "v_max_mps" => cfg.v_max_mps = parse_value(key, value)?,
        "accel_mps2" => cfg.accel_mps2 = parse_value(key, value)?,
        "decel_mps2" => cfg.decel_mps2 = parse_value(key, value)?,
        "vehicle_length_m" => cfg.vehicle_length_m = parse_value(key, value)?,
        "min_gap_m" => cfg.min_gap_m = parse_value(key, value)?,
        "stop_speed_threshold_mps" => cfg.stop_speed_threshold_mps = parse_value(key, value)?,
        "preference_split" => cfg.preference_split = parse_value(key, value)?,
        "seed" => cfg.seed = parse_value(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Apply one assignment to hyperparameters. The training seed is spelled
/// `train_seed` to keep it apart from the scenario `seed`; `hidden` is a
/// comma-separated list of widths.
pub fn set_hyperparam(hp: &mut Hyperparams, key: &str, value: &str) -> Result<bool> {
    match key {
        "gamma" => hp.gamma = parse_value(key, value)?,
        "learning_rate" => hp.learning_rate = parse_value(key, value)?,
        "epsilon_start" => hp.epsilon_start = parse_value(key, value)?,
        "epsilon_end" => hp.epsilon_end = parse_value(key, value)?,
        "epsilon_decay_steps" => hp.epsilon_decay_steps = parse_value(key, value)?,
        "buffer_capacity" => hp.buffer_capacity = parse_value(key, value)?,
        "batch_size" => hp.batch_size = parse_value(key, value)?,
        "target_sync_every" => hp.target_sync_every = parse_value(key, value)?,
        "train_episodes" => hp.train_episodes = parse_value(key, value)?,
        "train_seed" => hp.seed = parse_value(key, value)?,
        "grad_clip" => hp.grad_clip = parse_value(key, value)?,
        "normalize_rewards" => hp.normalize_rewards = parse_value(key, value)?,
        "explore_hold_max" => hp.explore_hold_max = parse_value(key, value)?,
        "hidden" => {
            hp.hidden = if value.is_empty() {
                Vec::new()
            } else {
                value
                    .split(',')
                    .map(|w| parse_value(key, w.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
        }
        _ => return Ok(false),
    }
    Ok(true)
}

/// Scenario config, hyperparameters and the remaining run-level keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    pub scenario: ScenarioConfig,
    pub hyperparams: Hyperparams,
    pub run: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        if set_scenario(&mut self.scenario, key, value)? || set_hyperparam(&mut self.hyperparams, key, value)? {
            return Ok(());
        }
        if RUN_KEYS.contains(&key) {
            self.run.insert(key.to_string(), value.to_string());
            return Ok(());
        }
        Err(Error::Parse(format!("unknown config key `{key}`")))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_pairs(text)? {
            cfg.apply(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Every key with its effective value, in a stable order; parsing the
    /// output reproduces the same config.
    pub fn render(&self) -> String {
        let s = &self.scenario;
        let h = &self.hyperparams;
        let scenario = [
            s.n_ns.to_string(),
            s.n_we.to_string(),
            s.horizon_steps.to_string(),
            s.t_act.to_string(),
            s.loop_length_m.to_string(),
            s.approach_length_m.to_string(),
            s.n_segments.to_string(),
            s.v_max_mps.to_string(),
            s.accel_mps2.to_string(),
            s.decel_mps2.to_string(),
            s.vehicle_length_m.to_string(),
            s.min_gap_m.to_string(),
            s.stop_speed_threshold_mps.to_string(),
            s.preference_split.to_string(),
            s.seed.to_string(),
        ];
        let hyper = [
            h.gamma.to_string(),
            h.learning_rate.to_string(),
            h.epsilon_start.to_string(),
            h.epsilon_end.to_string(),
            h.epsilon_decay_steps.to_string(),
            h.buffer_capacity.to_string(),
            h.batch_size.to_string(),
            h.target_sync_every.to_string(),
            h.train_episodes.to_string(),
            h.seed.to_string(),
            h.hidden.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
            h.grad_clip.to_string(),
            h.normalize_rewards.to_string(),
            h.explore_hold_max.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in SCENARIO_KEYS
            .iter()
            .zip(&scenario)
            .chain(HYPERPARAM_KEYS.iter().zip(&hyper))
        {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for (k, v) in &self.run {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file() {
        let text = "# demand\nn_ns = 22\nn_we=11\n\nseed = 7\nvote_rule = majority\nhidden = 32, 16\n";
        let cfg = ConfigFile::parse(text).unwrap();
        assert_eq!((cfg.scenario.n_ns, cfg.scenario.n_we, cfg.scenario.seed), (22, 11, 7));
        assert_eq!(cfg.hyperparams.hidden, vec![32, 16]);
        assert_eq!(cfg.run["vote_rule"], "majority");
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(ConfigFile::parse("bogus = 1").is_err());
        assert!(ConfigFile::parse("n_ns 22").is_err());
        assert!(ConfigFile::parse("n_ns = many").is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = ConfigFile::default();
        cfg.apply("decel_mps2", "3.25").unwrap();
        cfg.apply("policy", "multi").unwrap();
        cfg.apply("hidden", "8").unwrap();
        let again = ConfigFile::parse(&cfg.render()).unwrap();
        assert_eq!(again, cfg);
    }
}
