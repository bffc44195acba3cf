//! Replay-buffer deep Q-learning with a periodically synced target network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Environment steps over which epsilon decays linearly.
    pub epsilon_decay_steps: u64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Gradient updates between target-network syncs.
    pub target_sync_every: u64,
    pub train_episodes: u32,
    pub seed: u64,
    pub hidden: Vec<usize>,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    /// Divide the stops and wait rewards by their per-interval norms.
    pub normalize_rewards: bool,
    /// Exploratory actions are repeated for a log-uniform number of steps in
    /// `1..=explore_hold_max`; 1 gives plain epsilon-greedy.
    pub explore_hold_max: u32,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 20_000,
            buffer_capacity: 50_000,
            batch_size: 32,
            target_sync_every: 500,
            train_episodes: 200,
            seed: 0,
            hidden: vec![64, 64],
            grad_clip: 10.0,
            normalize_rewards: true,
            explore_hold_max: 1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidHyperparams(m.to_string()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon values must lie in [0, 1]");
        }
        if self.buffer_capacity == 0 || self.batch_size == 0 || self.target_sync_every == 0 {
            return bad("buffer_capacity, batch_size and target_sync_every must be positive");
        }
        if self.explore_hold_max == 0 {
            return bad("explore_hold_max must be at least 1");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return bad("grad_clip must be finite and non-negative");
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start`, reaching `epsilon_end` at
    /// `epsilon_decay_steps` and staying there.
    pub fn epsilon_at(&self, step: u64) -> f64 {
        if self.epsilon_decay_steps == 0 || step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    pub fn layer_dims(&self, obs_dim: usize, n_actions: usize) -> Vec<usize> {
        let mut dims = vec![obs_dim];
        dims.extend(&self.hidden);
        dims.push(n_actions);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<'a, R: Rng + ?Sized>(&'a self, n: usize, rng: &mut R) -> Vec<&'a Transition> {
        (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

/// Bellman backups against the target network.
pub fn td_targets(batch: &[&Transition], target: &Mlp, gamma: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                return Ok(t.reward);
            }
            let q = target.forward(&t.next_obs)?;
            let best = q.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(t.reward + gamma * best)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

/// An episodic control problem a [`DqnTrainer`] can learn on.
pub trait Environment {
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Start a new episode, drawing any randomness from `rng`.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub struct DqnTrainer {
    hp: Hyperparams,
    online: Mlp,
    target: Mlp,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    steps: u64,
    updates: u64,
    /// Exploratory action still being held and the steps left on it.
    held: Option<(usize, u32)>,
}

impl DqnTrainer {
    pub fn new(obs_dim: usize, n_actions: usize, hp: Hyperparams) -> Result<Self> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let online = Mlp::random(&hp.layer_dims(obs_dim, n_actions), &mut rng)?;
        Ok(Self::with_network(online, hp, rng))
    }

    /// Start from a given network (e.g. a hand-built linear one).
    pub fn from_network(online: Mlp, hp: Hyperparams) -> Result<Self> {
        hp.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(hp.seed);
        Ok(Self::with_network(online, hp, rng))
    }

    fn with_network(online: Mlp, hp: Hyperparams, rng: ChaCha8Rng) -> Self {
        Self {
            target: online.clone(),
            online,
            buffer: ReplayBuffer::new(hp.buffer_capacity),
            hp,
            rng,
            steps: 0,
            updates: 0,
            held: None,
        }
    }

    pub fn network(&self) -> &Mlp {
        &self.online
    }

    pub fn into_network(self) -> Mlp {
        self.online
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn act(&mut self, obs: &[f64]) -> Result<usize> {
        if let Some((action, left)) = self.held {
            self.held = (left > 1).then_some((action, left - 1));
            return Ok(action);
        }
        let eps = self.hp.epsilon_at(self.steps);
        let n = self.online.output_dim();
        if self.rng.random::<f64>() < eps {
            let action = self.rng.random_range(0..n);
            if self.hp.explore_hold_max > 1 {
                let span = f64::from(self.hp.explore_hold_max).ln();
                let hold = (self.rng.random::<f64>() * span).exp().floor() as u32;
                let hold = hold.clamp(1, self.hp.explore_hold_max);
                self.held = (hold > 1).then_some((action, hold - 1));
            }
            return Ok(action);
        }
        Ok(argmax(&self.online.forward(obs)?.values))
    }

    /// One minibatch gradient step, once the buffer holds a full batch.
    pub fn update(&mut self) -> Result<()> {
        if self.buffer.len() < self.hp.batch_size {
            return Ok(());
        }
        let batch = self.buffer.sample(self.hp.batch_size, &mut self.rng);
        let targets = td_targets(&batch, &self.target, self.hp.gamma)?;
        let items: Vec<(&[f64], usize, f64)> = batch
            .iter()
            .zip(&targets)
            .map(|(t, &y)| (t.obs.as_slice(), t.action, y))
            .collect();
        let mut grads = self.online.gradients(&items)?;
        if self.hp.grad_clip > 0.0 {
            grads.clip_norm(self.hp.grad_clip);
        }
        self.online.optimizer_step(&grads, self.hp.learning_rate)?;
        self.updates += 1;
        if self.updates.is_multiple_of(self.hp.target_sync_every) {
            self.target = self.online.clone();
        }
        Ok(())
    }

    pub fn remember(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// Run one epsilon-greedy episode with one update per step; returns the
    /// undiscounted return.
    pub fn run_episode<E: Environment>(&mut self, env: &mut E) -> Result<f64> {
        self.held = None;
        let mut obs = env.reset(&mut self.rng)?;
        let mut ret = 0.0;
        loop {
            let action = self.act(&obs)?;
            let out = env.step(action)?;
            ret += out.reward;
            self.steps += 1;
            let terminal = out.terminal;
            let next = out.next_obs;
            self.buffer.push(Transition {
                obs: std::mem::replace(&mut obs, next.clone()),
                action,
                reward: out.reward,
                next_obs: next,
                terminal,
            });
            self.update()?;
            if terminal {
                return Ok(ret);
            }
        }
    }

    pub fn train<E: Environment>(&mut self, env: &mut E, episodes: u32) -> Result<Vec<f64>> {
        (0..episodes).map(|_| self.run_episode(env)).collect()
    }
}
