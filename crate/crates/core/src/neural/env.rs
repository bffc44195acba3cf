//! The intersection as a DQN training environment.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::dqn::{DqnTrainer, Environment, Hyperparams, StepOutcome};
use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::rewards::{interval_reward, RewardKind, RewardParams};
use crate::sim::{init_scenario, Phase, ScenarioConfig, SimWorld, DEMANDS};

/// Each episode draws one of the six demands and a fresh scenario seed; the
/// physical parameters come from the base config. Every decision applies the
/// chosen phase for `t_act` seconds; the decision that reaches the horizon
/// is terminal.
pub struct TrafficEnv {
    base: ScenarioConfig,
    reward: RewardKind,
    normalized: bool,
    world: Option<SimWorld>,
    params: RewardParams,
}

impl TrafficEnv {
    pub fn new(base: ScenarioConfig, reward: RewardKind, normalized: bool) -> Result<Self> {
        base.validate()?;
        let params = RewardParams::for_scenario(&base);
        Ok(Self {
            base,
            reward,
            normalized,
            world: None,
            params,
        })
    }

    pub fn world(&self) -> Option<&SimWorld> {
        self.world.as_ref()
    }
}

impl Environment for TrafficEnv {
    fn obs_dim(&self) -> usize {
        self.base.obs_dim()
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let (n_ns, n_we) = DEMANDS[rng.random_range(0..DEMANDS.len())];
        let cfg = self.base.clone().with_demand(n_ns, n_we).with_seed(rng.random());
        let world = init_scenario(&cfg)?;
        self.params = RewardParams::for_scenario(&cfg);
        let obs = world.observe().occupancy;
        self.world = Some(world);
        Ok(obs)
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let world = self.world.as_mut().ok_or(Error::Empty("world (reset not called)"))?;
        world.set_phase(Phase::from_action(action));
        let t_act = world.config().t_act;
        for _ in 0..t_act {
            world.tick();
        }
        let ev = world.drain_interval_events();
        let reward = interval_reward(self.reward, &ev, &self.params, self.normalized)?;
        Ok(StepOutcome {
            reward,
            next_obs: world.observe().occupancy,
            terminal: world.clock() + t_act as u64 > world.config().horizon_steps as u64,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainedNet {
    pub net: Mlp,
    /// Undiscounted return of each training episode.
    pub returns: Vec<f64>,
}

pub fn train_dqn(cfg: &ScenarioConfig, reward: RewardKind, hp: &Hyperparams) -> Result<TrainedNet> {
    let mut env = TrafficEnv::new(cfg.clone(), reward, hp.normalize_rewards)?;
    let mut trainer = DqnTrainer::new(env.obs_dim(), env.n_actions(), hp.clone())?;
    let returns = trainer.train(&mut env, hp.train_episodes)?;
    Ok(TrainedNet {
        net: trainer.into_network(),
        returns,
    })
}
