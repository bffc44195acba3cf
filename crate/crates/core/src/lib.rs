//! Voting-integrated multi-objective deep Q-learning for a two-road signalized
//! intersection.
//!
//! The crate is organized bottom-up:
//!
//! * [`sim`]: deterministic microsimulation of the intersection.
//! * [`rewards`]: per-interval reward functions and episode metrics.
//! * [`neural`]: feedforward Q-network, replay-buffer DQN trainer, checkpoints.
//! * [`voting`]: majority and proportional vote aggregation.
//! * [`policy`]: softmax normalization, the integration layer and action choice.
//! * [`harness`]: episodes, demand sweeps, alignment analysis and result files.
//! * [`cli`]: the `crossvote` command-line front end.

pub mod cli;
pub mod error;
pub mod harness;
pub mod keyval;
pub mod neural;
pub mod policy;
pub mod rewards;
pub mod sim;
pub mod voting;

pub use error::{Error, Result};
