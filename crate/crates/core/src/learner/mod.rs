//! Minimal DQN: a fully connected Q-network, uniform replay and an
//! episode-level ε schedule.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

mod network;
mod replay;

pub use network::{td_update, Dense, Gradients, QNetwork, TdLoss};
pub use replay::{ReplayBuffer, Transition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub hidden: Vec<usize>,
    pub epsilon_start: f64,
    /// Multiplicative decay applied once per episode.
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub learning_rate: f64,
    pub gamma: f64,
    pub episodes: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Gradient steps between target-network refreshes.
    pub target_sync: usize,
    /// Upper bound on the global gradient norm of one update; `None` disables.
    pub max_grad_norm: Option<f64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epsilon_start: 1.0,
            epsilon_decay: 0.99,
            epsilon_floor: 0.01,
            learning_rate: 0.01,
            gamma: 0.99,
            episodes: 500,
            batch_size: 32,
            replay_capacity: 10_000,
            target_sync: 100,
            max_grad_norm: Some(10.0),
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.gamma) {
            return Err(Error::Config("discount must lie in [0, 1]".into()));
        }
        if !(unit(self.epsilon_floor)
            && unit(self.epsilon_start)
            && self.epsilon_floor <= self.epsilon_start
            && unit(self.epsilon_decay))
        {
            return Err(Error::Config(
                "epsilon schedule must satisfy 0 <= floor <= start <= 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size || self.target_sync == 0 {
            return Err(Error::Config(
                "batch size, replay capacity and target sync must be positive (capacity >= batch)"
                    .into(),
            ));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        if matches!(self.max_grad_norm, Some(n) if !(n.is_finite() && n > 0.0)) {
            return Err(Error::Config("gradient norm bound must be positive".into()));
        }
        Ok(())
    }
}

/// Exploration rate for a zero-based episode index.
pub fn epsilon_at(episode: usize, h: &Hyperparams) -> f64 {
    let decayed = h.epsilon_start * libm::pow(h.epsilon_decay, episode as f64);
    decayed.max(h.epsilon_floor)
}
