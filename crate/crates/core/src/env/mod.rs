//! Task simulators: cart-pole balancing and 2-D robot navigation.
//!
//! Each simulator exposes pure step functions over an [`Observation`] plus a
//! small stateful wrapper implementing [`Environment`] that tracks the episode
//! step count for truncation.

use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

mod cartpole;
mod geometry;
mod nav;

pub use cartpole::{cartpole_reset, cartpole_step, CartPole, CartPoleParams};
pub use geometry::{Pose, Rect};
pub use nav::{nav_observe, nav_reset, nav_step, Nav, NavAction, NavWorld};

/// Real-valued feature vector emitted by an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(Vec<f64>);

impl Observation {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Checks length and finiteness against an environment's contract.
    pub fn validate(&self, expected_len: usize) -> Result<()> {
        if self.0.len() != expected_len {
            return Err(Error::DimensionMismatch {
                expected: expected_len,
                got: self.0.len(),
            });
        }
        if !self.is_finite() {
            return Err(Error::NonFiniteObservation);
        }
        Ok(())
    }
}

impl From<Vec<f64>> for Observation {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvAction {
    pub index: usize,
    pub label: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_obs: Observation,
    pub reward: f64,
    /// Failure or success; the episode cannot continue.
    pub terminal: bool,
    /// Step-cap cut-off.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn is_done(&self) -> bool {
        self.terminal || self.truncated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    CartPole,
    Nav,
}

impl EnvId {
    pub fn name(self) -> &'static str {
        match self {
            EnvId::CartPole => "cartpole",
            EnvId::Nav => "nav",
        }
    }

    pub fn obs_len(self) -> usize {
        match self {
            EnvId::CartPole => 4,
            EnvId::Nav => 5,
        }
    }

    pub fn action_labels(self) -> &'static [&'static str] {
        match self {
            EnvId::CartPole => &["left", "right"],
            EnvId::Nav => &["straight", "turn-left", "turn-right"],
        }
    }

    pub fn action_count(self) -> usize {
        self.action_labels().len()
    }

    pub fn action(self, index: usize) -> Result<EnvAction> {
        let labels = self.action_labels();
        labels
            .get(index)
            .map(|&label| EnvAction { index, label })
            .ok_or(Error::InvalidAction {
                action: index,
                count: labels.len(),
            })
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartpole" | "cart-pole" => Ok(EnvId::CartPole),
            "nav" | "navigation" => Ok(EnvId::Nav),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }
}

/// Geometric primitives a viewer needs to draw the current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RenderFrame {
    CartPole {
        cart_x: f64,
        pole_angle: f64,
        pole_length: f64,
        position_limit: f64,
    },
    Nav {
        pose: Pose,
        robot_radius: f64,
        arena: [f64; 2],
        obstacles: Vec<Rect>,
        goal: Rect,
        /// (absolute ray angle, measured distance) per sensor, left first.
        sensors: Vec<[f64; 2]>,
    },
}

/// Common interface of the stateful simulators.
pub trait Environment {
    fn id(&self) -> EnvId;

    fn max_steps(&self) -> usize;

    /// Starts a new episode. Deterministic environments ignore `seed`.
    fn reset(&mut self, seed: u64) -> Observation;

    fn step(&mut self, action: usize) -> Result<StepOutcome>;

    /// Deterministic heuristic that stands in for the advisor's knowledge.
    fn oracle_action(&self, obs: &Observation) -> Result<EnvAction>;

    fn render(&self, obs: &Observation) -> RenderFrame;

    fn obs_len(&self) -> usize {
        self.id().obs_len()
    }

    fn action_count(&self) -> usize {
        self.id().action_count()
    }
}

/// Environment parameters as they appear in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "lowercase")]
pub enum EnvConfig {
    CartPole(CartPoleParams),
    Nav(NavWorld),
}

impl EnvConfig {
    pub fn default_for(id: EnvId) -> Self {
        match id {
            EnvId::CartPole => EnvConfig::CartPole(CartPoleParams::default()),
            EnvId::Nav => EnvConfig::Nav(NavWorld::default()),
        }
    }

    pub fn id(&self) -> EnvId {
        match self {
            EnvConfig::CartPole(_) => EnvId::CartPole,
            EnvConfig::Nav(_) => EnvId::Nav,
        }
    }

    pub fn build(&self) -> Result<Env> {
        match self {
            EnvConfig::CartPole(p) => Ok(Env::CartPole(CartPole::new(p.clone())?)),
            EnvConfig::Nav(w) => Ok(Env::Nav(Nav::new(w.clone())?)),
        }
    }
}

/// Either simulator behind one concrete type.
#[derive(Debug, Clone)]
pub enum Env {
    CartPole(CartPole),
    Nav(Nav),
}

impl Environment for Env {
    fn id(&self) -> EnvId {
        match self {
            Env::CartPole(e) => e.id(),
            Env::Nav(e) => e.id(),
        }
    }

    fn max_steps(&self) -> usize {
        match self {
            Env::CartPole(e) => e.max_steps(),
            Env::Nav(e) => e.max_steps(),
        }
    }

    fn reset(&mut self, seed: u64) -> Observation {
        match self {
            Env::CartPole(e) => e.reset(seed),
            Env::Nav(e) => e.reset(seed),
        }
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        match self {
            Env::CartPole(e) => e.step(action),
            Env::Nav(e) => e.step(action),
        }
    }

    fn oracle_action(&self, obs: &Observation) -> Result<EnvAction> {
        match self {
            Env::CartPole(e) => e.oracle_action(obs),
            Env::Nav(e) => e.oracle_action(obs),
        }
    }

    fn render(&self, obs: &Observation) -> RenderFrame {
        match self {
            Env::CartPole(e) => e.render(obs),
            Env::Nav(e) => e.render(obs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_ids_parse_and_label_actions() {
        assert_eq!("cartpole".parse::<EnvId>().unwrap(), EnvId::CartPole);
        assert_eq!("nav".parse::<EnvId>().unwrap(), EnvId::Nav);
        assert!(matches!(
            "mujoco".parse::<EnvId>(),
            Err(Error::UnknownEnv(_))
        ));
        assert_eq!(EnvId::CartPole.action_count(), 2);
        assert_eq!(EnvId::Nav.action_count(), 3);
        assert_eq!(EnvId::CartPole.action(1).unwrap().label, "right");
        assert!(EnvId::Nav.action(3).is_err());
    }

    #[test]
    fn observation_validation() {
        let obs = Observation::new(alloc::vec![0.0, 1.0]);
        assert!(obs.validate(2).is_ok());
        assert_eq!(
            obs.validate(4),
            Err(Error::DimensionMismatch {
                expected: 4,
                got: 2
            })
        );
        let bad = Observation::new(alloc::vec![f64::NAN, 1.0]);
        assert_eq!(bad.validate(2), Err(Error::NonFiniteObservation));
    }
}
