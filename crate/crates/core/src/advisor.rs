//! Simulated trainers and the advice-source abstraction the training loop
//! queries at every decision step.

use alloc::string::{String, ToString};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::advice_memory::AdviceStore;
use crate::env::{Env, Environment, Observation};
use crate::rng::StreamRng;
use crate::{Error, Result};

/// How often a trainer offers advice and how often that advice is right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvisorProfile {
    pub name: String,
    /// Probability of offering advice at a given step.
    pub frequency: f64,
    /// Probability that offered advice matches the oracle.
    pub accuracy: f64,
}

impl AdvisorProfile {
    pub fn new(name: impl Into<String>, frequency: f64, accuracy: f64) -> Result<Self> {
        let p = Self {
            name: name.into(),
            frequency,
            accuracy,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn pessimistic() -> Self {
        Self {
            name: "pessimistic".into(),
            frequency: 0.23658,
            accuracy: 0.47435,
        }
    }

    pub fn realistic() -> Self {
        Self {
            name: "realistic".into(),
            frequency: 0.47316,
            accuracy: 0.9487,
        }
    }

    pub fn optimistic() -> Self {
        Self {
            name: "optimistic".into(),
            frequency: 1.0,
            accuracy: 1.0,
        }
    }

    /// One of the three canonical profiles by name.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "pessimistic" => Ok(Self::pessimistic()),
            "realistic" => Ok(Self::realistic()),
            "optimistic" => Ok(Self::optimistic()),
            other => Err(Error::UnknownProfile(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if unit.contains(&self.frequency) && unit.contains(&self.accuracy) {
            Ok(())
        } else {
            Err(Error::Config(
                "advisor frequency and accuracy must lie in [0, 1]".into(),
            ))
        }
    }
}

/// Diagnostic record of one piece of advice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdviceEvent {
    pub step: u64,
    pub cluster: Option<usize>,
    pub action: usize,
    pub was_accurate: bool,
}

/// Samples the simulated trainer once.
///
/// With probability `frequency` advice is offered; it is the oracle action
/// with probability `accuracy` and otherwise uniform over the other actions.
pub fn maybe_advise<R: Rng + ?Sized>(
    profile: &AdvisorProfile,
    oracle: usize,
    action_count: usize,
    rng: &mut R,
) -> Option<usize> {
    if rng.random::<f64>() >= profile.frequency {
        return None;
    }
    if action_count < 2 || rng.random::<f64>() < profile.accuracy {
        return Some(oracle);
    }
    let other = rng.random_range(0..action_count - 1);
    Some(if other >= oracle { other + 1 } else { other })
}

/// What an advice source can see when asked for advice.
pub struct DecisionContext<'a> {
    pub episode: usize,
    /// Step within the episode.
    pub step: usize,
    pub global_step: u64,
    pub obs: &'a Observation,
    pub epsilon: f64,
    pub env: &'a Env,
    pub store: &'a AdviceStore,
}

/// Anything that can answer "do you have advice for this step?".
pub trait AdviceSource {
    /// Advice for the pending decision. `rng` is the run's dedicated advisor
    /// stream; sources that need no randomness leave it untouched.
    fn advise(&mut self, ctx: &DecisionContext<'_>, rng: &mut StreamRng) -> Option<usize>;

    /// Polled once per step; `true` ends the run after the current step.
    fn stop_requested(&self) -> bool {
        false
    }
}

/// Source that never advises.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoAdvice;

impl AdviceSource for NoAdvice {
    fn advise(&mut self, _: &DecisionContext<'_>, _: &mut StreamRng) -> Option<usize> {
        None
    }
}

/// Trainer simulated from a profile and the environment's oracle.
#[derive(Debug, Clone)]
pub struct SimulatedAdvisor {
    pub profile: AdvisorProfile,
}

impl SimulatedAdvisor {
    pub fn new(profile: AdvisorProfile) -> Self {
        Self { profile }
    }
}

impl AdviceSource for SimulatedAdvisor {
    fn advise(&mut self, ctx: &DecisionContext<'_>, rng: &mut StreamRng) -> Option<usize> {
        let oracle = ctx.env.oracle_action(ctx.obs).ok()?.index;
        maybe_advise(&self.profile, oracle, ctx.env.action_count(), rng)
    }
}
