//! Broad-persistent advising for interactive deep reinforcement learning.
//!
//! This crate holds the allocation-only algorithmic core: the two task
//! simulators, a small DQN learner, the simulated advisor, the k-means state
//! generalizer, the probabilistic advice-reuse store and the training loop
//! that ties them together. It performs no IO; file formats, the CLI and the
//! live advising service live in `bpa-lab`.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod advice_memory;
pub mod advisor;
pub mod agent;
pub mod env;
mod error;
pub mod generalizer;
pub mod learner;
pub mod rng;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::advice_memory::{AdviceEntry, AdviceStore, DecayVariant, PprConfig};
    pub use crate::advisor::{AdviceSource, AdvisorProfile, DecisionContext, SimulatedAdvisor};
    pub use crate::agent::{
        AgentMode, EpisodeMetrics, Provenance, RunResult, StepHook, Trainer, TrainingConfig,
    };
    pub use crate::env::{
        CartPoleParams, Env, EnvAction, EnvConfig, EnvId, Environment, NavWorld, Observation,
        StepOutcome,
    };
    pub use crate::generalizer::{ClusterModel, Elbow, SseCurve, StateCorpus};
    pub use crate::learner::{Hyperparams, QNetwork, ReplayBuffer, Transition};
    pub use crate::rng::{RngSet, SeedSet};
    pub use crate::{Error, Result};
}
