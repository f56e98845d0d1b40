//! The advising training loop: trainer feedback first, then (inside the
//! exploration branch) reuse of stored advice, then random exploration, and
//! otherwise the greedy learned policy.

use alloc::boxed::Box;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::advice_memory::{AdviceEntry, AdviceStore, PprConfig};
use crate::advisor::{
    AdviceEvent, AdviceSource, AdvisorProfile, DecisionContext, NoAdvice, SimulatedAdvisor,
};
use crate::env::{Env, EnvConfig, Environment, Observation, StepOutcome};
use crate::generalizer::ClusterModel;
use crate::learner::{epsilon_at, td_update, Hyperparams, QNetwork, ReplayBuffer, Transition};
use crate::rng::{RngSet, SeedSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMode {
    /// Never consults a trainer.
    Baseline,
    /// Executes advice once and forgets it.
    NonPersistent,
    /// Executes advice and stores it per cluster for later reuse.
    Persistent,
}

impl AgentMode {
    pub const ALL: [AgentMode; 3] = [
        AgentMode::Baseline,
        AgentMode::NonPersistent,
        AgentMode::Persistent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentMode::Baseline => "baseline",
            AgentMode::NonPersistent => "non_persistent",
            AgentMode::Persistent => "persistent",
        }
    }

    pub fn uses_advisor(self) -> bool {
        self != AgentMode::Baseline
    }
}

impl fmt::Display for AgentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(AgentMode::Baseline),
            "non_persistent" | "non-persistent" => Ok(AgentMode::NonPersistent),
            "persistent" => Ok(AgentMode::Persistent),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

/// Which branch of the decision rule produced an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Advised,
    Reused,
    Random,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub action: usize,
    pub provenance: Provenance,
    /// Cluster of the decision state, when the persistent path computed it.
    pub cluster: Option<usize>,
}

/// Where in the run a decision happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepPosition {
    pub episode: usize,
    pub step: usize,
    pub global_step: u64,
}

/// Everything a decision reads besides the random streams and the store.
pub struct Policy<'a> {
    pub mode: AgentMode,
    pub net: &'a QNetwork,
    pub model: Option<&'a ClusterModel>,
    pub epsilon: f64,
    pub env: &'a Env,
}

/// Selects the action for one step.
///
/// 1. Unless in baseline mode, ask the advisor. Advice is executed and, in
///    persistent mode, recorded against the state's cluster.
/// 2. Otherwise with probability ε explore: persistent agents first try to
///    reuse stored advice for the cluster, falling back to a uniform action.
/// 3. Otherwise act greedily.
pub fn choose_action<A: AdviceSource + ?Sized>(
    policy: &Policy<'_>,
    obs: &Observation,
    at: StepPosition,
    store: &mut AdviceStore,
    advisor: &mut A,
    rngs: &mut RngSet,
) -> Result<Decision> {
    let cluster_of = |obs: &Observation| -> Result<usize> {
        policy
            .model
            .ok_or_else(|| Error::Config("persistent mode requires a cluster model".into()))?
            .assign_obs(obs)
    };
    let actions = policy.env.action_count();

    if policy.mode.uses_advisor() {
        let ctx = DecisionContext {
            episode: at.episode,
            step: at.step,
            global_step: at.global_step,
            obs,
            epsilon: policy.epsilon,
            env: policy.env,
            store,
        };
        if let Some(action) = advisor.advise(&ctx, &mut rngs.advisor) {
            if action >= actions {
                return Err(Error::InvalidAction {
                    action,
                    count: actions,
                });
            }
            let mut cluster = None;
            if policy.mode == AgentMode::Persistent {
                let c = cluster_of(obs)?;
                store.record(c, action, at.global_step);
                cluster = Some(c);
            }
            return Ok(Decision {
                action,
                provenance: Provenance::Advised,
                cluster,
            });
        }
    }

    if rngs.learner.random::<f64>() < policy.epsilon {
        let mut cluster = None;
        if policy.mode == AgentMode::Persistent {
            let c = cluster_of(obs)?;
            cluster = Some(c);
            if let Some(action) = store.retrieve(c, at.global_step, &mut rngs.ppr) {
                return Ok(Decision {
                    action,
                    provenance: Provenance::Reused,
                    cluster,
                });
            }
        }
        return Ok(Decision {
            action: rngs.learner.random_range(0..actions),
            provenance: Provenance::Random,
            cluster,
        });
    }

    Ok(Decision {
        action: policy.net.greedy_action(obs.values())?,
        provenance: Provenance::Greedy,
        cluster: None,
    })
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub env: EnvConfig,
    pub mode: AgentMode,
    pub advisor: Option<AdvisorProfile>,
    pub hyper: Hyperparams,
    pub ppr: PprConfig,
    pub seeds: SeedSet,
}

impl TrainingConfig {
    pub fn validate(&self, model: Option<&ClusterModel>) -> Result<()> {
        self.hyper.validate()?;
        if let Some(p) = &self.advisor {
            p.validate()?;
        }
        if self.mode.uses_advisor() && self.advisor.is_none() {
            return Err(Error::Config(alloc::format!(
                "{} mode requires an advisor profile",
                self.mode
            )));
        }
        if self.mode == AgentMode::Persistent {
            let model = model
                .ok_or_else(|| Error::Config("persistent mode requires a cluster model".into()))?;
            let expected = self.env.id().obs_len();
            if model.dim() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    got: model.dim(),
                });
            }
        }
        let p = &self.ppr;
        if !((0.0..=1.0).contains(&p.initial_probability) && (0.0..=1.0).contains(&p.decay)) {
            return Err(Error::Config(
                "reuse probability and decay must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// The simulated advisor for this configuration (none for baseline).
    pub fn simulated_advisor(&self) -> Box<dyn AdviceSource> {
        match (&self.advisor, self.mode.uses_advisor()) {
            (Some(p), true) => Box::new(SimulatedAdvisor::new(p.clone())),
            _ => Box::new(NoAdvice),
        }
    }
}

/// Per-episode totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub reward: f64,
    pub steps: usize,
    pub advised: usize,
    pub reused: usize,
    pub random: usize,
    pub greedy: usize,
    pub epsilon: f64,
    /// Ended in a terminal state rather than the step cap (or a stop).
    pub terminal: bool,
    pub mean_loss: Option<f64>,
    pub store_size: usize,
}

impl EpisodeMetrics {
    fn new(episode: usize, epsilon: f64) -> Self {
        Self {
            episode,
            reward: 0.0,
            steps: 0,
            advised: 0,
            reused: 0,
            random: 0,
            greedy: 0,
            epsilon,
            terminal: false,
            mean_loss: None,
            store_size: 0,
        }
    }

    fn count(&mut self, p: Provenance) {
        match p {
            Provenance::Advised => self.advised += 1,
            Provenance::Reused => self.reused += 1,
            Provenance::Random => self.random += 1,
            Provenance::Greedy => self.greedy += 1,
        }
    }
}

/// What a [`StepHook`] sees after every environment step.
pub struct StepRecord<'a> {
    pub at: StepPosition,
    pub obs: &'a Observation,
    pub decision: Decision,
    pub outcome: &'a StepOutcome,
    pub epsilon: f64,
    pub loss: Option<f64>,
    pub advice: Option<AdviceEvent>,
    pub store: &'a AdviceStore,
    pub env: &'a Env,
}

pub trait StepHook {
    fn on_step(&mut self, record: &StepRecord<'_>);
}

impl StepHook for () {
    fn on_step(&mut self, _: &StepRecord<'_>) {}
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub episodes: Vec<EpisodeMetrics>,
    pub network: QNetwork,
    pub store: Vec<AdviceEntry>,
    /// The advice source asked to stop before all episodes ran.
    pub stopped: bool,
}

/// Learner, store and random streams of one run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainingConfig,
    env: Env,
    net: QNetwork,
    target: QNetwork,
    replay: ReplayBuffer,
    store: AdviceStore,
    model: Option<ClusterModel>,
    rngs: RngSet,
    episode: usize,
    global_step: u64,
    updates: u64,
}

impl Trainer {
    pub fn new(config: TrainingConfig, model: Option<ClusterModel>) -> Result<Self> {
        config.validate(model.as_ref())?;
        let env = config.env.build()?;
        let mut rngs = RngSet::new(config.seeds);
        let mut sizes = Vec::with_capacity(config.hyper.hidden.len() + 2);
        sizes.push(env.obs_len());
        sizes.extend_from_slice(&config.hyper.hidden);
        sizes.push(env.action_count());
        let net = QNetwork::new(&sizes, &mut rngs.learner);
        Ok(Self {
            target: net.clone(),
            net,
            replay: ReplayBuffer::new(config.hyper.replay_capacity),
            store: AdviceStore::new(config.ppr),
            model,
            rngs,
            env,
            episode: 0,
            global_step: 0,
            updates: 0,
            config,
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn network(&self) -> &QNetwork {
        &self.net
    }

    pub fn target_network(&self) -> &QNetwork {
        &self.target
    }

    pub fn store(&self) -> &AdviceStore {
        &self.store
    }

    pub fn model(&self) -> Option<&ClusterModel> {
        self.model.as_ref()
    }

    /// Index of the next episode to run.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Plays one episode, learning from every transition. Returns the
    /// metrics and whether the advice source asked to stop.
    pub fn run_episode(
        &mut self,
        advisor: &mut dyn AdviceSource,
        hook: &mut dyn StepHook,
    ) -> Result<(EpisodeMetrics, bool)> {
        let episode = self.episode;
        let epsilon = epsilon_at(episode, &self.config.hyper);
        let mut metrics = EpisodeMetrics::new(episode, epsilon);
        let mut obs = self.env.reset(self.rngs.env.random());
        let mut loss_sum = 0.0;
        let mut losses = 0usize;
        let mut stopped = false;

        for step in 0..self.env.max_steps() {
            let at = StepPosition {
                episode,
                step,
                global_step: self.global_step,
            };
            let policy = Policy {
                mode: self.config.mode,
                net: &self.net,
                model: self.model.as_ref(),
                epsilon,
                env: &self.env,
            };
            let decision =
                choose_action(&policy, &obs, at, &mut self.store, advisor, &mut self.rngs)?;
            let advice = match decision.provenance {
                Provenance::Advised => Some(AdviceEvent {
                    step: self.global_step,
                    cluster: decision.cluster,
                    action: decision.action,
                    was_accurate: self.env.oracle_action(&obs)?.index == decision.action,
                }),
                _ => None,
            };

            let outcome = self.env.step(decision.action)?;
            self.store.tick();
            self.global_step += 1;
            metrics.count(decision.provenance);
            metrics.steps += 1;
            metrics.reward += outcome.reward;

            self.replay.push(Transition {
                obs: obs.clone(),
                action: decision.action,
                reward: outcome.reward,
                next_obs: outcome.next_obs.clone(),
                terminal: outcome.terminal,
            });
            let loss = self.learn().map_err(|e| match e {
                Error::NonFiniteLoss => Error::Diverged { episode },
                other => other,
            })?;
            if let Some(l) = loss {
                loss_sum += l;
                losses += 1;
            }

            hook.on_step(&StepRecord {
                at,
                obs: &obs,
                decision,
                outcome: &outcome,
                epsilon,
                loss,
                advice,
                store: &self.store,
                env: &self.env,
            });

            let done = outcome.is_done();
            metrics.terminal = outcome.terminal;
            obs = outcome.next_obs;
            if advisor.stop_requested() {
                stopped = true;
                break;
            }
            if done {
                break;
            }
        }

        metrics.mean_loss = (losses > 0).then(|| loss_sum / losses as f64);
        metrics.store_size = self.store.len();
        self.episode += 1;
        Ok((metrics, stopped))
    }

    fn learn(&mut self) -> Result<Option<f64>> {
        let h = &self.config.hyper;
        let Some(batch) = self.replay.sample(h.batch_size, &mut self.rngs.learner) else {
            return Ok(None);
        };
        let loss = td_update(
            &mut self.net,
            &self.target,
            &batch,
            h.gamma,
            h.learning_rate,
            h.max_grad_norm,
        )?;
        self.updates += 1;
        if self.updates.is_multiple_of(h.target_sync as u64) {
            self.target = self.net.clone();
        }
        Ok(Some(loss))
    }

    /// Runs the remaining configured episodes.
    pub fn run(
        &mut self,
        advisor: &mut dyn AdviceSource,
        hook: &mut dyn StepHook,
    ) -> Result<RunResult> {
        let mut episodes = Vec::with_capacity(self.config.hyper.episodes);
        let mut stopped = false;
        while self.episode < self.config.hyper.episodes {
            let (m, stop) = self.run_episode(advisor, hook)?;
            episodes.push(m);
            if stop {
                stopped = true;
                break;
            }
        }
        Ok(RunResult {
            episodes,
            network: self.net.clone(),
            store: self.store.snapshot(),
            stopped,
        })
    }
}

/// A full run with the configuration's simulated advisor.
pub fn run_training(config: &TrainingConfig, model: Option<ClusterModel>) -> Result<RunResult> {
    let mut advisor = config.simulated_advisor();
    Trainer::new(config.clone(), model)?.run(advisor.as_mut(), &mut ())
}
