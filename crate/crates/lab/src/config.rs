//! TOML experiment configuration.
//!
//! Every section is optional; omitted fields take the defaults documented in
//! `docs/config.md`.

use std::path::{Path, PathBuf};

use bpa_core::advice_memory::PprConfig;
use bpa_core::advisor::AdvisorProfile;
use bpa_core::agent::{AgentMode, TrainingConfig};
use bpa_core::env::{CartPoleParams, EnvConfig, EnvId, NavWorld};
use bpa_core::generalizer::CollectPolicy;
use bpa_core::learner::Hyperparams;
use bpa_core::rng::{mix_seed, SeedSet};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "BPA_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvId,
    pub mode: AgentMode,
    pub cartpole: CartPoleParams,
    pub nav: NavWorld,
    pub hyperparams: Hyperparams,
    pub advisor: AdvisorSection,
    pub ppr: PprConfig,
    pub clusters: ClusterSection,
    pub seeds: SeedSection,
    pub campaign: CampaignSection,
    pub live: LiveSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvId::CartPole,
            mode: AgentMode::Persistent,
            cartpole: CartPoleParams::default(),
            nav: NavWorld::default(),
            hyperparams: Hyperparams::default(),
            advisor: AdvisorSection::default(),
            ppr: PprConfig::default(),
            clusters: ClusterSection::default(),
            seeds: SeedSection::default(),
            campaign: CampaignSection::default(),
            live: LiveSection::default(),
        }
    }
}

/// A canonical profile by name, or an explicit frequency/accuracy pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvisorSection {
    pub profile: String,
    pub frequency: Option<f64>,
    pub accuracy: Option<f64>,
}

impl Default for AdvisorSection {
    fn default() -> Self {
        Self {
            profile: "realistic".into(),
            frequency: None,
            accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    /// Pre-fitted model; when absent one is fitted before training.
    pub model: Option<PathBuf>,
    /// Fixed cluster count; when absent k is chosen by the elbow rule.
    pub k: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub corpus_size: usize,
    pub policy: CollectPolicy,
    pub seed: u64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self {
            model: None,
            k: None,
            k_min: 1,
            k_max: 9,
            corpus_size: 50_000,
            policy: CollectPolicy::Random,
            seed: 0,
            tol: 1e-6,
            max_iters: 300,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    pub base: u64,
    pub env: Option<u64>,
    pub learner: Option<u64>,
    pub advisor: Option<u64>,
    pub ppr: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub modes: Vec<AgentMode>,
    pub profiles: Vec<String>,
    pub repeats: usize,
    /// Parallel runs; 0 uses every available core.
    pub workers: usize,
    /// Moving-average level counted as converged; defaults per environment.
    pub threshold: Option<f64>,
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self {
            modes: AgentMode::ALL.to_vec(),
            profiles: vec![
                "optimistic".into(),
                "realistic".into(),
                "pessimistic".into(),
            ],
            repeats: 5,
            workers: 0,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveSection {
    /// Longest wait for human advice at each decision.
    pub decision_interval_ms: u64,
    /// A session with no connected viewer for this long pauses itself.
    pub idle_pause_s: u64,
    pub port: u16,
    /// Render frames buffered per viewer before old ones are dropped.
    pub frame_buffer: usize,
}

impl Default for LiveSection {
    fn default() -> Self {
        Self {
            decision_interval_ms: 200,
            idle_pause_s: 30,
            port: 7667,
            frame_buffer: 64,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::parse(&text).map_err(|source| LabError::Config {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn env_config(&self) -> EnvConfig {
        match self.env {
            EnvId::CartPole => EnvConfig::CartPole(self.cartpole.clone()),
            EnvId::Nav => EnvConfig::Nav(self.nav.clone()),
        }
    }

    /// The configured advisor profile.
    pub fn profile(&self) -> Result<AdvisorProfile> {
        let a = &self.advisor;
        match (a.frequency, a.accuracy) {
            (Some(f), Some(acc)) => Ok(AdvisorProfile::new(a.profile.clone(), f, acc)?),
            (None, None) => Ok(AdvisorProfile::named(&a.profile)?),
            _ => Err(LabError::Invalid(
                "advisor needs both frequency and accuracy, or neither".into(),
            )),
        }
    }

    /// Seeds of a single run, honouring per-stream overrides.
    pub fn seed_set(&self) -> SeedSet {
        let s = &self.seeds;
        let d = SeedSet::from_base(s.base);
        SeedSet {
            env: s.env.unwrap_or(d.env),
            learner: s.learner.unwrap_or(d.learner),
            advisor: s.advisor.unwrap_or(d.advisor),
            ppr: s.ppr.unwrap_or(d.ppr),
        }
    }

    /// Seeds of campaign repeat `index`; shared by every mode and profile.
    pub fn repeat_seeds(&self, index: usize) -> SeedSet {
        SeedSet::from_base(mix_seed(self.seeds.base, 0x5EED_0000 + index as u64))
    }

    pub fn training_config(
        &self,
        mode: AgentMode,
        advisor: Option<AdvisorProfile>,
        seeds: SeedSet,
    ) -> TrainingConfig {
        TrainingConfig {
            env: self.env_config(),
            mode,
            advisor: if mode.uses_advisor() { advisor } else { None },
            hyper: self.hyperparams.clone(),
            ppr: self.ppr,
            seeds,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.campaign
            .threshold
            .unwrap_or(default_threshold(self.env))
    }
}

/// Moving-average level treated as "solved".
pub fn default_threshold(env: EnvId) -> f64 {
    match env {
        EnvId::CartPole => 195.0,
        EnvId::Nav => 800.0,
    }
}

/// `--out`, else `$BPA_OUT_DIR`, else `./runs`.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.hyperparams.episodes, 500);
        assert_eq!(c.profile().unwrap(), AdvisorProfile::realistic());
        assert_eq!(c.threshold(), 195.0);
    }

    #[test]
    fn sections_parse() {
        let c = ExperimentConfig::parse(
            r#"
            env = "nav"
            mode = "non_persistent"

            [nav]
            max_steps = 300
            obstacles = [{ x0 = 3.0, y0 = 3.0, x1 = 4.0, y1 = 4.0 }]

            [hyperparams]
            episodes = 20
            learning_rate = 0.005

            [advisor]
            profile = "custom"
            frequency = 0.3
            accuracy = 0.8

            [ppr]
            variant = "subtractive-per-retrieval"

            [clusters]
            k = 4

            [seeds]
            base = 9
            ppr = 1

            [campaign]
            modes = ["baseline", "persistent"]
            repeats = 2
            threshold = 500.0
            "#,
        )
        .unwrap();
        assert_eq!(c.env, EnvId::Nav);
        assert_eq!(c.mode, AgentMode::NonPersistent);
        assert_eq!(c.nav.max_steps, 300);
        assert_eq!(c.nav.obstacles.len(), 1);
        assert_eq!(c.nav.speed, 3.0);
        assert_eq!(c.hyperparams.episodes, 20);
        assert_eq!(c.hyperparams.gamma, 0.99);
        let p = c.profile().unwrap();
        assert_eq!(
            (p.name.as_str(), p.frequency, p.accuracy),
            ("custom", 0.3, 0.8)
        );
        assert_eq!(c.clusters.k, Some(4));
        assert_eq!(c.seed_set().ppr, 1);
        assert_eq!(c.seed_set().env, SeedSet::from_base(9).env);
        assert_eq!(c.campaign.repeats, 2);
        assert_eq!(c.threshold(), 500.0);
    }

    #[test]
    fn bad_names_are_rejected() {
        assert!(ExperimentConfig::parse("env = \"mujoco\"").is_err());
        assert!(ExperimentConfig::parse("mode = \"eager\"").is_err());
        assert!(ExperimentConfig::parse("[hyperparams]\nlr = 1.0").is_err());
        let c = ExperimentConfig::parse("[advisor]\nprofile = \"grumpy\"").unwrap();
        assert!(c.profile().is_err());
        let c = ExperimentConfig::parse("[advisor]\nfrequency = 0.5").unwrap();
        assert!(c.profile().is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ExperimentConfig::default();
        c.env = EnvId::Nav;
        c.clusters.k = Some(3);
        let back = ExperimentConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn repeat_seeds_are_shared_and_distinct() {
        let c = ExperimentConfig::default();
        assert_eq!(c.repeat_seeds(2), c.repeat_seeds(2));
        assert_ne!(c.repeat_seeds(0), c.repeat_seeds(1));
    }
}
