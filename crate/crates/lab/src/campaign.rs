//! Cluster preparation, single runs and multi-seed campaigns.
//!
//! Output layout under the campaign root:
//!
//! ```text
//! clusters/<env>/corpus.csv  sse.csv  elbow.txt  model.txt
//! runs/<env>-<mode>[-<profile>]-s<i>/run.json  metrics.jsonl  checkpoint.txt  store.json
//! ```
//!
//! A run directory only appears once all of its files are written (they are
//! staged in a hidden sibling and renamed), so an interrupted campaign resumes
//! by skipping the directories that exist.

use std::fs;
use std::path::{Path, PathBuf};

use bpa_core::advisor::AdvisorProfile;
use bpa_core::agent::{run_training, AgentMode, RunResult, TrainingConfig};
use bpa_core::env::EnvId;
use bpa_core::generalizer::{
    collect_states, elbow_k, fit_curve, fit_kmeans, ClusterModel, Elbow, SseCurve, StateCorpus,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::formats;

/// One planned training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub name: String,
    /// Runs sharing a key are repeats of one configuration.
    pub key: String,
    pub repeat: usize,
    pub training: TrainingConfig,
}

impl RunSpec {
    pub fn new(repeat: usize, training: TrainingConfig) -> Self {
        let key = config_key(training.env.id(), training.mode, training.advisor.as_ref());
        Self {
            name: format!("{key}-s{repeat}"),
            key,
            repeat,
            training,
        }
    }
}

pub fn config_key(env: EnvId, mode: AgentMode, profile: Option<&AdvisorProfile>) -> String {
    match profile.filter(|_| mode.uses_advisor()) {
        Some(p) => format!("{env}-{mode}-{}", p.name),
        None => format!("{env}-{mode}"),
    }
}

/// Baseline once per repeat, then every advised mode for every profile.
/// Repeat `i` uses the same seeds everywhere, which pairs the runs.
pub fn plan(config: &ExperimentConfig) -> Result<Vec<RunSpec>> {
    let c = &config.campaign;
    let profiles = c
        .profiles
        .iter()
        .map(|name| Ok(AdvisorProfile::named(name)?))
        .collect::<Result<Vec<_>>>()?;
    let mut specs = Vec::new();
    for repeat in 0..c.repeats {
        let seeds = config.repeat_seeds(repeat);
        for &mode in &c.modes {
            if mode.uses_advisor() {
                for p in &profiles {
                    specs.push(RunSpec::new(
                        repeat,
                        config.training_config(mode, Some(p.clone()), seeds),
                    ));
                }
            } else {
                specs.push(RunSpec::new(
                    repeat,
                    config.training_config(mode, None, seeds),
                ));
            }
        }
    }
    Ok(specs)
}

pub fn run_dir(root: &Path, name: &str) -> PathBuf {
    root.join("runs").join(name)
}

pub fn clusters_dir(root: &Path, env: EnvId) -> PathBuf {
    root.join("clusters").join(env.name())
}

/// Everything produced by fitting the state generalizer.
#[derive(Debug, Clone)]
pub struct ClusterFit {
    pub corpus: StateCorpus,
    pub curve: SseCurve,
    pub elbow: Elbow,
    /// Fitted with the configured k, or the elbow k when none is set.
    pub model: ClusterModel,
}

pub fn collect_corpus(config: &ExperimentConfig) -> Result<StateCorpus> {
    let c = &config.clusters;
    let mut env = config.env_config().build()?;
    Ok(collect_states(&mut env, c.corpus_size, c.seed, c.policy)?)
}

pub fn fit_clusters(config: &ExperimentConfig, corpus: StateCorpus) -> Result<ClusterFit> {
    let c = &config.clusters;
    if c.k_min == 0 || c.k_min > c.k_max {
        return Err(LabError::Invalid(format!(
            "bad cluster range {}..={}",
            c.k_min, c.k_max
        )));
    }
    let fit = fit_curve(&corpus, c.k_min..=c.k_max, c.seed, c.tol, c.max_iters)?;
    let elbow = elbow_k(&fit.curve)?;
    let model = match c.k {
        Some(k) => match fit.model_for(k) {
            Some(m) => m.clone(),
            None => fit_kmeans(&corpus, k, c.seed, c.tol, c.max_iters)?,
        },
        None => fit
            .model_for(elbow.k)
            .expect("elbow lies on the curve")
            .clone(),
    };
    Ok(ClusterFit {
        corpus,
        curve: fit.curve,
        elbow,
        model,
    })
}

pub fn write_cluster_fit(dir: &Path, fit: &ClusterFit) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    formats::write_corpus(&dir.join("corpus.csv"), &fit.corpus)?;
    formats::write_sse_curve(&dir.join("sse.csv"), &fit.curve)?;
    let elbow = format!(
        "k {}\nlow_confidence {}\n",
        fit.elbow.k, fit.elbow.low_confidence
    );
    fs::write(dir.join("elbow.txt"), elbow).map_err(|e| LabError::io(dir.join("elbow.txt"), e))?;
    formats::write_cluster_model(&dir.join("model.txt"), &fit.model)
}

/// The configured model file, else a previously fitted one under `root`,
/// else a fresh fit (written under `root`). `None` when no run needs one.
pub fn prepare_model(
    config: &ExperimentConfig,
    root: &Path,
    needed: bool,
) -> Result<Option<ClusterModel>> {
    if let Some(path) = &config.clusters.model {
        return formats::read_cluster_model(path).map(Some);
    }
    if !needed {
        return Ok(None);
    }
    let dir = clusters_dir(root, config.env);
    let cached = dir.join("model.txt");
    if cached.exists() {
        return formats::read_cluster_model(&cached).map(Some);
    }
    let fit = fit_clusters(config, collect_corpus(config)?)?;
    write_cluster_fit(&dir, &fit)?;
    Ok(Some(fit.model))
}

pub fn execute(spec: &RunSpec, model: Option<&ClusterModel>) -> Result<RunResult> {
    let model = model
        .filter(|_| spec.training.mode == AgentMode::Persistent)
        .cloned();
    Ok(run_training(&spec.training, model)?)
}

/// Writes a finished run; the directory appears atomically.
pub fn write_run(dir: &Path, spec: &RunSpec, result: &RunResult) -> Result<()> {
    let parent = dir.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("run");
    let stage = parent.join(format!(".{name}.partial"));
    if stage.exists() {
        fs::remove_dir_all(&stage).map_err(|e| LabError::io(&stage, e))?;
    }
    fs::create_dir_all(&stage).map_err(|e| LabError::io(&stage, e))?;
    write_json(&stage.join("run.json"), spec)?;
    formats::write_metrics(&stage.join("metrics.jsonl"), &result.episodes)?;
    formats::write_network(&stage.join("checkpoint.txt"), &result.network)?;
    write_json(&stage.join("store.json"), &result.store)?;
    fs::rename(&stage, dir).map_err(|e| LabError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

pub fn read_spec(dir: &Path) -> Result<RunSpec> {
    let path = dir.join("run.json");
    let text = fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CampaignOutcome {
    pub completed: Vec<String>,
    /// Already present from an earlier invocation.
    pub skipped: Vec<String>,
}

/// Runs every planned spec not yet on disk, `workers` at a time (0 = all cores).
pub fn run_campaign(
    config: &ExperimentConfig,
    root: &Path,
    progress: &(dyn Fn(&RunSpec, &RunResult) + Sync),
) -> Result<CampaignOutcome> {
    let specs = plan(config)?;
    let (done, todo): (Vec<_>, Vec<_>) = specs
        .into_iter()
        .partition(|s| run_dir(root, &s.name).exists());
    let needs_model = todo
        .iter()
        .any(|s| s.training.mode == AgentMode::Persistent);
    let model = prepare_model(config, root, needs_model)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.campaign.workers)
        .build()
        .map_err(|e| LabError::Invalid(e.to_string()))?;
    let completed = pool.install(|| {
        todo.par_iter()
            .map(|spec| {
                let result = execute(spec, model.as_ref())?;
                write_run(&run_dir(root, &spec.name), spec, &result)?;
                progress(spec, &result);
                Ok(spec.name.clone())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(CampaignOutcome {
        completed,
        skipped: done.into_iter().map(|s| s.name).collect(),
    })
}
