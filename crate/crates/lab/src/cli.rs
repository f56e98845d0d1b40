//! Command-line interface of the `bpa` binary.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use bpa_core::agent::AgentMode;
use bpa_core::env::EnvId;
use bpa_core::generalizer::CollectPolicy;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::campaign::{self, clusters_dir, run_dir, RunSpec};
use crate::config::{resolve_out_dir, ExperimentConfig, OUT_DIR_ENV};
use crate::formats;
use crate::report;
use crate::service::{self, SessionManager};
use crate::stats::format_interactions;

#[derive(Debug, Parser)]
#[command(name = "bpa", version, about = "Broad-persistent advising experiments")]
pub struct Cli {
    /// Base seed for every random stream (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Policy {
    Random,
    Oracle,
}

impl From<Policy> for CollectPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Random => CollectPolicy::Random,
            Policy::Oracle => CollectPolicy::Oracle,
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// Environment: cartpole or nav.
    #[arg(long)]
    pub env: Option<EnvId>,
    /// Episodes per run.
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record observations for clustering.
    CollectStates {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, value_enum)]
        policy: Option<Policy>,
        /// Defaults to <out>/clusters/<env>/corpus.csv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit k-means over a range of k, pick the elbow and save the model.
    FitClusters {
        #[command(flatten)]
        common: Common,
        /// Existing corpus; collected afresh when absent.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        /// Use this k instead of the elbow.
        #[arg(long)]
        k: Option<usize>,
    },
    /// One training run.
    Train {
        #[command(flatten)]
        common: Common,
        /// baseline, non_persistent or persistent.
        #[arg(long)]
        mode: Option<AgentMode>,
        /// optimistic, realistic or pessimistic.
        #[arg(long)]
        profile: Option<String>,
        /// Cluster model for persistent mode.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Every mode and profile over several seeds; resumes partial campaigns.
    Campaign {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Aggregate finished runs into tables and curve files.
    Report {
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Start the live advising service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
}

impl Common {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(env) = self.env {
            cfg.env = env;
        }
        if let Some(n) = self.episodes {
            cfg.hyperparams.episodes = n;
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds.base = seed;
        cfg.clusters.seed = seed;
    }
    let out = resolve_out_dir(cli.out);

    match cli.command {
        Command::CollectStates {
            common,
            count,
            policy,
            output,
        } => {
            common.apply(&mut cfg);
            if let Some(n) = count {
                cfg.clusters.corpus_size = n;
            }
            if let Some(p) = policy {
                cfg.clusters.policy = p.into();
            }
            let corpus = campaign::collect_corpus(&cfg)?;
            let path = output.unwrap_or_else(|| clusters_dir(&out, cfg.env).join("corpus.csv"));
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
            }
            formats::write_corpus(&path, &corpus)?;
            println!("{} states -> {}", corpus.len(), path.display());
        }
        Command::FitClusters {
            common,
            corpus,
            k_min,
            k_max,
            k,
        } => {
            common.apply(&mut cfg);
            let c = &mut cfg.clusters;
            c.k_min = k_min.unwrap_or(c.k_min);
            c.k_max = k_max.unwrap_or(c.k_max);
            c.k = k.or(c.k);
            let corpus = match corpus {
                Some(path) => formats::read_corpus(&path)?,
                None => campaign::collect_corpus(&cfg)?,
            };
            let fit = campaign::fit_clusters(&cfg, corpus)?;
            let dir = clusters_dir(&out, cfg.env);
            campaign::write_cluster_fit(&dir, &fit)?;
            for (k, sse) in &fit.curve.points {
                println!("k={k:<2} sse={sse:.3}");
            }
            let note = if fit.elbow.low_confidence {
                " (low confidence)"
            } else {
                ""
            };
            println!(
                "elbow k={}{note}; model k={} -> {}",
                fit.elbow.k,
                fit.model.k(),
                dir.display()
            );
        }
        Command::Train {
            common,
            mode,
            profile,
            model,
        } => {
            common.apply(&mut cfg);
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(p) = profile {
                cfg.advisor.profile = p;
                cfg.advisor.frequency = None;
                cfg.advisor.accuracy = None;
            }
            if model.is_some() {
                cfg.clusters.model = model;
            }
            let advisor = if cfg.mode.uses_advisor() {
                Some(cfg.profile()?)
            } else {
                None
            };
            let spec = RunSpec::new(0, cfg.training_config(cfg.mode, advisor, cfg.seed_set()));
            let model = campaign::prepare_model(&cfg, &out, cfg.mode == AgentMode::Persistent)?;
            let result = campaign::execute(&spec, model.as_ref())?;
            let dir = run_dir(&out, &spec.name);
            if dir.exists() {
                std::fs::remove_dir_all(&dir)
                    .with_context(|| format!("replacing {}", dir.display()))?;
            }
            campaign::write_run(&dir, &spec, &result)?;
            let steps: usize = result.episodes.iter().map(|m| m.steps).sum();
            let advised: usize = result.episodes.iter().map(|m| m.advised).sum();
            let ma = crate::stats::moving_average(
                &result.episodes.iter().map(|m| m.reward).collect::<Vec<_>>(),
                report::WINDOW,
            );
            println!(
                "{}: {} episodes, final moving average {:.2}, advised {} -> {}",
                spec.name,
                result.episodes.len(),
                ma.last().copied().unwrap_or(f64::NAN),
                format_interactions(advised, steps),
                dir.display()
            );
        }
        Command::Campaign {
            common,
            repeats,
            workers,
        } => {
            common.apply(&mut cfg);
            if let Some(r) = repeats {
                cfg.campaign.repeats = r;
            }
            if let Some(w) = workers {
                cfg.campaign.workers = w;
            }
            let outcome = campaign::run_campaign(&cfg, &out, &|spec, result| {
                let last = result.episodes.last().map_or(f64::NAN, |m| m.reward);
                eprintln!("done {} (last episode reward {last})", spec.name);
            })?;
            println!(
                "{} runs completed, {} already present under {}",
                outcome.completed.len(),
                outcome.skipped.len(),
                out.display()
            );
            write_report(&cfg, &out, None)?;
        }
        Command::Report { threshold } => write_report(&cfg, &out, threshold)?,
        Command::Serve { port } => {
            let port = port.unwrap_or(cfg.live.port);
            let manager = Arc::new(SessionManager::new(cfg, out));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let listener = service::bind(port)
                    .await
                    .with_context(|| format!("binding port {port}"))?;
                eprintln!("listening on {}", listener.local_addr()?);
                service::serve(manager, listener).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

fn write_report(
    cfg: &ExperimentConfig,
    out: &std::path::Path,
    threshold: Option<f64>,
) -> anyhow::Result<()> {
    let runs = report::load_runs(out)?;
    if runs.is_empty() {
        bail!("no finished runs under {}", out.display());
    }
    let env = runs[0].spec.training.env.id();
    let threshold = threshold
        .or(cfg.campaign.threshold)
        .unwrap_or(crate::config::default_threshold(env));
    let summaries = report::aggregate(&runs, threshold);
    let dir = out.join("report");
    report::write_report(&dir, &summaries)?;
    println!(
        "{:<40} {:>5} {:>10} {:>10} {:>18}",
        "config", "runs", "final MA", "to thresh", "advised"
    );
    for s in &summaries {
        println!(
            "{:<40} {:>5} {:>10.2} {:>10.1} {:>18}",
            s.key,
            s.runs,
            s.final_ma,
            s.mean_to_threshold(),
            format_interactions(s.advised, s.steps)
        );
    }
    println!("report -> {}", dir.display());
    Ok(())
}
