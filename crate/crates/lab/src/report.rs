//! Aggregation of finished runs into summary tables and plot-ready curves.
//!
//! * `summary.csv`: one row per configuration (key) with final moving
//!   average, episodes-to-threshold and interaction totals;
//! * `interactions.csv`: advised steps per configuration, `"40976 (47.15%)"`;
//! * `curves/<key>.csv`: per-episode mean/min/max of the moving average.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use bpa_core::agent::EpisodeMetrics;

use crate::campaign::{read_spec, RunSpec};
use crate::error::{LabError, Result};
use crate::formats;
use crate::stats::{band, episodes_to_threshold, format_interactions, moving_average};

pub const WINDOW: usize = 100;

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub spec: RunSpec,
    pub episodes: Vec<EpisodeMetrics>,
}

impl RunRecord {
    pub fn rewards(&self) -> Vec<f64> {
        self.episodes.iter().map(|m| m.reward).collect()
    }

    pub fn curve(&self) -> Vec<f64> {
        moving_average(&self.rewards(), WINDOW)
    }
}

/// Reads every completed run under `root/runs`, sorted by name.
pub fn load_runs(root: &Path) -> Result<Vec<RunRecord>> {
    let runs = root.join("runs");
    let entries = fs::read_dir(&runs).map_err(|e| LabError::io(&runs, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| LabError::io(&runs, e))?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if entry.path().is_dir() && !hidden {
            dirs.push(entry.path());
        }
    }
    dirs.sort();
    dirs.iter()
        .map(|d| {
            Ok(RunRecord {
                spec: read_spec(d)?,
                episodes: formats::read_metrics(&d.join("metrics.jsonl"))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSummary {
    pub key: String,
    pub runs: usize,
    pub episodes: usize,
    /// Mean over runs of the last moving-average value.
    pub final_ma: f64,
    pub final_ma_min: f64,
    pub final_ma_max: f64,
    pub to_threshold: Vec<Option<usize>>,
    pub steps: usize,
    pub advised: usize,
    pub reused: usize,
    pub random: usize,
    pub greedy: usize,
    pub band: Vec<(f64, f64, f64)>,
}

impl ConfigSummary {
    /// Mean episodes-to-threshold, a run that never converged counting as
    /// its full episode count.
    pub fn mean_to_threshold(&self) -> f64 {
        if self.to_threshold.is_empty() {
            return f64::NAN;
        }
        let total: usize = self
            .to_threshold
            .iter()
            .map(|t| t.unwrap_or(self.episodes))
            .sum();
        total as f64 / self.to_threshold.len() as f64
    }

    pub fn converged(&self) -> usize {
        self.to_threshold.iter().filter(|t| t.is_some()).count()
    }

    pub fn advised_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.advised as f64 / self.steps as f64
        }
    }
}

/// Groups runs by configuration key; keys come out sorted.
pub fn aggregate(runs: &[RunRecord], threshold: f64) -> Vec<ConfigSummary> {
    let mut groups: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in runs {
        groups.entry(&r.spec.key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(key, rs)| {
            let curves: Vec<Vec<f64>> = rs.iter().map(|r| r.curve()).collect();
            let finals: Vec<f64> = curves.iter().filter_map(|c| c.last().copied()).collect();
            let sum = |f: fn(&EpisodeMetrics) -> usize| -> usize {
                rs.iter().flat_map(|r| &r.episodes).map(f).sum()
            };
            ConfigSummary {
                key: key.to_string(),
                runs: rs.len(),
                episodes: curves.iter().map(Vec::len).max().unwrap_or(0),
                final_ma: finals.iter().sum::<f64>() / finals.len().max(1) as f64,
                final_ma_min: finals.iter().copied().fold(f64::INFINITY, f64::min),
                final_ma_max: finals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                to_threshold: curves
                    .iter()
                    .map(|c| episodes_to_threshold(c, threshold))
                    .collect(),
                steps: sum(|m| m.steps),
                advised: sum(|m| m.advised),
                reused: sum(|m| m.reused),
                random: sum(|m| m.random),
                greedy: sum(|m| m.greedy),
                band: band(&curves),
            }
        })
        .collect()
}

pub fn summary_csv(summaries: &[ConfigSummary]) -> String {
    let mut s = String::from(
        "config,runs,episodes,final_ma_mean,final_ma_min,final_ma_max,to_threshold_mean,converged,to_threshold,steps,advised,reused,random,greedy\n",
    );
    for c in summaries {
        let per_run: Vec<String> = c
            .to_threshold
            .iter()
            .map(|t| t.map_or_else(|| "-".to_string(), |v| v.to_string()))
            .collect();
        writeln!(
            s,
            "{},{},{},{:.3},{:.3},{:.3},{:.1},{},{},{},{},{},{},{}",
            c.key,
            c.runs,
            c.episodes,
            c.final_ma,
            c.final_ma_min,
            c.final_ma_max,
            c.mean_to_threshold(),
            c.converged(),
            per_run.join(" "),
            c.steps,
            c.advised,
            c.reused,
            c.random,
            c.greedy
        )
        .unwrap();
    }
    s
}

pub fn interactions_csv(summaries: &[ConfigSummary]) -> String {
    let mut s = String::from("config,advised,reused\n");
    for c in summaries {
        writeln!(
            s,
            "{},{},{}",
            c.key,
            format_interactions(c.advised, c.steps),
            format_interactions(c.reused, c.steps)
        )
        .unwrap();
    }
    s
}

pub fn curve_csv(summary: &ConfigSummary) -> String {
    let mut s = String::from("episode,ma_mean,ma_min,ma_max\n");
    for (e, (mean, min, max)) in summary.band.iter().enumerate() {
        writeln!(s, "{e},{mean},{min},{max}").unwrap();
    }
    s
}

/// Writes the report files into `dir`.
pub fn write_report(dir: &Path, summaries: &[ConfigSummary]) -> Result<()> {
    let curves = dir.join("curves");
    fs::create_dir_all(&curves).map_err(|e| LabError::io(&curves, e))?;
    let put = |path: &Path, text: String| fs::write(path, text).map_err(|e| LabError::io(path, e));
    put(&dir.join("summary.csv"), summary_csv(summaries))?;
    put(&dir.join("interactions.csv"), interactions_csv(summaries))?;
    for c in summaries {
        put(&curves.join(format!("{}.csv", c.key)), curve_csv(c))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;
    use bpa_core::agent::AgentMode;

    fn record(key_mode: AgentMode, repeat: usize, rewards: &[f64], advised: usize) -> RunRecord {
        let cfg = ExperimentConfig::default();
        let spec = RunSpec::new(
            repeat,
            cfg.training_config(
                key_mode,
                Some(cfg.profile().unwrap()),
                cfg.repeat_seeds(repeat),
            ),
        );
        let episodes = rewards
            .iter()
            .enumerate()
            .map(|(i, r)| EpisodeMetrics {
                episode: i,
                reward: *r,
                steps: 10,
                advised,
                reused: 1,
                random: 10 - advised - 1,
                greedy: 0,
                epsilon: 1.0,
                terminal: true,
                mean_loss: None,
                store_size: 0,
            })
            .collect();
        RunRecord { spec, episodes }
    }

    #[test]
    fn totals_equal_sum_of_records() {
        let runs = vec![
            record(AgentMode::Persistent, 0, &[0.0, 200.0, 200.0], 4),
            record(AgentMode::Persistent, 1, &[0.0, 0.0, 0.0], 5),
            record(AgentMode::Baseline, 0, &[1.0, 2.0], 0),
        ];
        let s = aggregate(&runs, 100.0);
        assert_eq!(s.len(), 2);
        let (base, pers) = (&s[0], &s[1]);
        assert_eq!(base.key, "cartpole-baseline");
        assert_eq!(pers.key, "cartpole-persistent-realistic");
        assert_eq!(pers.steps, 60);
        assert_eq!(pers.advised, 3 * 4 + 3 * 5);
        assert_eq!(pers.reused, 6);
        assert_eq!(pers.to_threshold, vec![Some(1), None]);
        assert_eq!(pers.mean_to_threshold(), 2.0);
        assert!((pers.final_ma - (400.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(pers.band[1], (50.0, 0.0, 100.0));
        assert_eq!(base.advised, 0);

        let table = interactions_csv(&s);
        assert!(table.contains("cartpole-persistent-realistic,27 (45.00%),6 (10.00%)"));
        assert!(summary_csv(&s).lines().nth(2).unwrap().contains(",1 -,"));
        assert_eq!(
            curve_csv(base),
            "episode,ma_mean,ma_min,ma_max\n0,1,1,1\n1,1.5,1.5,1.5\n"
        );
    }
}
