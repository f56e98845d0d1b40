//! On-disk artifacts.
//!
//! * corpus: CSV, header `f0,f1,...`, one observation per row;
//! * cluster model: line-oriented text (`bpa-clusters v1`);
//! * SSE curve: CSV `k,sse`;
//! * Q-network checkpoint: line-oriented text (`bpa-qnet v1`);
//! * episode metrics: JSON lines, one object per episode.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so every
//! artifact reloads bit-for-bit.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use bpa_core::agent::EpisodeMetrics;
use bpa_core::generalizer::{ClusterModel, Normalization, SseCurve, StateCorpus};
use bpa_core::learner::{Dense, QNetwork};

use crate::error::{LabError, Result};

const MODEL_MAGIC: &str = "bpa-clusters v1";
const NET_MAGIC: &str = "bpa-qnet v1";

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| LabError::io(path, e))
}

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

/// Cursor over non-empty lines with error positions.
struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Self {
            path,
            inner: text.lines().enumerate().peekable(),
            line: 0,
        }
    }

    fn err(&self, message: impl Into<String>) -> LabError {
        LabError::Format {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        for (i, l) in self.inner.by_ref() {
            self.line = i + 1;
            let l = l.trim();
            if !l.is_empty() && !l.starts_with('#') {
                return Ok(l);
            }
        }
        Err(self.err("unexpected end of file"))
    }

    /// Next line, which must start with `key`; returns the remainder.
    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next()?;
        match l.split_once(char::is_whitespace) {
            Some((k, rest)) if k == key => Ok(rest.trim()),
            _ if l == key => Ok(""),
            _ => Err(self.err(format!("expected `{key}`"))),
        }
    }

    fn numbers(&self, s: &str, expected: usize) -> Result<Vec<f64>> {
        let v: Vec<f64> = s
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| self.err(format!("bad number `{t}`")))
            })
            .collect::<Result<_>>()?;
        if v.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", v.len())));
        }
        Ok(v)
    }

    fn keyed_numbers(&mut self, key: &str, expected: usize) -> Result<Vec<f64>> {
        let rest = self.keyed(key)?;
        self.numbers(rest, expected)
    }

    fn keyed_count(&mut self, key: &str) -> Result<usize> {
        let rest = self.keyed(key)?;
        self.count(rest)
    }

    fn count(&self, s: &str) -> Result<usize> {
        s.parse().map_err(|_| self.err(format!("bad count `{s}`")))
    }
}

pub fn write_corpus(path: &Path, corpus: &StateCorpus) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record((0..corpus.dim()).map(|i| format!("f{i}")))?;
    for p in corpus.points() {
        w.write_record(p.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<StateCorpus> {
    let mut r = csv::Reader::from_path(path)?;
    let mut points = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|t| {
                t.trim().parse::<f64>().map_err(|_| LabError::Format {
                    path: path.to_path_buf(),
                    line: i + 2,
                    message: format!("bad number `{t}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        points.push(row);
    }
    Ok(StateCorpus::from_points(&points)?)
}

pub fn cluster_model_to_string(model: &ClusterModel) -> String {
    let mut s = String::new();
    writeln!(s, "{MODEL_MAGIC}").unwrap();
    writeln!(s, "k {}", model.k()).unwrap();
    writeln!(s, "dim {}", model.dim()).unwrap();
    writeln!(s, "sse {}", model.sse).unwrap();
    writeln!(s, "mean {}", join(&model.normalization.mean)).unwrap();
    writeln!(s, "std {}", join(&model.normalization.std)).unwrap();
    for c in &model.centroids {
        writeln!(s, "centroid {}", join(c)).unwrap();
    }
    s
}

pub fn write_cluster_model(path: &Path, model: &ClusterModel) -> Result<()> {
    write_text(path, &cluster_model_to_string(model))
}

pub fn parse_cluster_model(path: &Path, text: &str) -> Result<ClusterModel> {
    let mut lines = Lines::new(path, text);
    if lines.next()? != MODEL_MAGIC {
        return Err(lines.err(format!("missing `{MODEL_MAGIC}` header")));
    }
    let k = lines.keyed_count("k")?;
    let dim = lines.keyed_count("dim")?;
    let sse = lines.keyed_numbers("sse", 1)?[0];
    let mean = lines.keyed_numbers("mean", dim)?;
    let std = lines.keyed_numbers("std", dim)?;
    let centroids = (0..k)
        .map(|_| lines.keyed_numbers("centroid", dim))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterModel::new(
        centroids,
        Normalization { mean, std },
        sse,
    )?)
}

pub fn read_cluster_model(path: &Path) -> Result<ClusterModel> {
    parse_cluster_model(path, &read_text(path)?)
}

pub fn write_sse_curve(path: &Path, curve: &SseCurve) -> Result<()> {
    let mut s = String::from("k,sse\n");
    for (k, sse) in &curve.points {
        writeln!(s, "{k},{sse}").unwrap();
    }
    write_text(path, &s)
}

pub fn read_sse_curve(path: &Path) -> Result<SseCurve> {
    let mut r = csv::Reader::from_path(path)?;
    let points = r
        .deserialize::<(usize, f64)>()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SseCurve { points })
}

/// Header with the layer sizes, then per layer one line per weight row
/// (row-major, `outputs` rows of `inputs` values) followed by the bias line.
pub fn network_to_string(net: &QNetwork) -> String {
    let mut s = String::new();
    writeln!(s, "{NET_MAGIC}").unwrap();
    let sizes: Vec<String> = net.sizes().iter().map(|v| v.to_string()).collect();
    writeln!(s, "sizes {}", sizes.join(" ")).unwrap();
    for (i, layer) in net.layers().iter().enumerate() {
        writeln!(s, "# layer {i}: {} x {}", layer.outputs, layer.inputs).unwrap();
        for row in layer.weights.chunks_exact(layer.inputs) {
            writeln!(s, "w {}", join(row)).unwrap();
        }
        writeln!(s, "b {}", join(&layer.bias)).unwrap();
    }
    s
}

pub fn write_network(path: &Path, net: &QNetwork) -> Result<()> {
    write_text(path, &network_to_string(net))
}

pub fn parse_network(path: &Path, text: &str) -> Result<QNetwork> {
    let mut lines = Lines::new(path, text);
    if lines.next()? != NET_MAGIC {
        return Err(lines.err(format!("missing `{NET_MAGIC}` header")));
    }
    let sizes = lines
        .keyed("sizes")?
        .split_whitespace()
        .map(|t| lines.count(t))
        .collect::<Result<Vec<_>>>()?;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(lines.err("need at least two positive layer sizes"));
    }
    let mut layers = Vec::new();
    for w in sizes.windows(2) {
        let (inputs, outputs) = (w[0], w[1]);
        let mut layer = Dense::zeros(inputs, outputs);
        layer.weights.clear();
        for _ in 0..outputs {
            layer.weights.extend(lines.keyed_numbers("w", inputs)?);
        }
        layer.bias = lines.keyed_numbers("b", outputs)?;
        layers.push(layer);
    }
    Ok(QNetwork::from_layers(layers)?)
}

pub fn read_network(path: &Path) -> Result<QNetwork> {
    parse_network(path, &read_text(path)?)
}

pub fn metrics_to_jsonl(episodes: &[EpisodeMetrics]) -> String {
    let mut s = String::new();
    for m in episodes {
        s.push_str(&serde_json::to_string(m).expect("metrics serialize"));
        s.push('\n');
    }
    s
}

pub fn write_metrics(path: &Path, episodes: &[EpisodeMetrics]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(metrics_to_jsonl(episodes).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| LabError::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpisodeMetrics>> {
    read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LabError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
