//! State generalization: z-scored k-means over observations, and choice of
//! k by the elbow of the SSE curve.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::env::{Env, Environment, Observation};
use crate::rng::{mix_seed, StreamRng};
use crate::{Error, Result};

const RESTARTS: u64 = 5;

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population statistics of `data` (flat, `dim` columns). Constant
    /// features get a unit scale.
    pub fn fit(data: &[f64], dim: usize) -> Self {
        let n = (data.len() / dim).max(1) as f64;
        let mut mean = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x / n);
        }
        let mut var = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = libm::sqrt(v);
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Observations used to fit the generalization model.
#[derive(Debug, Clone, PartialEq)]
pub struct StateCorpus {
    dim: usize,
    data: Vec<f64>,
    normalization: Normalization,
}

impl StateCorpus {
    /// Builds a corpus and fits its normalization statistics.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(0);
        if dim == 0 {
            return Err(Error::Config(
                "corpus needs at least one non-empty observation".into(),
            ));
        }
        let mut data = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            data.extend_from_slice(p);
        }
        let normalization = Normalization::fit(&data, dim);
        Ok(Self {
            dim,
            data,
            normalization,
        })
    }

    /// Replaces the normalization statistics.
    pub fn with_normalization(mut self, normalization: Normalization) -> Result<Self> {
        if normalization.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: normalization.dim(),
            });
        }
        self.normalization = normalization;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    fn normalized(&self) -> Vec<f64> {
        self.points()
            .flat_map(|p| self.normalization.apply(p))
            .collect()
    }
}

/// Behaviour policy used while collecting states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectPolicy {
    #[default]
    Random,
    Oracle,
}

/// Records every observation (including resets) of a behaviour policy until
/// `n` are collected.
pub fn collect_states(
    env: &mut Env,
    n: usize,
    seed: u64,
    policy: CollectPolicy,
) -> Result<StateCorpus> {
    if n == 0 {
        return Err(Error::Config("cannot collect an empty corpus".into()));
    }
    let mut rng = StreamRng::seed_from_u64(seed);
    let actions = env.action_count();
    let mut points = Vec::with_capacity(n);
    let mut obs = env.reset(rng.random());
    while points.len() < n {
        points.push(obs.values().to_vec());
        let action = match policy {
            CollectPolicy::Random => rng.random_range(0..actions),
            CollectPolicy::Oracle => env.oracle_action(&obs)?.index,
        };
        let out = env.step(action)?;
        obs = if out.is_done() {
            env.reset(rng.random())
        } else {
            out.next_obs
        };
    }
    StateCorpus::from_points(&points)
}

/// Fitted k-means model in normalized feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    pub normalization: Normalization,
    pub sse: f64,
}

impl ClusterModel {
    pub fn new(centroids: Vec<Vec<f64>>, normalization: Normalization, sse: f64) -> Result<Self> {
        let dim = normalization.dim();
        if centroids.is_empty() {
            return Err(Error::Config(
                "cluster model needs at least one centroid".into(),
            ));
        }
        if let Some(c) = centroids.iter().find(|c| c.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: c.len(),
            });
        }
        Ok(Self {
            centroids,
            normalization,
            sse,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.normalization.dim()
    }

    /// Nearest centroid to a raw (unnormalized) feature vector; ties go to
    /// the lowest index.
    pub fn assign(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(nearest(&self.normalization.apply(x), &self.centroids).0)
    }

    pub fn assign_obs(&self, obs: &Observation) -> Result<usize> {
        self.assign(obs.values())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, sq_dist(x, &centroids[0]));
    for (i, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding over flat normalized data.
fn seed_plus_plus(z: &[f64], dim: usize, k: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let n = z.len() / dim;
    let point = |i: usize| &z[i * dim..(i + 1) * dim];
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(point(i), point(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                if *d > 0.0 {
                    pick = Some(i);
                    if r < *d {
                        break;
                    }
                    r -= d;
                }
            }
            pick.unwrap()
        } else {
            // Every remaining point coincides with a centre.
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), point(next)));
        }
    }
    chosen.into_iter().map(|i| point(i).to_vec()).collect()
}

struct Lloyd {
    centroids: Vec<Vec<f64>>,
    sse: f64,
    /// SSE of the initial assignment followed by one value per iteration.
    trace: Vec<f64>,
}

fn assign_all(
    z: &[f64],
    dim: usize,
    centroids: &[Vec<f64>],
    labels: &mut [usize],
    dists: &mut [f64],
) -> f64 {
    let mut sse = 0.0;
    for (i, x) in z.chunks_exact(dim).enumerate() {
        let (c, d) = nearest(x, centroids);
        labels[i] = c;
        dists[i] = d;
        sse += d;
    }
    sse
}

fn lloyd(z: &[f64], dim: usize, mut centroids: Vec<Vec<f64>>, tol: f64, max_iters: usize) -> Lloyd {
    let n = z.len() / dim;
    let k = centroids.len();
    let mut labels = vec![0; n];
    let mut dists = vec![0.0; n];
    let mut sse = assign_all(z, dim, &centroids, &mut labels, &mut dists);
    let mut trace = vec![sse];
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &c) in z.chunks_exact(dim).zip(&labels) {
            counts[c] += 1;
            sums[c].iter_mut().zip(x).for_each(|(s, v)| *s += v);
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let next = if counts[c] > 0 {
                sums[c]
                    .iter()
                    .map(|s| s / counts[c] as f64)
                    .collect::<Vec<_>>()
            } else {
                // Empty cluster: restart it on the worst-served point.
                let far = (0..n).fold(0, |best, i| if dists[i] > dists[best] { i } else { best });
                dists[far] = 0.0;
                z[far * dim..(far + 1) * dim].to_vec()
            };
            shift = shift.max(libm::sqrt(sq_dist(&next, &centroids[c])));
            centroids[c] = next;
        }
        sse = assign_all(z, dim, &centroids, &mut labels, &mut dists);
        trace.push(sse);
        if shift < tol {
            break;
        }
    }
    Lloyd {
        centroids,
        sse,
        trace,
    }
}

fn check_k(corpus: &StateCorpus, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k > corpus.len() {
        return Err(Error::TooFewPoints {
            k,
            points: corpus.len(),
        });
    }
    Ok(())
}

/// Lloyd's algorithm from a k-means++ seeding; also returns the SSE trace
/// (seeding first, then once per iteration).
pub fn fit_kmeans_traced(
    corpus: &StateCorpus,
    k: usize,
    seed: u64,
    tol: f64,
    max_iters: usize,
) -> Result<(ClusterModel, Vec<f64>)> {
    check_k(corpus, k)?;
    let z = corpus.normalized();
    let mut rng = StreamRng::seed_from_u64(seed);
    let init = seed_plus_plus(&z, corpus.dim(), k, &mut rng);
    let fit = lloyd(&z, corpus.dim(), init, tol, max_iters);
    let model = ClusterModel::new(fit.centroids, corpus.normalization().clone(), fit.sse)?;
    Ok((model, fit.trace))
}

pub fn fit_kmeans(
    corpus: &StateCorpus,
    k: usize,
    seed: u64,
    tol: f64,
    max_iters: usize,
) -> Result<ClusterModel> {
    fit_kmeans_traced(corpus, k, seed, tol, max_iters).map(|(m, _)| m)
}

/// Best-of-restarts SSE for each k in a contiguous range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SseCurve {
    pub points: Vec<(usize, f64)>,
}

/// The SSE curve and the best model found for each k.
#[derive(Debug, Clone)]
pub struct CurveFit {
    pub curve: SseCurve,
    pub models: Vec<ClusterModel>,
}

impl CurveFit {
    pub fn model_for(&self, k: usize) -> Option<&ClusterModel> {
        self.models.iter().find(|m| m.k() == k)
    }
}

pub fn sse_curve(corpus: &StateCorpus, ks: RangeInclusive<usize>, seed: u64) -> Result<SseCurve> {
    fit_curve(corpus, ks, seed, 1e-6, 300).map(|f| f.curve)
}

/// Fits every k in `ks` with five k-means++ restarts. From the second k on,
/// the previous best solution extended by its worst-served point is refined
/// as an extra candidate, which keeps the curve non-increasing.
pub fn fit_curve(
    corpus: &StateCorpus,
    ks: RangeInclusive<usize>,
    seed: u64,
    tol: f64,
    max_iters: usize,
) -> Result<CurveFit> {
    if ks.is_empty() {
        return Err(Error::Config("empty k range".into()));
    }
    check_k(corpus, *ks.end())?;
    check_k(corpus, *ks.start())?;
    let dim = corpus.dim();
    let z = corpus.normalized();
    let mut models: Vec<ClusterModel> = Vec::new();
    let mut points = Vec::new();
    for k in ks {
        let mut best: Option<Lloyd> = None;
        let mut consider = |fit: Lloyd| {
            if best.as_ref().is_none_or(|b| fit.sse < b.sse) {
                best = Some(fit);
            }
        };
        for r in 0..RESTARTS {
            let mut rng = StreamRng::seed_from_u64(mix_seed(seed, (k as u64) << 8 | r));
            consider(lloyd(
                &z,
                dim,
                seed_plus_plus(&z, dim, k, &mut rng),
                tol,
                max_iters,
            ));
        }
        if let Some(prev) = models.last().filter(|m| m.k() + 1 == k) {
            let mut init = prev.centroids.clone();
            let far = z
                .chunks_exact(dim)
                .map(|x| nearest(x, &init).1)
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |b, (i, d)| if d > b.1 { (i, d) } else { b },
                )
                .0;
            init.push(z[far * dim..(far + 1) * dim].to_vec());
            consider(lloyd(&z, dim, init, tol, max_iters));
        }
        let best = best.unwrap();
        points.push((k, best.sse));
        models.push(ClusterModel::new(
            best.centroids,
            corpus.normalization().clone(),
            best.sse,
        )?);
    }
    Ok(CurveFit {
        curve: SseCurve { points },
        models,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Elbow {
    pub k: usize,
    /// The curve has no discernible bend.
    pub low_confidence: bool,
}

/// Picks the k whose point lies farthest from the chord joining the curve's
/// endpoints, with both axes min-max scaled to [0, 1].
pub fn elbow_k(curve: &SseCurve) -> Result<Elbow> {
    let pts = &curve.points;
    if pts.len() < 3 {
        return Err(Error::Config(
            "elbow detection needs at least three points".into(),
        ));
    }
    let smallest = pts.iter().map(|p| p.0).min().unwrap();
    let (k0, k1) = (pts[0].0 as f64, pts[pts.len() - 1].0 as f64);
    let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-12 * hi.abs().max(1.0)) || k1 == k0 {
        return Ok(Elbow {
            k: smallest,
            low_confidence: true,
        });
    }
    let scaled: Vec<(f64, f64)> = pts
        .iter()
        .map(|&(k, s)| ((k as f64 - k0) / (k1 - k0), (s - lo) / (hi - lo)))
        .collect();
    let (ax, ay) = scaled[0];
    let (bx, by) = scaled[scaled.len() - 1];
    let len = libm::sqrt((bx - ax) * (bx - ax) + (by - ay) * (by - ay));
    let mut best = (pts[0].0, 0.0);
    for (&(k, _), &(x, y)) in pts.iter().zip(&scaled) {
        let d = ((bx - ax) * (ay - y) - (ax - x) * (by - ay)).abs() / len;
        if d > best.1 || (d == best.1 && k < best.0) {
            best = (k, d);
        }
    }
    if best.1 < 1e-6 {
        return Ok(Elbow {
            k: smallest,
            low_confidence: true,
        });
    }
    Ok(Elbow {
        k: best.0,
        low_confidence: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::env::EnvId;

    fn blobs(centres: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = StreamRng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for c in centres {
            for _ in 0..per {
                pts.push(vec![
                    c[0] + rng.random_range(-spread..spread),
                    c[1] + rng.random_range(-spread..spread),
                ]);
            }
        }
        pts
    }

    fn identity_corpus(points: &[Vec<f64>]) -> StateCorpus {
        let dim = points[0].len();
        StateCorpus::from_points(points)
            .unwrap()
            .with_normalization(Normalization::identity(dim))
            .unwrap()
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = blobs(&[[1.0, -2.0], [4.0, 3.0]], 50, 1.0, 0);
        let corpus = StateCorpus::from_points(&pts).unwrap();
        let m = fit_kmeans(&corpus, 1, 3, 1e-6, 300).unwrap();
        // z-scored data has zero mean and unit variance per feature.
        assert!(m.centroids[0].iter().all(|c| c.abs() < 1e-12));
        assert!((m.sse - 2.0 * corpus.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn two_blobs_are_recovered() {
        let pts = blobs(&[[-5.0, 0.0], [5.0, 0.0]], 200, 0.5, 1);
        let corpus = identity_corpus(&pts);
        let m = fit_kmeans(&corpus, 2, 0, 1e-6, 300).unwrap();
        let mut cs = m.centroids.clone();
        cs.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert!((cs[0][0] + 5.0).abs() < 0.1 && cs[0][1].abs() < 0.1);
        assert!((cs[1][0] - 5.0).abs() < 0.1 && cs[1][1].abs() < 0.1);
    }

    #[test]
    fn k_equal_to_n_has_zero_sse() {
        let pts = blobs(&[[0.0, 0.0]], 12, 3.0, 2);
        let corpus = StateCorpus::from_points(&pts).unwrap();
        let m = fit_kmeans(&corpus, 12, 5, 1e-6, 300).unwrap();
        assert_eq!(m.sse, 0.0);
        assert_eq!(
            fit_kmeans(&corpus, 13, 5, 1e-6, 300),
            Err(Error::TooFewPoints { k: 13, points: 12 })
        );
    }

    #[test]
    fn lloyd_never_increases_sse() {
        for seed in 0..10 {
            let pts = blobs(
                &[[0.0, 0.0], [3.0, 1.0], [1.0, 4.0], [5.0, 5.0]],
                60,
                2.0,
                seed,
            );
            let corpus = StateCorpus::from_points(&pts).unwrap();
            let (_, trace) = fit_kmeans_traced(&corpus, 5, seed, 1e-9, 300).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{trace:?}");
            }
        }
    }

    #[test]
    fn empty_clusters_are_reseeded() {
        // Far-away init leaves two centroids without points.
        let pts = blobs(&[[0.0, 0.0], [1.0, 1.0]], 20, 0.2, 4);
        let z: Vec<f64> = pts.iter().flatten().copied().collect();
        let init = vec![vec![0.0, 0.0], vec![100.0, 100.0], vec![-100.0, 100.0]];
        let fit = lloyd(&z, 2, init, 1e-9, 100);
        assert!(fit
            .centroids
            .iter()
            .all(|c| c[0].abs() < 2.0 && c[1].abs() < 2.0));
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn assign_matches_brute_force() {
        let pts = blobs(&[[0.0, 0.0], [3.0, 3.0], [6.0, 0.0]], 300, 2.0, 7);
        let corpus = StateCorpus::from_points(&pts).unwrap();
        let m = fit_kmeans(&corpus, 4, 1, 1e-6, 300).unwrap();
        let mut rng = StreamRng::seed_from_u64(8);
        for _ in 0..1000 {
            let x = [rng.random_range(-3.0..9.0), rng.random_range(-3.0..6.0)];
            let z = m.normalization.apply(&x);
            let mut best = (0, f64::INFINITY);
            for (i, c) in m.centroids.iter().enumerate() {
                let d: f64 = c.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.1 {
                    best = (i, d);
                }
            }
            assert_eq!(m.assign(&x).unwrap(), best.0);
        }
    }

    #[test]
    fn assign_ties_and_exact_hits() {
        let m = ClusterModel::new(
            vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![5.0, 5.0]],
            Normalization::identity(2),
            0.0,
        )
        .unwrap();
        assert_eq!(m.assign(&[5.0, 5.0]).unwrap(), 2);
        assert_eq!(m.assign(&[1.0, 0.0]).unwrap(), 0);
        assert!(m.assign(&[1.0]).is_err());
    }

    #[test]
    fn normalization_is_idempotent() {
        let pts = blobs(&[[10.0, 0.1], [20.0, 0.3]], 100, 1.0, 9);
        let raw = StateCorpus::from_points(&pts).unwrap();
        let zs: Vec<Vec<f64>> = raw.points().map(|p| raw.normalization().apply(p)).collect();
        let pre = identity_corpus(&zs);
        let a = fit_kmeans(&raw, 3, 2, 1e-6, 300).unwrap();
        let b = fit_kmeans(&pre, 3, 2, 1e-6, 300).unwrap();
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn three_blobs_elbow_at_three() {
        let pts = blobs(&[[0.0, 0.0], [10.0, 0.0], [5.0, 8.0]], 200, 1.0, 10);
        let corpus = StateCorpus::from_points(&pts).unwrap();
        let curve = sse_curve(&corpus, 1..=9, 0).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-9);
        }
        assert_eq!(
            elbow_k(&curve).unwrap(),
            Elbow {
                k: 3,
                low_confidence: false
            }
        );
    }

    #[test]
    fn linear_and_flat_curves_are_low_confidence() {
        let linear = SseCurve {
            points: (1..=9).map(|k| (k, 100.0 - 10.0 * k as f64)).collect(),
        };
        assert_eq!(
            elbow_k(&linear).unwrap(),
            Elbow {
                k: 1,
                low_confidence: true
            }
        );
        let flat = SseCurve {
            points: (2..=6).map(|k| (k, 5.0)).collect(),
        };
        assert_eq!(
            elbow_k(&flat).unwrap(),
            Elbow {
                k: 2,
                low_confidence: true
            }
        );
        let short = SseCurve {
            points: vec![(1, 2.0), (2, 1.0)],
        };
        assert!(elbow_k(&short).is_err());
    }

    #[test]
    fn collection_counts_and_determinism() {
        let mut env = EnvConfig::default_for(EnvId::CartPole).build().unwrap();
        let c = collect_states(&mut env, 10, 1, CollectPolicy::Random).unwrap();
        assert_eq!(c.len(), 10);
        assert_eq!(c.dim(), 4);
        let again = collect_states(&mut env, 10, 1, CollectPolicy::Random).unwrap();
        assert_eq!(c, again);
        let mut nav = EnvConfig::default_for(EnvId::Nav).build().unwrap();
        let c = collect_states(&mut nav, 500, 2, CollectPolicy::Oracle).unwrap();
        assert_eq!((c.len(), c.dim()), (500, 5));
    }
}
