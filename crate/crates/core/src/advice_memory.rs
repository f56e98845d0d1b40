//! Persistent advice: cluster → advised action with a decaying reuse
//! probability (probabilistic policy reuse).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// When and how reuse probabilities shrink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayVariant {
    /// `p ← p·decay` on every retrieval attempt of that entry.
    #[default]
    MultiplicativePerRetrieval,
    /// `p ← max(0, p − (1 − decay))` on every retrieval attempt.
    SubtractivePerRetrieval,
    /// `p ← p·decay` for every entry on every environment step.
    MultiplicativePerEnvStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PprConfig {
    pub initial_probability: f64,
    pub decay: f64,
    pub variant: DecayVariant,
}

impl Default for PprConfig {
    fn default() -> Self {
        Self {
            initial_probability: 0.8,
            decay: 0.95,
            variant: DecayVariant::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceEntry {
    pub cluster: usize,
    pub action: usize,
    pub probability: f64,
    pub created_at: u64,
    pub last_used: Option<u64>,
    /// Retrieval attempts since the entry was last recorded.
    pub attempts: u64,
    /// Successful reuses since the entry was last recorded.
    pub uses: u64,
}

#[derive(Debug, Clone, Default)]
pub struct AdviceStore {
    entries: BTreeMap<usize, AdviceEntry>,
    config: PprConfig,
}

impl AdviceStore {
    pub fn new(config: PprConfig) -> Self {
        Self {
            entries: BTreeMap::new(),
            config,
        }
    }

    pub fn config(&self) -> &PprConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, cluster: usize) -> Option<&AdviceEntry> {
        self.entries.get(&cluster)
    }

    /// Stores fresh advice for `cluster`, replacing any older entry.
    pub fn record(&mut self, cluster: usize, action: usize, step: u64) {
        self.entries.insert(
            cluster,
            AdviceEntry {
                cluster,
                action,
                probability: self.config.initial_probability,
                created_at: step,
                last_used: None,
                attempts: 0,
                uses: 0,
            },
        );
    }

    /// Attempts to reuse advice for `cluster`.
    pub fn retrieve<R: Rng + ?Sized>(
        &mut self,
        cluster: usize,
        step: u64,
        rng: &mut R,
    ) -> Option<usize> {
        if !self.entries.contains_key(&cluster) {
            return None;
        }
        let u = rng.random::<f64>();
        self.retrieve_with(cluster, step, u)
    }

    /// [`retrieve`](Self::retrieve) with the uniform draw supplied by the caller.
    pub fn retrieve_with(&mut self, cluster: usize, step: u64, u: f64) -> Option<usize> {
        let config = self.config;
        let entry = self.entries.get_mut(&cluster)?;
        let reused = u < entry.probability;
        entry.attempts += 1;
        if reused {
            entry.uses += 1;
            entry.last_used = Some(step);
        }
        match config.variant {
            DecayVariant::MultiplicativePerRetrieval => entry.probability *= config.decay,
            DecayVariant::SubtractivePerRetrieval => {
                entry.probability = (entry.probability - (1.0 - config.decay)).max(0.0)
            }
            DecayVariant::MultiplicativePerEnvStep => {}
        }
        reused.then_some(entry.action)
    }

    /// Per-environment-step bookkeeping; only the per-step variant decays here.
    pub fn tick(&mut self) {
        if self.config.variant == DecayVariant::MultiplicativePerEnvStep {
            let decay = self.config.decay;
            self.entries
                .values_mut()
                .for_each(|e| e.probability *= decay);
        }
    }

    /// Copy of all entries ordered by cluster id.
    pub fn snapshot(&self) -> Vec<AdviceEntry> {
        self.entries.values().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn record_sets_initial_probability() {
        let mut store = AdviceStore::default();
        store.record(3, 1, 10);
        assert_eq!(store.len(), 1);
        assert_eq!(store.get(3).unwrap().probability, 0.8);
        assert_eq!(store.get(3).unwrap().created_at, 10);
    }

    #[test]
    fn re_recording_overwrites_and_refreshes() {
        let mut store = AdviceStore::default();
        store.record(0, 0, 1);
        store.retrieve_with(0, 2, 0.9);
        store.record(0, 1, 3);
        let e = store.get(0).unwrap();
        assert_eq!((e.action, e.probability, e.attempts), (1, 0.8, 0));
        assert_eq!(store.len(), 1);
        for c in 1..6 {
            store.record(c, 0, 4);
        }
        assert_eq!(store.len(), 6);
    }

    #[test]
    fn absent_cluster_is_a_pure_read() {
        let mut store = AdviceStore::default();
        store.record(1, 0, 0);
        let before = store.snapshot();
        let mut rng = StreamRng::seed_from_u64(0);
        assert_eq!(store.retrieve(7, 5, &mut rng), None);
        assert_eq!(store.snapshot(), before);
        // The draw is skipped entirely.
        assert_eq!(rng, StreamRng::seed_from_u64(0));
    }

    #[test]
    fn forced_draw_reuses_and_decays() {
        let mut store = AdviceStore::default();
        store.record(2, 1, 0);
        assert_eq!(store.retrieve_with(2, 1, 0.5), Some(1));
        assert!((store.get(2).unwrap().probability - 0.76).abs() < 1e-15);
        assert_eq!(store.retrieve_with(2, 2, 0.99), None);
        let e = store.get(2).unwrap();
        assert_eq!((e.attempts, e.uses, e.last_used), (2, 1, Some(1)));
    }

    #[test]
    fn twenty_attempts_follow_closed_form() {
        let mut store = AdviceStore::default();
        store.record(0, 0, 0);
        let mut rng = StreamRng::seed_from_u64(1);
        for s in 0..20 {
            store.retrieve(0, s, &mut rng);
        }
        let p = store.get(0).unwrap().probability;
        assert!((p - 0.8 * libm::pow(0.95, 20.0)).abs() < 1e-12);
        assert!((p - 0.287).abs() < 1e-3);
    }

    #[test]
    fn subtractive_and_per_step_variants() {
        let mut store = AdviceStore::new(PprConfig {
            variant: DecayVariant::SubtractivePerRetrieval,
            ..Default::default()
        });
        store.record(0, 0, 0);
        for _ in 0..3 {
            store.retrieve_with(0, 0, 1.0);
        }
        assert!((store.get(0).unwrap().probability - 0.65).abs() < 1e-12);
        for _ in 0..30 {
            store.retrieve_with(0, 0, 1.0);
        }
        assert_eq!(store.get(0).unwrap().probability, 0.0);

        let mut store = AdviceStore::new(PprConfig {
            variant: DecayVariant::MultiplicativePerEnvStep,
            ..Default::default()
        });
        store.record(0, 0, 0);
        store.record(1, 1, 0);
        store.retrieve_with(0, 0, 0.0);
        assert_eq!(store.get(0).unwrap().probability, 0.8);
        store.tick();
        store.tick();
        for e in store.snapshot() {
            assert!((e.probability - 0.8 * 0.95 * 0.95).abs() < 1e-15);
        }
    }

    #[test]
    fn empirical_reuse_rate_matches_probability() {
        let mut rng = StreamRng::seed_from_u64(42);
        for p in [0.2, 0.5, 0.8] {
            let mut store = AdviceStore::new(PprConfig {
                initial_probability: p,
                ..Default::default()
            });
            let mut hits = 0;
            for s in 0..10_000 {
                store.record(0, 1, s);
                hits += store.retrieve(0, s, &mut rng).is_some() as usize;
            }
            let rate = hits as f64 / 10_000.0;
            assert!((rate - p).abs() < 0.02, "p {p} rate {rate}");
        }
    }

    proptest! {
        #[test]
        fn retrieval_sequences_follow_the_decay_law(
            draws in proptest::collection::vec(0.0f64..1.0, 0..60),
            action in 0usize..3,
        ) {
            let mut store = AdviceStore::default();
            store.record(5, action, 0);
            let mut last = 0.8;
            for (n, u) in draws.iter().enumerate() {
                let got = store.retrieve_with(5, n as u64, *u);
                prop_assert!(got.is_none() || got == Some(action));
                let p = store.get(5).unwrap().probability;
                prop_assert!(p <= last);
                prop_assert!((p - 0.8 * libm::pow(0.95, (n + 1) as f64)).abs() < 1e-12);
                last = p;
            }
        }
    }
}
