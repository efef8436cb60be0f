//! Per-kind usage counters and fitness-proportionate selection.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FuzzError;
use crate::ir::{Arity, LayerKind, LossKind};

/// Score of an item selected `count` times so far.
pub fn score(count: u64) -> f64 {
    1.0 / (count as f64 + 1.0)
}

/// Selection probabilities for a list of counts.
pub fn probabilities(counts: &[u64]) -> Vec<f64> {
    let scores: Vec<f64> = counts.iter().map(|&c| score(c)).collect();
    let total: f64 = scores.iter().sum();
    scores.iter().map(|s| s / total).collect()
}

/// Draws an index with probability proportional to its score.
pub fn roulette<R: Rng + ?Sized>(counts: &[u64], rng: &mut R) -> Option<usize> {
    if counts.is_empty() {
        return None;
    }
    let dist = WeightedIndex::new(counts.iter().map(|&c| score(c))).ok()?;
    Some(dist.sample(rng))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerUsageStats {
    pub kinds: BTreeMap<LayerKind, u64>,
    pub losses: BTreeMap<LossKind, u64>,
}

impl LayerUsageStats {
    /// Zeroed counters for the given kinds and losses.
    pub fn new(kinds: impl IntoIterator<Item = LayerKind>, losses: impl IntoIterator<Item = LossKind>) -> Self {
        Self {
            kinds: kinds.into_iter().map(|k| (k, 0)).collect(),
            losses: losses.into_iter().map(|l| (l, 0)).collect(),
        }
    }

    pub fn count(&self, kind: LayerKind) -> u64 {
        self.kinds.get(&kind).copied().unwrap_or(0)
    }

    pub fn class(&self, arity: Arity) -> Vec<LayerKind> {
        self.kinds.keys().copied().filter(|k| k.arity() == arity).collect()
    }

    /// `(kind, p)` pairs within an arity class.
    pub fn class_probabilities(&self, arity: Arity) -> Vec<(LayerKind, f64)> {
        let kinds = self.class(arity);
        let counts: Vec<u64> = kinds.iter().map(|&k| self.count(k)).collect();
        kinds.into_iter().zip(probabilities(&counts)).collect()
    }

    /// Draws from `candidates` without touching the counters.
    pub fn sample_among<R: Rng + ?Sized>(&self, candidates: &[LayerKind], rng: &mut R) -> Option<LayerKind> {
        let counts: Vec<u64> = candidates.iter().map(|&k| self.count(k)).collect();
        roulette(&counts, rng).map(|i| candidates[i])
    }

    pub fn sample<R: Rng + ?Sized>(&self, arity: Arity, rng: &mut R) -> Result<LayerKind, FuzzError> {
        self.sample_among(&self.class(arity), rng).ok_or(FuzzError::EmptyClass(arity))
    }

    pub fn record(&mut self, kind: LayerKind) {
        *self.kinds.entry(kind).or_insert(0) += 1;
    }

    /// Samples a kind of the class and counts the selection.
    pub fn select_layer<R: Rng + ?Sized>(&mut self, arity: Arity, rng: &mut R) -> Result<LayerKind, FuzzError> {
        let k = self.sample(arity, rng)?;
        self.record(k);
        Ok(k)
    }

    pub fn select_loss<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<LossKind, FuzzError> {
        let losses: Vec<LossKind> = self.losses.keys().copied().collect();
        let counts: Vec<u64> = self.losses.values().copied().collect();
        let i = roulette(&counts, rng).ok_or(FuzzError::NoLoss)?;
        let l = losses[i];
        *self.losses.get_mut(&l).expect("present") += 1;
        Ok(l)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_when_unused() {
        let p = probabilities(&[0; 5]);
        for v in p {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn select_layer_counts_and_stays_in_class() {
        let mut stats = LayerUsageStats::new(LayerKind::selectable(), LossKind::ALL.iter().copied());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let k = stats.select_layer(Arity::Mi, &mut rng).unwrap();
            assert_eq!(k.arity(), Arity::Mi);
        }
        let total: u64 = stats.class(Arity::Mi).iter().map(|&k| stats.count(k)).sum();
        assert_eq!(total, 200);
        let sum: f64 = stats.class_probabilities(Arity::Si).iter().map(|(_, p)| p).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_class_is_an_error() {
        let stats = LayerUsageStats::new([LayerKind::ReLU], []);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(stats.sample(Arity::Mi, &mut rng), Err(FuzzError::EmptyClass(Arity::Mi))));
    }
}
