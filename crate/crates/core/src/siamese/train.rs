//! Mini-batch gradient descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::grad::loss_gradient;
use super::{forward, similarity, Hyper, PairSample, SiameseError, SiameseModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over all pairs after the epoch's updates.
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean loss and the fraction of pairs with `(similarity > 0.5) == target`.
pub fn evaluate_pairs(model: &SiameseModel, pairs: &[PairSample]) -> (f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let per_pair: Vec<(f64, bool)> = pairs
        .par_iter()
        .map(|p| {
            let a = forward(model, &p.a.values).embedding;
            let b = forward(model, &p.b.values).embedding;
            let s = similarity(&a, &b);
            let pc = s.clamp(1e-7, 1.0 - 1e-7);
            let l = -(p.target * pc.ln() + (1.0 - p.target) * (1.0 - pc).ln());
            (l, (s > 0.5) == (p.target > 0.5))
        })
        .collect();
    let n = pairs.len() as f64;
    let loss = per_pair.iter().map(|(l, _)| l).sum::<f64>() / n;
    let correct = per_pair.iter().filter(|(_, c)| *c).count() as f64;
    (loss, correct / n)
}

/// Trains a freshly initialized model. The seed drives both the
/// initialization and the per-epoch shuffling.
pub fn train(
    pairs: &[PairSample],
    hyper: Hyper,
    cfg: &TrainConfig,
) -> Result<(SiameseModel, Vec<EpochStats>), SiameseError> {
    if pairs.is_empty() {
        return Err(SiameseError::NoPairs);
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(SiameseError::Config("need batch_size >= 1 and learning_rate > 0".into()));
    }
    if let Some(bad) = pairs.iter().find(|p| p.a.values.len() != hyper.event_len || p.b.values.len() != hyper.event_len) {
        return Err(SiameseError::Config(format!(
            "pair event lengths {}/{} differ from L = {}",
            bad.a.values.len(),
            bad.b.values.len(),
            hyper.event_len
        )));
    }
    let mut model = SiameseModel::init(hyper, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<PairSample> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let (l, grad) = loss_gradient(&model, &batch);
            if !l.is_finite() {
                return Err(SiameseError::Diverged { epoch, batch: batch_idx, loss: l });
            }
            for (param, g) in model.tensors_mut().into_iter().zip(grad.tensors()) {
                for (p, gi) in param.iter_mut().zip(g) {
                    *p -= cfg.learning_rate * gi;
                }
            }
        }
        let (l, accuracy) = evaluate_pairs(&model, pairs);
        if !l.is_finite() || model.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(SiameseError::Diverged { epoch, batch: usize::MAX, loss: l });
        }
        log::debug!("epoch {epoch}: loss {l:.5}, accuracy {accuracy:.4}");
        trace.push(EpochStats { epoch, loss: l, accuracy });
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::siamese::{make_pairs, EventImage, EventSource};
    use rand::Rng;
    use std::sync::Arc;

    fn fixture() -> (Hyper, Vec<PairSample>) {
        let hyper = Hyper {
            event_len: 16,
            n_filters: 2,
            kernel_len: 3,
            pool_len: 2,
            embed_dim: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut events = |freq: f64| -> Vec<Arc<EventImage>> {
            (0..4)
                .map(|_| {
                    let phase: f64 = rng.random_range(0.0..6.28);
                    Arc::new(EventImage {
                        values: (0..16).map(|i| (freq * i as f64 + phase).sin()).collect(),
                        source: EventSource { recording_id: "f".into(), start: 0, end: 16 },
                    })
                })
                .collect()
        };
        let (c1, c2) = (events(0.4), events(2.2));
        // 8 events: 6 positives, 16 negatives
        (hyper, make_pairs(&c1, &c2).unwrap())
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (hyper, pairs) = fixture();
        let cfg = TrainConfig { epochs: 0, seed: 4, ..Default::default() };
        let (model, trace) = train(&pairs, hyper, &cfg).unwrap();
        assert!(trace.is_empty());
        assert_eq!(model, SiameseModel::init(hyper, 4).unwrap());
    }

    #[test]
    fn same_seed_same_parameters() {
        let (hyper, pairs) = fixture();
        let cfg = TrainConfig { epochs: 3, batch_size: 5, seed: 9, ..Default::default() };
        let (a, ta) = train(&pairs, hyper, &cfg).unwrap();
        let (b, tb) = train(&pairs, hyper, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn full_batch_loss_non_increasing_at_small_rate() {
        let (hyper, pairs) = fixture();
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: pairs.len(),
            seed: 2,
        };
        let (_, trace) = train(&pairs, hyper, &cfg).unwrap();
        let (initial, _) = evaluate_pairs(&SiameseModel::init(hyper, 2).unwrap(), &pairs);
        let mut prev = initial;
        for s in &trace {
            assert!(s.loss <= prev + 1e-12, "epoch {}: {} > {prev}", s.epoch, s.loss);
            prev = s.loss;
        }
        assert!(prev < initial);
    }

    #[test]
    fn huge_rate_reports_divergence() {
        let (hyper, pairs) = fixture();
        let cfg = TrainConfig { learning_rate: 1e300, epochs: 5, batch_size: 4, seed: 1 };
        assert!(matches!(train(&pairs, hyper, &cfg), Err(SiameseError::Diverged { .. })));
    }

    #[test]
    fn rejects_empty_and_mismatched_input() {
        let (hyper, pairs) = fixture();
        assert!(matches!(train(&[], hyper, &TrainConfig::default()), Err(SiameseError::NoPairs)));
        let wrong = Hyper { event_len: 15, ..hyper };
        assert!(matches!(train(&pairs, wrong, &TrainConfig::default()), Err(SiameseError::Config(_))));
    }
}
