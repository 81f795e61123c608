//! Ranking metrics over decoded semantic IDs and the early-stopping rule.
//!
//! Evaluation is code-level: a prediction is correct when the decoded
//! semantic ID equals the held-out item's semantic ID. With a single relevant
//! code per instance, NDCG@K reduces to `1/log2(rank+1)` for ranks within the
//! cutoff and 0 otherwise.

use crate::tokenizer::SemanticId;

/// 1-indexed position of `truth` in the ranked candidate list.
pub fn rank_of(candidates: &[SemanticId], truth: &SemanticId) -> Option<usize> {
    candidates.iter().position(|c| c == truth).map(|p| p + 1)
}

/// Hit indicator within the top K.
pub fn recall_at_k(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

/// Single-relevant-item NDCG: the ideal DCG is 1, so the score is the
/// discounted gain of the one hit.
pub fn ndcg_at_k(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

/// Model-selection score used on the validation split.
pub fn validation_score(ndcg_at_10: f64, recall_at_10: f64) -> f64 {
    0.8 * ndcg_at_10 + 0.2 * recall_at_10
}

/// Mean metrics over a set of evaluation instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOutcome {
    pub instances: usize,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub ndcg_at_5: f64,
    pub ndcg_at_10: f64,
}

impl EvalOutcome {
    /// Aggregates per-instance ranks (None = truth never decoded).
    pub fn from_ranks(ranks: &[Option<usize>]) -> Self {
        let n = ranks.len().max(1) as f64;
        let mean = |f: &dyn Fn(Option<usize>) -> f64| -> f64 {
            ranks.iter().map(|&r| f(r)).sum::<f64>() / n
        };
        EvalOutcome {
            instances: ranks.len(),
            recall_at_5: mean(&|r| recall_at_k(r, 5)),
            recall_at_10: mean(&|r| recall_at_k(r, 10)),
            ndcg_at_5: mean(&|r| ndcg_at_k(r, 5)),
            ndcg_at_10: mean(&|r| ndcg_at_k(r, 10)),
        }
    }

    pub fn validation_score(&self) -> f64 {
        validation_score(self.ndcg_at_10, self.recall_at_10)
    }
}

impl std::fmt::Display for EvalOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "instances={} recall@5={:.6} recall@10={:.6} ndcg@5={:.6} ndcg@10={:.6} score={:.6}",
            self.instances,
            self.recall_at_5,
            self.recall_at_10,
            self.ndcg_at_5,
            self.ndcg_at_10,
            self.validation_score()
        )
    }
}

/// Stops training after `patience` epochs without strict improvement in the
/// validation score. Epochs are 1-indexed; the first observation always
/// counts as an improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best_score: f64,
    best_epoch: usize,
    epochs_since_best: usize,
    epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best_score: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_best: 0,
            epoch: 0,
        }
    }

    /// Records one epoch's validation score; returns true when this epoch is
    /// a new best (checkpoint-worthy).
    pub fn observe(&mut self, score: f64) -> bool {
        self.epoch += 1;
        if score > self.best_score {
            self.best_score = score;
            self.best_epoch = self.epoch;
            self.epochs_since_best = 0;
            true
        } else {
            self.epochs_since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.epochs_since_best >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_score(&self) -> f64 {
        self.best_score
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

/// Supervision exposure at the selected checkpoint: epochs survived times
/// training views drawn per sample per epoch.
pub fn effective_supervision(best_epoch: usize, views_per_sample: usize) -> u64 {
    best_epoch as u64 * views_per_sample as u64
}

/// Per-epoch record of a training run plus its early-stopping outcome.
/// `effective_sample_passes` stays recomputable from `best_epoch` and
/// `views_per_sample`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    /// Mean training loss per completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Validation score per completed epoch.
    pub epoch_scores: Vec<f64>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub views_per_sample: usize,
    /// Supervision passes absorbed by the kept checkpoint:
    /// best_epoch x views_per_sample.
    pub effective_sample_passes: u64,
    /// Decoder forward passes spent estimating digit difficulties.
    pub probe_decoder_calls: u64,
    /// Decoder passes spent on training views.
    pub view_decoder_calls: u64,
    pub stopped_early: bool,
}

impl std::fmt::Display for TrainTrace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, (loss, score)) in self.epoch_losses.iter().zip(&self.epoch_scores).enumerate() {
            writeln!(f, "epoch={} loss={loss:.6} score={score:.6}", i + 1)?;
        }
        writeln!(
            f,
            "best_epoch={} best_score={:.6} views_per_sample={} esp={}",
            self.best_epoch, self.best_score, self.views_per_sample, self.effective_sample_passes
        )?;
        write!(
            f,
            "probe_decoder_calls={} view_decoder_calls={} stopped_early={}",
            self.probe_decoder_calls, self.view_decoder_calls, self.stopped_early
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::SemanticId;

    fn sid(digits: &[u16]) -> SemanticId {
        SemanticId::new(digits.to_vec(), 16).unwrap()
    }

    #[test]
    fn rank_of_finds_first_match() {
        let list = vec![sid(&[1, 2]), sid(&[3, 4]), sid(&[5, 6])];
        assert_eq!(rank_of(&list, &sid(&[1, 2])), Some(1));
        assert_eq!(rank_of(&list, &sid(&[5, 6])), Some(3));
        assert_eq!(rank_of(&list, &sid(&[9, 9])), None);
    }

    #[test]
    fn ndcg_closed_forms() {
        // rank 1 -> 1/log2(2) = 1; rank 3 -> 1/log2(4) = 0.5.
        assert!((ndcg_at_k(Some(1), 10) - 1.0).abs() < 1e-12);
        assert!((ndcg_at_k(Some(3), 10) - 0.5).abs() < 1e-12);
        assert_eq!(ndcg_at_k(Some(11), 10), 0.0);
        assert_eq!(ndcg_at_k(None, 10), 0.0);
        // Rank exactly at the cutoff still scores.
        assert!(ndcg_at_k(Some(10), 10) > 0.0);
    }

    #[test]
    fn ndcg_decreases_with_rank() {
        let mut prev = f64::INFINITY;
        for r in 1..=10 {
            let v = ndcg_at_k(Some(r), 10);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn recall_is_a_cutoff_indicator() {
        assert_eq!(recall_at_k(Some(5), 5), 1.0);
        assert_eq!(recall_at_k(Some(6), 5), 0.0);
        assert_eq!(recall_at_k(None, 5), 0.0);
    }

    #[test]
    fn validation_score_formula() {
        let s = validation_score(0.5, 1.0);
        assert!((s - 0.6).abs() < 1e-12);
        // Perfect ranking gives 1.0.
        assert!((validation_score(1.0, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn outcome_aggregates_means() {
        // Three instances: rank 1, rank 7, miss.
        let out = EvalOutcome::from_ranks(&[Some(1), Some(7), None]);
        assert_eq!(out.instances, 3);
        assert!((out.recall_at_5 - 1.0 / 3.0).abs() < 1e-12);
        assert!((out.recall_at_10 - 2.0 / 3.0).abs() < 1e-12);
        let expected_ndcg10 = (1.0 + 1.0 / 8f64.log2()) / 3.0;
        assert!((out.ndcg_at_10 - expected_ndcg10).abs() < 1e-12);
        assert!((out.validation_score() - (0.8 * expected_ndcg10 + 0.2 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn early_stopper_flat_scores_stop_after_patience() {
        let mut es = EarlyStopper::new(15);
        let mut stopped_at = None;
        for epoch in 1..=100 {
            es.observe(0.25);
            if es.should_stop() {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(16));
        assert_eq!(es.best_epoch(), 1);
    }

    #[test]
    fn early_stopper_requires_strict_improvement() {
        let mut es = EarlyStopper::new(2);
        assert!(es.observe(0.5));
        assert!(!es.observe(0.5), "equal score is not an improvement");
        assert!(!es.observe(0.5));
        assert!(es.should_stop());
    }

    #[test]
    fn early_stopper_resets_on_improvement() {
        let mut es = EarlyStopper::new(3);
        es.observe(0.1);
        es.observe(0.05);
        es.observe(0.05);
        assert!(!es.should_stop());
        assert!(es.observe(0.2), "recovery is a new best");
        assert_eq!(es.best_epoch(), 4);
        es.observe(0.1);
        es.observe(0.1);
        es.observe(0.1);
        assert!(es.should_stop());
        assert_eq!(es.best_epoch(), 4);
        assert!((es.best_score() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn supervision_exposure_product() {
        assert_eq!(effective_supervision(7, 12), 84);
        assert_eq!(effective_supervision(0, 12), 0);
    }
}
