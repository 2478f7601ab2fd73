//! Ranking and classification metrics: average precision, ROC AUC
//! (Mann–Whitney form), and balanced accuracy.
//!
//! Ranking sorts by descending score with ties broken by ascending entry id,
//! so metric values are reproducible across runs and machines.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::RawLabel;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("unknown label string {0:?}")]
    ParseLabel(String),
    #[error("bad score value {0:?}")]
    ParseScore(String),
    #[error("scores csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEntry {
    pub entry_id: String,
    pub score: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub map: f64,
    pub auc: f64,
    pub balanced_accuracy: f64,
    /// Decision threshold used by the accuracy term.
    pub threshold: f64,
}

/// Project a raw label string onto the binary task: audible speaking is
/// positive, everything else negative.
pub fn map_labels(raw: &str) -> Result<bool, MetricError> {
    raw.parse::<RawLabel>()
        .map(RawLabel::is_positive)
        .map_err(|_| MetricError::ParseLabel(raw.to_string()))
}

/// Deterministic ranking order: score descending, entry id ascending.
fn ranked(entries: &[ScoredEntry]) -> Vec<&ScoredEntry> {
    let mut sorted: Vec<&ScoredEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores must be finite")
            .then_with(|| a.entry_id.cmp(&b.entry_id))
    });
    sorted
}

/// Non-interpolated average precision: mean of precision at each positive
/// rank.
pub fn average_precision(entries: &[ScoredEntry]) -> Result<f64, MetricError> {
    let positives = entries.iter().filter(|e| e.positive).count();
    if positives == 0 {
        return Err(MetricError::Undefined(
            "average precision needs at least one positive".into(),
        ));
    }
    let mut seen_positive = 0usize;
    let mut total = 0.0;
    for (k, entry) in ranked(entries).iter().enumerate() {
        if entry.positive {
            seen_positive += 1;
            total += seen_positive as f64 / (k + 1) as f64;
        }
    }
    Ok(total / positives as f64)
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting half.
pub fn roc_auc(entries: &[ScoredEntry]) -> Result<f64, MetricError> {
    let positives = entries.iter().filter(|e| e.positive).count();
    let negatives = entries.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::Undefined(
            "auc needs both classes present".into(),
        ));
    }
    // Ascending sweep over score groups: each positive beats every negative
    // strictly below its score and half-ties the negatives at its score.
    let mut order: Vec<&ScoredEntry> = entries.iter().collect();
    order.sort_by(|a, b| a.score.partial_cmp(&b.score).expect("scores must be finite"));
    let mut wins_doubled = 0u64; // 2·wins + ties
    let mut negatives_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut pos_here = 0u64;
        let mut neg_here = 0u64;
        while j < order.len() && order[j].score == order[i].score {
            if order[j].positive {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        wins_doubled += pos_here * (2 * negatives_below + neg_here);
        negatives_below += neg_here;
        i = j;
    }
    Ok(wins_doubled as f64 / (2 * positives as u64 * negatives as u64) as f64)
}

/// Mean of true-positive and true-negative rates; prediction is
/// `score >= threshold`.
pub fn balanced_accuracy(entries: &[ScoredEntry], threshold: f64) -> Result<f64, MetricError> {
    let mut tp = 0u64;
    let mut fn_ = 0u64;
    let mut tn = 0u64;
    let mut fp = 0u64;
    for e in entries {
        let predicted = e.score >= threshold;
        match (e.positive, predicted) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
        }
    }
    if tp + fn_ == 0 || tn + fp == 0 {
        return Err(MetricError::Undefined(
            "balanced accuracy needs both classes present".into(),
        ));
    }
    let tpr = tp as f64 / (tp + fn_) as f64;
    let tnr = tn as f64 / (tn + fp) as f64;
    Ok((tpr + tnr) / 2.0)
}

pub fn compute_report(entries: &[ScoredEntry], threshold: f64) -> Result<MetricReport, MetricError> {
    Ok(MetricReport {
        map: average_precision(entries)?,
        auc: roc_auc(entries)?,
        balanced_accuracy: balanced_accuracy(entries, threshold)?,
        threshold,
    })
}

// ── CSV interface ────────────────────────────────────────────────────

pub const SCORES_CSV_HEADER: [&str; 3] = ["entry_id", "score", "raw_label"];

pub fn write_scores_csv(
    path: &Path,
    rows: &[(String, f64, RawLabel)],
) -> Result<(), MetricError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SCORES_CSV_HEADER)?;
    for (id, score, label) in rows {
        w.write_record([id.as_str(), &format!("{score}"), label.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Read `(entry_id, score, raw_label)` rows and project labels onto the
/// binary task.
pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoredEntry>, MetricError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let entry_id = record.get(0).unwrap_or_default().to_string();
        let score_text = record.get(1).unwrap_or_default();
        let score: f64 = score_text
            .parse()
            .map_err(|_| MetricError::ParseScore(score_text.to_string()))?;
        let positive = map_labels(record.get(2).unwrap_or_default())?;
        out.push(ScoredEntry {
            entry_id,
            score,
            positive,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn entry(id: &str, score: f64, positive: bool) -> ScoredEntry {
        ScoredEntry {
            entry_id: id.to_string(),
            score,
            positive,
        }
    }

    /// Definitional oracle: precision@k recomputed from scratch at every
    /// positive rank, same summation order as the implementation.
    fn ap_oracle(entries: &[ScoredEntry]) -> f64 {
        let order = ranked(entries);
        let positives = order.iter().filter(|e| e.positive).count();
        let mut total = 0.0;
        for k in 0..order.len() {
            if order[k].positive {
                let hits = order[..=k].iter().filter(|e| e.positive).count();
                total += hits as f64 / (k + 1) as f64;
            }
        }
        total / positives as f64
    }

    /// Exhaustive pair-count oracle.
    fn auc_oracle(entries: &[ScoredEntry]) -> f64 {
        let mut wins = 0u64;
        let mut ties = 0u64;
        let mut pairs = 0u64;
        for p in entries.iter().filter(|e| e.positive) {
            for n in entries.iter().filter(|e| !e.positive) {
                pairs += 1;
                if p.score > n.score {
                    wins += 1;
                } else if p.score == n.score {
                    ties += 1;
                }
            }
        }
        (wins as f64 + 0.5 * ties as f64) / pairs as f64
    }

    #[test]
    fn perfect_ranking_has_unit_ap_and_auc() {
        let entries = vec![
            entry("a", 0.9, true),
            entry("b", 0.8, true),
            entry("c", 0.3, false),
            entry("d", 0.1, false),
        ];
        assert_eq!(average_precision(&entries).unwrap(), 1.0);
        assert_eq!(roc_auc(&entries).unwrap(), 1.0);
    }

    #[test]
    fn ap_interleaved_case_matches_hand_enumeration() {
        // Ranked order [+, -, +]: AP = (1/2)(1/1 + 2/3) = 5/6.
        let entries = vec![
            entry("a", 0.9, true),
            entry("b", 0.5, false),
            entry("c", 0.2, true),
        ];
        let ap = average_precision(&entries).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ap_with_all_scores_equal_follows_the_tie_order() {
        let entries = vec![
            entry("b", 0.5, true),
            entry("a", 0.5, false),
            entry("c", 0.5, true),
        ];
        // Tie order by id: a(-), b(+), c(+); AP = (1/2)(1/2 + 2/3).
        let expect = 0.5 * (1.0 / 2.0 + 2.0 / 3.0);
        assert_eq!(average_precision(&entries).unwrap(), expect);
        assert_eq!(average_precision(&entries).unwrap(), ap_oracle(&entries));
    }

    #[test]
    fn ap_requires_a_positive() {
        let entries = vec![entry("a", 0.5, false)];
        assert!(matches!(
            average_precision(&entries),
            Err(MetricError::Undefined(_))
        ));
    }

    #[test]
    fn auc_all_ties_is_half() {
        let entries = vec![
            entry("a", 0.5, true),
            entry("b", 0.5, false),
            entry("c", 0.5, true),
            entry("d", 0.5, false),
        ];
        assert_eq!(roc_auc(&entries).unwrap(), 0.5);
    }

    #[test]
    fn auc_matches_exhaustive_pair_count_on_random_instances() {
        let mut rng = ChaCha20Rng::seed_from_u64(40);
        for _ in 0..200 {
            let n = rng.gen_range(2..12);
            let entries: Vec<ScoredEntry> = (0..n)
                .map(|i| {
                    entry(
                        &format!("e{i:02}"),
                        f64::from(rng.gen_range(0..5)) / 4.0,
                        rng.gen_bool(0.5),
                    )
                })
                .collect();
            let has_both = entries.iter().any(|e| e.positive)
                && entries.iter().any(|e| !e.positive);
            if !has_both {
                continue;
            }
            assert_eq!(roc_auc(&entries).unwrap(), auc_oracle(&entries));
        }
    }

    #[test]
    fn auc_single_class_is_undefined() {
        let entries = vec![entry("a", 0.5, true), entry("b", 0.6, true)];
        assert!(matches!(roc_auc(&entries), Err(MetricError::Undefined(_))));
    }

    #[test]
    fn balanced_accuracy_hand_counted_cases() {
        let all_right = vec![
            entry("a", 0.9, true),
            entry("b", 0.1, false),
        ];
        assert_eq!(balanced_accuracy(&all_right, 0.5).unwrap(), 1.0);

        // All positives right, all negatives wrong.
        let half = vec![
            entry("a", 0.9, true),
            entry("b", 0.8, false),
            entry("c", 0.7, false),
        ];
        assert_eq!(balanced_accuracy(&half, 0.5).unwrap(), 0.5);

        // Mixed eight-entry case against a confusion-matrix hand count:
        // tp=2, fn=1, tn=3, fp=2 -> (2/3 + 3/5)/2.
        let mixed = vec![
            entry("a", 0.9, true),
            entry("b", 0.6, true),
            entry("c", 0.2, true),
            entry("d", 0.8, false),
            entry("e", 0.55, false),
            entry("f", 0.3, false),
            entry("g", 0.2, false),
            entry("h", 0.1, false),
        ];
        let expect = (2.0 / 3.0 + 3.0 / 5.0) / 2.0;
        assert!((balanced_accuracy(&mixed, 0.5).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn label_mapping_follows_the_positive_class_definition() {
        assert!(map_labels("speaking_audible").unwrap());
        assert!(!map_labels("speaking_not_audible").unwrap());
        assert!(!map_labels("not_speaking").unwrap());
        assert!(matches!(
            map_labels("mumbling"),
            Err(MetricError::ParseLabel(_))
        ));
    }

    #[test]
    fn ranking_metrics_are_invariant_under_monotone_score_transforms() {
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        for _ in 0..50 {
            let n = rng.gen_range(4..20);
            let entries: Vec<ScoredEntry> = (0..n)
                .map(|i| entry(&format!("e{i:02}"), rng.gen_range(-2.0..2.0), rng.gen_bool(0.4)))
                .collect();
            if !(entries.iter().any(|e| e.positive) && entries.iter().any(|e| !e.positive)) {
                continue;
            }
            let transformed: Vec<ScoredEntry> = entries
                .iter()
                .map(|e| entry(&e.entry_id, (e.score * 3.0).exp(), e.positive))
                .collect();
            assert!((roc_auc(&entries).unwrap() - roc_auc(&transformed).unwrap()).abs() < 1e-12);
            assert!(
                (average_precision(&entries).unwrap()
                    - average_precision(&transformed).unwrap())
                .abs()
                    < 1e-12
            );
        }
    }

    #[test]
    fn auc_is_symmetric_under_label_flip_with_negated_scores() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        for _ in 0..50 {
            let n = rng.gen_range(4..16);
            let entries: Vec<ScoredEntry> = (0..n)
                .map(|i| {
                    entry(
                        &format!("e{i:02}"),
                        f64::from(rng.gen_range(-3..4)),
                        rng.gen_bool(0.5),
                    )
                })
                .collect();
            if !(entries.iter().any(|e| e.positive) && entries.iter().any(|e| !e.positive)) {
                continue;
            }
            let flipped: Vec<ScoredEntry> = entries
                .iter()
                .map(|e| entry(&e.entry_id, -e.score, !e.positive))
                .collect();
            assert!((roc_auc(&entries).unwrap() - roc_auc(&flipped).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn balanced_accuracy_is_invariant_under_class_preserving_duplication() {
        let entries = vec![
            entry("a", 0.9, true),
            entry("b", 0.4, true),
            entry("c", 0.6, false),
            entry("d", 0.2, false),
        ];
        let mut doubled = entries.clone();
        for e in &entries {
            doubled.push(entry(&format!("{}_dup", e.entry_id), e.score, e.positive));
        }
        assert_eq!(
            balanced_accuracy(&entries, 0.5).unwrap(),
            balanced_accuracy(&doubled, 0.5).unwrap()
        );
    }

    #[test]
    fn scores_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let rows = vec![
            ("s0_t0_f0".to_string(), 0.75, RawLabel::SpeakingAudible),
            ("s0_t1_f0".to_string(), 0.25, RawLabel::NotSpeaking),
            ("s0_t1_f1".to_string(), 0.5, RawLabel::SpeakingNotAudible),
        ];
        write_scores_csv(&path, &rows).unwrap();
        let read = read_scores_csv(&path).unwrap();
        assert_eq!(read.len(), 3);
        assert_eq!(read[0].entry_id, "s0_t0_f0");
        assert_eq!(read[0].score, 0.75);
        assert!(read[0].positive);
        assert!(!read[2].positive);
    }
}
