//! Open-world evaluation: known-class accuracy through the training-time
//! class/group matching, Hungarian clustering accuracy for novel classes and
//! for the whole population, and NMI.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grouping::ClassGroupMatching;
use crate::hungarian::max_benefit_assignment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty input")]
    Empty,
    #[error("{pred} predictions but {truth} ground-truth labels")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("known-class instances present but no class/group matching supplied")]
    MissingMatching,
}

fn check(pred: &[usize], truth: &[usize]) -> Result<(), MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Contingency counts `truth x pred` over compacted ids.
struct Contingency {
    pred_ids: Vec<usize>,
    counts: Vec<Vec<f64>>,
}

fn contingency(pred: &[usize], truth: &[usize]) -> Contingency {
    let truth_ids: Vec<usize> = truth.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let pred_ids: Vec<usize> = pred.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let ti: BTreeMap<usize, usize> = truth_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let pi: BTreeMap<usize, usize> = pred_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut counts = vec![vec![0.0; pred_ids.len()]; truth_ids.len()];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[ti[&t]][pi[&p]] += 1.0;
    }
    Contingency {
        pred_ids,
        counts,
    }
}

/// Best matched fraction over injective cluster/class maps.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    check(pred, truth)?;
    let c = contingency(pred, truth);
    let (_, matched) = max_benefit_assignment(&c.counts);
    Ok(matched / pred.len() as f64)
}

fn entropy(counts: impl Iterator<Item = f64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0.0)
        .map(|c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over the arithmetic mean of the two entropies.
/// Two single-cluster partitions score 1.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    check(pred, truth)?;
    let c = contingency(pred, truth);
    let n = pred.len() as f64;
    let row_sums: Vec<f64> = c.counts.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<f64> = (0..c.pred_ids.len())
        .map(|j| c.counts.iter().map(|r| r[j]).sum())
        .collect();
    let h_truth = entropy(row_sums.iter().copied(), n);
    let h_pred = entropy(col_sums.iter().copied(), n);
    let mean = 0.5 * (h_truth + h_pred);
    if mean <= 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (i, row) in c.counts.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0.0 {
                mi += nij / n * (n * nij / (row_sums[i] * col_sums[j])).ln();
            }
        }
    }
    Ok((mi / mean).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` when the population has no known-class instances.
    pub known_acc: Option<f64>,
    /// `None` when the population has no novel-class instances.
    pub novel_acc: Option<f64>,
    pub all_acc: f64,
    pub nmi: f64,
    pub estimated_class_count: usize,
    pub population: usize,
    /// Class ids labelling the rows of `confusion`.
    pub class_ids: Vec<usize>,
    /// `confusion[c][g]`: instances of `class_ids[c]` predicted as group `g`.
    pub confusion: Vec<Vec<usize>>,
}

/// Scores group predictions on a held-out population.
///
/// Known-class instances count as correct only when they land in the group
/// matched to their class during training. Novel instances are clustered
/// against the groups no known class claimed; landing in a known group is an
/// error.
pub fn open_world_report(
    pred: &[usize],
    truth: &[usize],
    known_classes: &BTreeSet<usize>,
    matching: Option<&ClassGroupMatching>,
    group_count: usize,
) -> Result<EvalReport, MetricsError> {
    check(pred, truth)?;
    let known_idx: Vec<usize> = (0..truth.len()).filter(|&i| known_classes.contains(&truth[i])).collect();
    let novel_idx: Vec<usize> = (0..truth.len()).filter(|&i| !known_classes.contains(&truth[i])).collect();

    let known_acc = if known_idx.is_empty() {
        None
    } else {
        let m = matching.ok_or(MetricsError::MissingMatching)?;
        let hits = known_idx
            .iter()
            .filter(|&&i| m.group_of(truth[i]) == Some(pred[i]))
            .count();
        Some(hits as f64 / known_idx.len() as f64)
    };

    let novel_acc = if novel_idx.is_empty() {
        None
    } else {
        let open_groups: BTreeSet<usize> = match matching {
            Some(m) => m.unmatched_groups().into_iter().collect(),
            None => (0..group_count).collect(),
        };
        let kept: Vec<usize> = novel_idx.iter().copied().filter(|&i| open_groups.contains(&pred[i])).collect();
        let matched = if kept.is_empty() {
            0.0
        } else {
            let p: Vec<usize> = kept.iter().map(|&i| pred[i]).collect();
            let t: Vec<usize> = kept.iter().map(|&i| truth[i]).collect();
            let c = contingency(&p, &t);
            max_benefit_assignment(&c.counts).1
        };
        Some(matched / novel_idx.len() as f64)
    };

    let class_ids: Vec<usize> = truth.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let width = group_count.max(pred.iter().max().map_or(0, |m| m + 1));
    let mut confusion = vec![vec![0usize; width]; class_ids.len()];
    for (&p, &t) in pred.iter().zip(truth) {
        let ci = class_ids.binary_search(&t).expect("collected above");
        confusion[ci][p] += 1;
    }

    Ok(EvalReport {
        known_acc,
        novel_acc,
        all_acc: clustering_accuracy(pred, truth)?,
        nmi: nmi(pred, truth)?,
        estimated_class_count: group_count,
        population: pred.len(),
        class_ids,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_fixtures() {
        assert_eq!(clustering_accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(clustering_accuracy(&[3, 1, 2], &[3, 1, 2]).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&[], &[]).unwrap_err(), MetricsError::Empty);
        assert!(matches!(
            clustering_accuracy(&[0], &[0, 1]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn constant_prediction_scores_largest_class_share() {
        let acc = clustering_accuracy(&[0; 6], &[0, 0, 0, 1, 1, 2]).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn nmi_fixtures() {
        assert!((nmi(&[0, 0, 1, 1, 2], &[5, 5, 7, 7, 9]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap(), 0.0);
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-12);
        assert_eq!(nmi(&[4, 4], &[1, 1]).unwrap(), 1.0);
    }

    fn matching(pairs: &[(usize, usize)], groups: usize) -> ClassGroupMatching {
        ClassGroupMatching {
            class_to_group: pairs.iter().copied().collect(),
            per_class_accuracy: pairs.iter().map(|&(c, _)| (c, 1.0)).collect(),
            matched: 0,
            total: 0,
            group_count: groups,
        }
    }

    #[test]
    fn perfect_model_scores_one_everywhere() {
        let truth = [0, 0, 1, 1, 2, 2, 3, 3];
        let pred = [1, 1, 0, 0, 3, 3, 2, 2];
        let known: BTreeSet<usize> = [0, 1].into();
        let r = open_world_report(&pred, &truth, &known, Some(&matching(&[(0, 1), (1, 0)], 4)), 4).unwrap();
        assert_eq!(r.known_acc, Some(1.0));
        assert_eq!(r.novel_acc, Some(1.0));
        assert_eq!(r.all_acc, 1.0);
        assert!((r.nmi - 1.0).abs() < 1e-12);
        assert_eq!(r.confusion.iter().flatten().sum::<usize>(), 8);
    }

    #[test]
    fn hand_computed_eight_instance_fixture() {
        // classes 0,1 known (matched to groups 0,1); classes 2,3 novel; 4 groups
        let truth = [0, 0, 1, 1, 2, 2, 3, 3];
        let pred = [0, 1, 1, 1, 2, 0, 3, 2];
        let known: BTreeSet<usize> = [0, 1].into();
        let r = open_world_report(&pred, &truth, &known, Some(&matching(&[(0, 0), (1, 1)], 4)), 4).unwrap();
        // known: idx0 ok, idx1 wrong, idx2 ok, idx3 ok -> 3/4
        assert_eq!(r.known_acc, Some(0.75));
        // novel kept in groups {2,3}: (2->2), (3->3), (3->2); idx5 in group 0 is an error.
        // best map 2->2, 3->3 hits 2 of 4 novel instances
        assert_eq!(r.novel_acc, Some(0.5));
        // all: contingency rows classes, cols groups:
        // c0: g0 1, g1 1; c1: g1 2; c2: g2 1, g0 1; c3: g3 1, g2 1
        // best: c0-g0 1, c1-g1 2, c2-g2 1, c3-g3 1 = 5/8
        assert_eq!(r.all_acc, 5.0 / 8.0);
        assert_eq!(r.confusion[1], vec![0, 2, 0, 0]);
    }

    #[test]
    fn all_novel_in_one_group_is_bounded_by_largest_share() {
        let truth = [0, 1, 2, 2, 3, 3, 3];
        let pred = [0, 1, 2, 2, 2, 2, 2];
        let known: BTreeSet<usize> = [0, 1].into();
        let r = open_world_report(&pred, &truth, &known, Some(&matching(&[(0, 0), (1, 1)], 3)), 3).unwrap();
        assert!(r.novel_acc.unwrap() <= 3.0 / 5.0 + 1e-12);
    }

    #[test]
    fn missing_matching_is_rejected_when_known_instances_exist() {
        let known: BTreeSet<usize> = [0].into();
        assert_eq!(
            open_world_report(&[0, 1], &[0, 1], &known, None, 2).unwrap_err(),
            MetricsError::MissingMatching
        );
        let r = open_world_report(&[0, 1], &[0, 1], &BTreeSet::new(), None, 2).unwrap();
        assert_eq!(r.known_acc, None);
        assert_eq!(r.novel_acc, Some(1.0));
    }
}
