//! Progressive prototype grouping.
//!
//! Each instance "represents" its top-kappa prototypes. Two prototypes are
//! similar when their sets of represented instances overlap (Jaccard), and
//! groups are the connected components of the graph that keeps only pairs
//! above a threshold. The threshold itself is chosen by how well the
//! resulting groups recover the labeled known classes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hungarian::max_benefit_assignment;
use crate::numerics::Matrix;
use crate::par;
use crate::prototypes::{assign_groups, AssignmentMatrix, GroupPartition, PrototypeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupingError {
    #[error("{groups} groups cannot host {classes} known classes")]
    InfeasibleMatching { groups: usize, classes: usize },
    #[error("kappa {kappa} must be in 1..={k}")]
    InvalidKappa { kappa: usize, k: usize },
    #[error("threshold selection needs at least one labeled instance")]
    NoLabels,
    #[error("{rows} assignment rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error(transparent)]
    Prototype(#[from] PrototypeError),
}

/// For every prototype, the sorted indices of the instances that rank it
/// among their top-kappa assignments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepresentingSets {
    pub sets: Vec<Vec<usize>>,
    pub kappa: usize,
}

/// Symmetric prototype-to-prototype Jaccard affinity.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix(pub Matrix);

impl AffinityMatrix {
    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    /// Distinct off-diagonal values, ascending.
    pub fn distinct_off_diagonal(&self) -> Vec<f64> {
        let k = self.len();
        let mut vals: Vec<f64> = (0..k)
            .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        vals
    }
}

/// Injective map from known classes to groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGroupMatching {
    pub class_to_group: BTreeMap<usize, usize>,
    /// Matched accuracy of each class, keyed like `class_to_group`.
    pub per_class_accuracy: BTreeMap<usize, f64>,
    /// Labeled instances whose argmax group is their class's group.
    pub matched: usize,
    pub total: usize,
    pub group_count: usize,
}

impl ClassGroupMatching {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matched as f64 / self.total as f64
        }
    }

    pub fn group_of(&self, class: usize) -> Option<usize> {
        self.class_to_group.get(&class).copied()
    }

    /// Groups not claimed by any known class, ascending.
    pub fn unmatched_groups(&self) -> Vec<usize> {
        let used: Vec<usize> = self.class_to_group.values().copied().collect();
        (0..self.group_count).filter(|g| !used.contains(g)).collect()
    }
}

/// Instance `i` joins the set of prototype `k` when `k` is among the `kappa`
/// largest entries of row `i`; ties go to the lower prototype index.
pub fn representing_sets(p_all: &AssignmentMatrix, kappa: usize) -> Result<RepresentingSets, GroupingError> {
    let k = p_all.cols();
    if kappa == 0 || kappa > k {
        return Err(GroupingError::InvalidKappa { kappa, k });
    }
    let tops = par::map_range(p_all.rows(), |i| top_indices(p_all.row(i), kappa));
    let mut sets = vec![Vec::new(); k];
    for (i, top) in tops.iter().enumerate() {
        for &c in top {
            sets[c].push(i);
        }
    }
    Ok(RepresentingSets { sets, kappa })
}

fn top_indices(row: &[f64], kappa: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    // stable sort keeps lower indices first among equal values
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    idx.truncate(kappa);
    idx
}

fn sorted_intersection(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// `|A ∩ B| / |A ∪ B|` for every pair of sets; two empty sets score 0.
pub fn jaccard_affinity(sets: &RepresentingSets) -> AffinityMatrix {
    let k = sets.sets.len();
    let mut m = Matrix::zeros(k, k);
    par::for_each_row_mut(m.as_mut_slice(), k, |i, row| {
        let a = &sets.sets[i];
        for (j, cell) in row.iter_mut().enumerate() {
            let b = &sets.sets[j];
            let inter = sorted_intersection(a, b);
            let union = a.len() + b.len() - inter;
            *cell = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
        }
    });
    AffinityMatrix(m)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so roots are the smallest member
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Connected components of the graph with an edge wherever `s_ij > delta`.
/// Group ids follow the order of each component's smallest prototype.
pub fn link_groups(affinity: &AffinityMatrix, delta: f64) -> GroupPartition {
    let k = affinity.len();
    let mut uf = UnionFind::new(k);
    for i in 0..k {
        for j in (i + 1)..k {
            if affinity.get(i, j) > delta {
                uf.union(i, j);
            }
        }
    }
    let roots: Vec<usize> = (0..k).map(|i| uf.find(i)).collect();
    GroupPartition::canonical(&roots)
}

/// Benefit matrix `classes x groups` of argmax hits, with the sorted class ids.
fn benefit_counts(q: &AssignmentMatrix, labels: &[usize]) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let index: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut benefit = vec![vec![0.0; q.cols()]; classes.len()];
    for (i, &y) in labels.iter().enumerate() {
        benefit[index[&y]][q.argmax(i)] += 1.0;
    }
    (classes, benefit)
}

/// Hungarian matching of known classes to groups maximizing the number of
/// labeled instances whose argmax group is their class's group.
pub fn match_classes_to_groups(
    q_labeled: &AssignmentMatrix,
    labels: &[usize],
) -> Result<ClassGroupMatching, GroupingError> {
    if q_labeled.rows() != labels.len() {
        return Err(GroupingError::LabelCount {
            rows: q_labeled.rows(),
            labels: labels.len(),
        });
    }
    let (classes, benefit) = benefit_counts(q_labeled, labels);
    if q_labeled.cols() < classes.len() {
        return Err(GroupingError::InfeasibleMatching {
            groups: q_labeled.cols(),
            classes: classes.len(),
        });
    }
    let (assignment, matched) = max_benefit_assignment(&benefit);
    let mut class_to_group = BTreeMap::new();
    let mut per_class_accuracy = BTreeMap::new();
    for (ci, &c) in classes.iter().enumerate() {
        let g = assignment[ci].expect("rows never exceed columns here");
        class_to_group.insert(c, g);
        let size: f64 = benefit[ci].iter().sum();
        per_class_accuracy.insert(c, benefit[ci][g] / size);
    }
    Ok(ClassGroupMatching {
        class_to_group,
        per_class_accuracy,
        matched: matched.round() as usize,
        total: labels.len(),
        group_count: q_labeled.cols(),
    })
}

/// How the candidate thresholds are enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdPolicy {
    /// 0, 1, every distinct off-diagonal affinity and the midpoints between
    /// consecutive ones.
    #[default]
    Observed,
    /// `steps + 1` evenly spaced values in `[0, 1]`.
    Grid { steps: usize },
}

impl ThresholdPolicy {
    pub fn candidates(&self, affinity: &AffinityMatrix) -> Vec<f64> {
        let mut c = match *self {
            ThresholdPolicy::Observed => {
                let vals = affinity.distinct_off_diagonal();
                let mut c = vec![0.0, 1.0];
                c.extend(vals.iter().copied().filter(|v| (0.0..=1.0).contains(v)));
                c.extend(vals.windows(2).map(|w| 0.5 * (w[0] + w[1])));
                c
            }
            ThresholdPolicy::Grid { steps } => {
                let steps = steps.max(1);
                (0..=steps).map(|i| i as f64 / steps as f64).collect()
            }
        };
        c.sort_by(f64::total_cmp);
        c.dedup();
        c
    }
}

/// Outcome of threshold selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdChoice {
    pub delta: f64,
    pub partition: GroupPartition,
    pub matching: Option<ClassGroupMatching>,
    /// Set when no candidate could host every known class.
    pub fallback: bool,
}

/// How threshold tuning chooses among candidates with equal labeled accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Fewest groups, then the larger threshold.
    FewerGroups,
    /// The candidate nearest the middle of the widest contiguous threshold
    /// range attaining the best accuracy. Equal widths prefer larger
    /// thresholds. Unlike `FewerGroups` this does not fold unlabeled
    /// prototypes into known groups merely because labeled accuracy is
    /// indifferent to it.
    #[default]
    WidestRange,
}

/// Picks the threshold whose partition best recovers the labeled classes.
///
/// `p_labeled` holds prototype-level assignments of the labeled instances.
/// Partitions are nested in the threshold, so each distinct group count is
/// evaluated once.
pub fn tune_threshold(
    affinity: &AffinityMatrix,
    p_labeled: &AssignmentMatrix,
    labels: &[usize],
    policy: ThresholdPolicy,
    tie_break: TieBreak,
) -> Result<ThresholdChoice, GroupingError> {
    if labels.is_empty() {
        return Err(GroupingError::NoLabels);
    }
    if p_labeled.rows() != labels.len() {
        return Err(GroupingError::LabelCount {
            rows: p_labeled.rows(),
            labels: labels.len(),
        });
    }
    let candidates = policy.candidates(affinity);
    let mut scored: BTreeMap<usize, (GroupPartition, Result<ClassGroupMatching, GroupingError>)> = BTreeMap::new();
    // (delta, group count, matched count if feasible), ascending in delta
    let mut per_candidate: Vec<(f64, usize, Option<usize>)> = Vec::with_capacity(candidates.len());
    for &delta in &candidates {
        let partition = link_groups(affinity, delta);
        let n = partition.group_count();
        let entry = scored.entry(n).or_insert_with(|| {
            let q = assign_groups(p_labeled, &partition).map_err(GroupingError::from);
            let m = q.and_then(|q| match_classes_to_groups(&q, labels));
            (partition, m)
        });
        per_candidate.push((delta, n, entry.1.as_ref().ok().map(|m| m.matched)));
    }

    let best_matched = per_candidate.iter().filter_map(|c| c.2).max();
    let pick = best_matched.map(|top| match tie_break {
        TieBreak::FewerGroups => per_candidate
            .iter()
            .filter(|c| c.2 == Some(top))
            .min_by(|a, b| a.1.cmp(&b.1).then(b.0.total_cmp(&a.0)))
            .map(|c| (c.0, c.1))
            .expect("best exists"),
        TieBreak::WidestRange => widest_run_middle(&per_candidate, top),
    });

    match pick {
        Some((delta, n)) => {
            let (partition, m) = scored.remove(&n).expect("scored above");
            Ok(ThresholdChoice {
                delta,
                partition,
                matching: m.ok(),
                fallback: false,
            })
        }
        None => {
            // every candidate had too few groups; keep the finest one
            let (&n, _) = scored.iter().next_back().expect("at least one candidate");
            let delta = per_candidate
                .iter()
                .filter(|c| c.1 == n)
                .map(|c| c.0)
                .fold(f64::NEG_INFINITY, f64::max);
            let (partition, _) = scored.remove(&n).expect("present");
            Ok(ThresholdChoice {
                delta,
                partition,
                matching: None,
                fallback: true,
            })
        }
    }
}

/// Candidate closest to the middle of the widest run of consecutive
/// candidates scoring `top`. Returns `(delta, group count)`.
fn widest_run_middle(per_candidate: &[(f64, usize, Option<usize>)], top: usize) -> (f64, usize) {
    let mut best: Option<(usize, usize)> = None; // inclusive candidate index range
    let mut i = 0;
    while i < per_candidate.len() {
        if per_candidate[i].2 != Some(top) {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < per_candidate.len() && per_candidate[i + 1].2 == Some(top) {
            i += 1;
        }
        let width = per_candidate[i].0 - per_candidate[start].0;
        let wider = best.is_none_or(|(s, e)| width >= per_candidate[e].0 - per_candidate[s].0);
        if wider {
            best = Some((start, i));
        }
        i += 1;
    }
    let (s, e) = best.expect("top is attained");
    let mid = 0.5 * (per_candidate[s].0 + per_candidate[e].0);
    let c = per_candidate[s..=e]
        .iter()
        .min_by(|a, b| (a.0 - mid).abs().total_cmp(&(b.0 - mid).abs()))
        .expect("non-empty run");
    (c.0, c.1)
}

/// Label-free threshold selection: the group count that survives over the
/// widest range of thresholds in `[0, 1]` wins, and the returned threshold is
/// the middle of that range. Ties prefer fewer groups.
pub fn select_threshold_by_persistence(affinity: &AffinityMatrix) -> ThresholdChoice {
    let mut breaks: Vec<f64> = affinity
        .distinct_off_diagonal()
        .into_iter()
        .filter(|v| *v > 0.0 && *v < 1.0)
        .collect();
    breaks.insert(0, 0.0);
    breaks.push(1.0);
    // the partition is constant on [breaks[i], breaks[i+1])
    let mut spans: Vec<(usize, f64, f64)> = Vec::new(); // (groups, start, end)
    for w in breaks.windows(2) {
        let n = link_groups(affinity, w[0]).group_count();
        match spans.last_mut() {
            Some(last) if last.0 == n => last.2 = w[1],
            _ => spans.push((n, w[0], w[1])),
        }
    }
    let mut best = spans[0];
    for &s in &spans[1..] {
        let (len, best_len) = (s.2 - s.1, best.2 - best.1);
        if len > best_len || (len == best_len && s.0 < best.0) {
            best = s;
        }
    }
    let delta = 0.5 * (best.1 + best.2);
    ThresholdChoice {
        delta,
        partition: link_groups(affinity, delta),
        matching: None,
        fallback: false,
    }
}

pub fn estimate_class_count(partition: &GroupPartition) -> usize {
    partition.group_count()
}
