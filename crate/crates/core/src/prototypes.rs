//! Prototype bank, group partition and the two assignment levels.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{dot, norm, softmax_into, Matrix, NORM_FLOOR};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrototypeError {
    #[error("prototype {index} has norm {norm:e}, below the floor")]
    DegeneratePrototype { index: usize, norm: f64 },
    #[error("embedding width {embed} does not match prototype width {proto}")]
    WidthMismatch { embed: usize, proto: usize },
    #[error("partition covers {partition} prototypes but {expected} are present")]
    PartitionSize { expected: usize, partition: usize },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("cannot seed prototypes: {0}")]
    Seeding(String),
    #[error("checkpoint parse error at line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },
}

/// `K` unit-norm prototypes plus the softmax temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub vectors: Matrix,
    pub temperature: f64,
}

impl PrototypeBank {
    /// `k` independent draws, uniform on the unit sphere in `dim` dimensions.
    pub fn random(k: usize, dim: usize, temperature: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = Matrix::zeros(k, dim);
        for i in 0..k {
            loop {
                let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let n = norm(&row);
                if n > 1e-6 {
                    for (dst, v) in vectors.row_mut(i).iter_mut().zip(&row) {
                        *dst = v / n;
                    }
                    break;
                }
            }
        }
        Self {
            vectors,
            temperature,
        }
    }

    /// k-means++ seeding over unit-norm embeddings: the first prototype is a
    /// uniformly drawn row, each further one a row drawn with probability
    /// proportional to its squared distance from the nearest chosen prototype.
    /// Rows already chosen have zero weight, so `k` must not exceed the number
    /// of distinct rows.
    pub fn seeded_from(z: &Matrix, k: usize, temperature: f64, seed: u64) -> Result<Self, PrototypeError> {
        let n = z.rows();
        if k > n {
            return Err(PrototypeError::Seeding(format!(
                "{k} prototypes requested from {n} embeddings"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = Matrix::zeros(k, z.cols());
        let mut nearest = vec![f64::INFINITY; n];
        let mut pick = rng.random_range(0..n);
        for c in 0..k {
            vectors.row_mut(c).copy_from_slice(z.row(pick));
            let chosen = z.row(pick);
            for (i, d) in nearest.iter_mut().enumerate() {
                let diff: f64 = z.row(i).iter().zip(chosen).map(|(a, b)| (a - b) * (a - b)).sum();
                *d = d.min(diff);
            }
            if c + 1 == k {
                break;
            }
            let total: f64 = nearest.iter().sum();
            if !(total > 0.0) {
                return Err(PrototypeError::Seeding(format!(
                    "embeddings have fewer than {k} distinct rows"
                )));
            }
            let mut target = rng.random_range(0.0..total);
            // rounding fallback: the last row with positive weight
            pick = nearest.iter().rposition(|&d| d > 0.0).expect("total is positive");
            for (i, &d) in nearest.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
        }
        project_in_place(&mut vectors)?;
        Ok(Self {
            vectors,
            temperature,
        })
    }

    /// Spherical Lloyd iterations: each prototype moves to the normalized mean
    /// of the rows closest to it in cosine, until assignments stop changing or
    /// `max_iters` passes. Prototypes that own no row stay put.
    pub fn refine_lloyd(&mut self, z: &Matrix, max_iters: usize) -> Result<usize, PrototypeError> {
        let k = self.len();
        let mut owner = vec![usize::MAX; z.rows()];
        for iter in 0..max_iters {
            let mut changed = false;
            for (i, o) in owner.iter_mut().enumerate() {
                let row = z.row(i);
                let best = (0..k)
                    .map(|c| (c, dot(row, self.vectors.row(c))))
                    .fold((0, f64::NEG_INFINITY), |b, x| if x.1 > b.1 { x } else { b })
                    .0;
                changed |= *o != best;
                *o = best;
            }
            if !changed {
                return Ok(iter);
            }
            let mut sums = Matrix::zeros(k, z.cols());
            let mut counts = vec![0usize; k];
            for (i, &o) in owner.iter().enumerate() {
                counts[o] += 1;
                sums.row_mut(o).iter_mut().zip(z.row(i)).for_each(|(s, v)| *s += v);
            }
            for c in (0..k).filter(|&c| counts[c] > 0) {
                let n = norm(sums.row(c));
                if n > 0.0 {
                    self.vectors.row_mut(c).iter_mut().zip(sums.row(c)).for_each(|(v, s)| *v = s / n);
                }
            }
        }
        Ok(max_iters)
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// Renormalizes every prototype to unit length.
pub fn project_prototypes(bank: &PrototypeBank) -> Result<PrototypeBank, PrototypeError> {
    let mut out = bank.clone();
    project_in_place(&mut out.vectors)?;
    Ok(out)
}

pub(crate) fn project_in_place(vectors: &mut Matrix) -> Result<(), PrototypeError> {
    for i in 0..vectors.rows() {
        let n = norm(vectors.row(i));
        if !(n > NORM_FLOOR) {
            return Err(PrototypeError::DegeneratePrototype { index: i, norm: n });
        }
        for v in vectors.row_mut(i) {
            *v /= n;
        }
    }
    Ok(())
}

/// Disjoint cover of the prototypes by groups `0..group_count`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupPartition {
    assignment: Vec<usize>,
    group_count: usize,
}

impl GroupPartition {
    pub fn singletons(k: usize) -> Self {
        Self {
            assignment: (0..k).collect(),
            group_count: k,
        }
    }

    /// Validates that ids are `0..n` with every id used.
    pub fn from_assignment(assignment: Vec<usize>) -> Result<Self, PrototypeError> {
        if assignment.is_empty() {
            return Err(PrototypeError::InvalidPartition("no prototypes".into()));
        }
        let group_count = assignment.iter().max().map_or(0, |m| m + 1);
        let mut used = vec![false; group_count];
        for &g in &assignment {
            used[g] = true;
        }
        if let Some(g) = used.iter().position(|u| !u) {
            return Err(PrototypeError::InvalidPartition(format!("group id {g} is unused")));
        }
        Ok(Self {
            assignment,
            group_count,
        })
    }

    /// Relabels arbitrary group labels so ids follow the order of each
    /// group's smallest member.
    pub fn canonical(labels: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let assignment = labels
            .iter()
            .map(|l| {
                let next = remap.len();
                *remap.entry(*l).or_insert(next)
            })
            .collect();
        Self {
            assignment,
            group_count: remap.len(),
        }
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn group_of(&self, prototype: usize) -> usize {
        self.assignment[prototype]
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.group_count];
        for &g in &self.assignment {
            sizes[g] += 1;
        }
        sizes
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.group_count];
        for (k, &g) in self.assignment.iter().enumerate() {
            groups[g].push(k);
        }
        groups
    }

    /// True when every group of `self` lies inside a single group of `coarser`.
    pub fn refines(&self, coarser: &GroupPartition) -> bool {
        if self.len() != coarser.len() {
            return false;
        }
        let mut image = vec![None; self.group_count];
        self.assignment
            .iter()
            .zip(&coarser.assignment)
            .all(|(&fine, &coarse)| match image[fine] {
                None => {
                    image[fine] = Some(coarse);
                    true
                }
                Some(c) => c == coarse,
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Prototype,
    Group,
}

/// Row-stochastic assignment probabilities at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    pub probs: Matrix,
    pub level: Level,
}

impl AssignmentMatrix {
    pub fn rows(&self) -> usize {
        self.probs.rows()
    }

    pub fn cols(&self) -> usize {
        self.probs.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.row(i)
    }

    /// Index of the largest entry of row `i` (lowest index on ties).
    pub fn argmax(&self, i: usize) -> usize {
        argmax(self.row(i))
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Softmax over `z . c_k / tau` for every row of `z`.
pub fn assign_prototypes(z: &Matrix, bank: &PrototypeBank) -> Result<AssignmentMatrix, PrototypeError> {
    if z.cols() != bank.dim() {
        return Err(PrototypeError::WidthMismatch {
            embed: z.cols(),
            proto: bank.dim(),
        });
    }
    let k = bank.len();
    let inv_tau = 1.0 / bank.temperature;
    let mut probs = Matrix::zeros(z.rows(), k);
    par::for_each_row_mut(probs.as_mut_slice(), k, |i, out| {
        let zi = z.row(i);
        let logits: Vec<f64> = bank.vectors.iter_rows().map(|c| dot(zi, c) * inv_tau).collect();
        softmax_into(&logits, out);
    });
    Ok(AssignmentMatrix {
        probs,
        level: Level::Prototype,
    })
}

/// Sums prototype probabilities within each group.
pub fn assign_groups(
    p: &AssignmentMatrix,
    partition: &GroupPartition,
) -> Result<AssignmentMatrix, PrototypeError> {
    if p.cols() != partition.len() {
        return Err(PrototypeError::PartitionSize {
            expected: p.cols(),
            partition: partition.len(),
        });
    }
    let g = partition.group_count();
    let mut probs = Matrix::zeros(p.rows(), g);
    for i in 0..p.rows() {
        let out = probs.row_mut(i);
        for (k, &v) in p.row(i).iter().enumerate() {
            out[partition.group_of(k)] += v;
        }
    }
    Ok(AssignmentMatrix {
        probs,
        level: Level::Group,
    })
}

/// Uniform over groups, then uniform over the prototypes inside a group.
pub fn prototype_prior(partition: &GroupPartition) -> Vec<f64> {
    let sizes = partition.group_sizes();
    let ng = partition.group_count() as f64;
    partition
        .assignment()
        .iter()
        .map(|&g| 1.0 / (ng * sizes[g] as f64))
        .collect()
}

/// Writes the bank as `K` comma-separated rows followed by a
/// `partition,g_0,...,g_{K-1}` line.
pub fn write_checkpoint(bank: &PrototypeBank, partition: &GroupPartition) -> String {
    let mut out = String::new();
    for row in bank.vectors.iter_rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out.push_str("partition");
    for g in partition.assignment() {
        let _ = write!(out, ",{g}");
    }
    out.push('\n');
    out
}

/// Inverse of [`write_checkpoint`].
pub fn read_checkpoint(text: &str, temperature: f64) -> Result<(PrototypeBank, GroupPartition), PrototypeError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut partition = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("partition") {
            let ids = rest
                .split(',')
                .skip(1)
                .map(|c| c.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| PrototypeError::Checkpoint {
                    line: line_no,
                    msg: e.to_string(),
                })?;
            partition = Some(GroupPartition::from_assignment(ids).map_err(|e| PrototypeError::Checkpoint {
                line: line_no,
                msg: e.to_string(),
            })?);
            continue;
        }
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| PrototypeError::Checkpoint {
                line: line_no,
                msg: e.to_string(),
            })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(PrototypeError::Checkpoint {
                    line: line_no,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let partition = partition.ok_or(PrototypeError::Checkpoint {
        line: text.lines().count(),
        msg: "missing partition line".into(),
    })?;
    if partition.len() != rows.len() {
        return Err(PrototypeError::PartitionSize {
            expected: rows.len(),
            partition: partition.len(),
        });
    }
    let bank = PrototypeBank {
        vectors: Matrix::from_rows(&rows),
        temperature,
    };
    Ok((bank, partition))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank(rows: &[&[f64]], tau: f64) -> PrototypeBank {
        PrototypeBank {
            vectors: Matrix::from_rows(rows),
            temperature: tau,
        }
    }

    #[test]
    fn lloyd_moves_prototypes_to_cell_means_and_leaves_idle_ones() {
        let unit = |x: f64, y: f64| {
            let n = x.hypot(y);
            vec![x / n, y / n]
        };
        let z = Matrix::from_rows(&[unit(1.0, 0.1), unit(1.0, -0.1), unit(0.1, 1.0), unit(-0.1, 1.0)]);
        let mut bank = PrototypeBank {
            vectors: Matrix::from_rows(&[unit(1.0, 0.5), unit(0.3, 1.0), unit(-1.0, -1.0)]),
            temperature: 1.0,
        };
        let idle = bank.vectors.row(2).to_vec();
        let iters = bank.refine_lloyd(&z, 10).unwrap();
        assert_eq!(iters, 1);
        assert!((bank.vectors.row(0)[0] - 1.0).abs() < 1e-12 && bank.vectors.row(0)[1].abs() < 1e-12);
        assert!(bank.vectors.row(1)[0].abs() < 1e-12 && (bank.vectors.row(1)[1] - 1.0).abs() < 1e-12);
        assert_eq!(bank.vectors.row(2), idle.as_slice());
    }

    #[test]
    fn two_prototype_softmax_fixtures() {
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]], 1.0);
        let z = Matrix::from_rows(&[[1.0, 0.0]]);
        let p = assign_prototypes(&z, &b).unwrap();
        // 1 / (1 + e^-1)
        assert!((p.row(0)[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((p.row(0)[1] - 0.268_941_421_369_995_1).abs() < 1e-12);

        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]], 0.1);
        let p = assign_prototypes(&z, &b).unwrap();
        // 1 / (1 + e^-10)
        assert!((p.row(0)[0] - 0.999_954_602_131_297_6).abs() < 1e-12);
        assert!((p.row(0)[1] - 4.539_786_870_243_442e-5).abs() < 1e-15);
    }

    #[test]
    fn equidistant_embedding_gets_uniform_row() {
        let b = bank(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]], 0.1);
        let s = 1.0 / 3f64.sqrt();
        let p = assign_prototypes(&Matrix::from_rows(&[[s, s, s]]), &b).unwrap();
        for v in p.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let b = bank(&[&[1.0, 0.0]], 0.1);
        assert!(assign_prototypes(&Matrix::zeros(1, 3), &b).is_err());
    }

    #[test]
    fn group_assignment_fixtures() {
        let p = AssignmentMatrix {
            probs: Matrix::from_rows(&[[0.5, 0.3, 0.2]]),
            level: Level::Prototype,
        };
        let part = GroupPartition::from_assignment(vec![0, 0, 1]).unwrap();
        let q = assign_groups(&p, &part).unwrap();
        assert!((q.row(0)[0] - 0.8).abs() < 1e-15 && (q.row(0)[1] - 0.2).abs() < 1e-15);
        assert_eq!(q.level, Level::Group);

        let q = assign_groups(&p, &GroupPartition::singletons(3)).unwrap();
        assert_eq!(q.probs, p.probs);

        let q = assign_groups(&p, &GroupPartition::from_assignment(vec![0, 0, 0]).unwrap()).unwrap();
        assert!((q.row(0)[0] - 1.0).abs() < 1e-15);

        let short = GroupPartition::from_assignment(vec![0, 1]).unwrap();
        assert!(matches!(
            assign_groups(&p, &short),
            Err(PrototypeError::PartitionSize { .. })
        ));
    }

    #[test]
    fn prior_fixtures() {
        assert_eq!(prototype_prior(&GroupPartition::singletons(4)), vec![0.25; 4]);
        let part = GroupPartition::from_assignment(vec![0, 0, 1, 2]).unwrap();
        let prior = prototype_prior(&part);
        let expected = [1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in prior.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((prior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_fixtures() {
        let b = bank(&[&[2.0, 0.0, 0.0], &[0.0, 0.6, 0.8]], 0.1);
        let out = project_prototypes(&b).unwrap();
        assert_eq!(out.vectors.row(0), &[1.0, 0.0, 0.0]);
        for (a, b) in out.vectors.row(1).iter().zip(b.vectors.row(1)) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = bank(&[&[1.0, 0.0], &[0.0, 0.0]], 0.1);
        assert!(matches!(
            project_prototypes(&zero),
            Err(PrototypeError::DegeneratePrototype { index: 1, .. })
        ));
    }

    #[test]
    fn random_bank_is_unit_norm_and_seeded() {
        let a = PrototypeBank::random(10, 5, 0.1, 9);
        assert_eq!(a, PrototypeBank::random(10, 5, 0.1, 9));
        assert_ne!(a, PrototypeBank::random(10, 5, 0.1, 10));
        for r in a.vectors.iter_rows() {
            assert!((norm(r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_validation_and_refinement() {
        assert!(GroupPartition::from_assignment(vec![0, 2]).is_err());
        let canon = GroupPartition::canonical(&[7, 7, 3, 9, 3]);
        assert_eq!(canon.assignment(), &[0, 0, 1, 2, 1]);
        assert_eq!(canon.group_count(), 3);
        let coarse = GroupPartition::from_assignment(vec![0, 0, 1, 0, 1]).unwrap();
        assert!(canon.refines(&coarse));
        assert!(!coarse.refines(&canon));
    }

    #[test]
    fn checkpoint_round_trip() {
        let b = PrototypeBank::random(4, 3, 0.1, 1);
        let part = GroupPartition::from_assignment(vec![0, 1, 0, 2]).unwrap();
        let text = write_checkpoint(&b, &part);
        let (b2, p2) = read_checkpoint(&text, 0.1).unwrap();
        assert_eq!(b2, b);
        assert_eq!(p2, part);
        assert!(read_checkpoint("1.0,2.0\n1.0\npartition,0,0\n", 0.1).is_err());
        assert!(read_checkpoint("1.0,2.0\n", 0.1).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn setup() -> impl Strategy<Value = (Matrix, PrototypeBank)> {
            (1usize..6, 2usize..8, 1usize..6, 0.05f64..2.0, any::<u64>()).prop_map(|(b, k, d, tau, seed)| {
                let bank = PrototypeBank::random(k, d + 1, tau, seed);
                let z = PrototypeBank::random(b, d + 1, tau, seed.wrapping_add(1)).vectors;
                (z, bank)
            })
        }

        proptest! {
            #[test]
            fn rows_are_stochastic_and_positive((z, bank) in setup()) {
                let p = assign_prototypes(&z, &bank).unwrap();
                for i in 0..p.rows() {
                    prop_assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    prop_assert!(p.row(i).iter().all(|&v| v > 0.0 && v <= 1.0));
                }
            }

            #[test]
            fn lower_temperature_sharpens((z, bank) in setup()) {
                let p = assign_prototypes(&z, &bank).unwrap();
                let cold = PrototypeBank { temperature: bank.temperature * 0.5, ..bank.clone() };
                let pc = assign_prototypes(&z, &cold).unwrap();
                for i in 0..p.rows() {
                    let sims: Vec<f64> = bank.vectors.iter_rows().map(|c| dot(z.row(i), c)).collect();
                    let top = argmax(&sims);
                    let unique = sims.iter().enumerate().all(|(j, &s)| j == top || s < sims[top] - 1e-9);
                    let hi = p.row(i).iter().cloned().fold(0.0, f64::max);
                    let hc = pc.row(i).iter().cloned().fold(0.0, f64::max);
                    if unique && bank.len() > 1 && hi < 1.0 {
                        prop_assert!(hc > hi);
                    }
                }
            }

            #[test]
            fn prior_sums_to_one(labels in prop::collection::vec(0usize..6, 1..40)) {
                let part = GroupPartition::canonical(&labels);
                let prior = prototype_prior(&part);
                prop_assert!((prior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
