//! Objective terms and their analytic gradients.
//!
//! The combined objective is
//! `proto + group + lambda1 * reg + lambda2 * ce` where
//!
//! * `proto` pulls the prototype assignments of a positive pair together
//!   (`-log cos(p, p')`),
//! * `group` is a symmetric cross-entropy between the pair's group
//!   assignments,
//! * `reg` is `KL(mean p || prior)` over the batch,
//! * `ce` is cross-entropy of labeled rows against their matched group.
//!
//! Every probability that enters a logarithm is clamped at [`LOG_EPS`].
//! Gradients flow through both sides of every pair.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{dot, norm, Matrix};
use crate::prototypes::{
    assign_groups, assign_prototypes, AssignmentMatrix, GroupPartition, Level, PrototypeBank, PrototypeError,
};

pub const LOG_EPS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("group label {label} out of range for {groups} groups (row {row})")]
    LabelOutOfRange { row: usize, label: usize, groups: usize },
    #[error("invalid pairing: {0}")]
    Pairing(String),
    #[error(transparent)]
    Prototype(#[from] PrototypeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub proto: f64,
    pub group: f64,
    pub reg: f64,
    pub ce: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossBreakdown {
    pub fn new(proto: f64, group: f64, reg: f64, ce: f64, lambda1: f64, lambda2: f64) -> Self {
        Self {
            proto,
            group,
            reg,
            ce,
            total: proto + group + lambda1 * reg + lambda2 * ce,
            lambda1,
            lambda2,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.proto, self.group, self.reg, self.ce, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairKind {
    LabeledSameClass,
    UnlabeledNearestNeighbor,
}

/// Anchor/positive index pairs into one mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositivePairing {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub kinds: Vec<PairKind>,
}

impl PositivePairing {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn validate(&self, batch: usize) -> Result<(), LossError> {
        if self.anchors.len() != self.positives.len() || self.anchors.len() != self.kinds.len() {
            return Err(LossError::Pairing("ragged pairing".into()));
        }
        for (&a, &p) in self.anchors.iter().zip(&self.positives) {
            if a >= batch || p >= batch {
                return Err(LossError::Pairing(format!("index out of batch of {batch}")));
            }
            if a == p {
                return Err(LossError::Pairing(format!("instance {a} paired with itself")));
            }
        }
        Ok(())
    }
}

fn clamp_log(x: f64) -> f64 {
    x.max(LOG_EPS).ln()
}

fn check_pair_shapes(a: &AssignmentMatrix, b: &AssignmentMatrix) {
    assert_eq!(
        (a.rows(), a.cols()),
        (b.rows(), b.cols()),
        "anchor and positive assignments differ in shape"
    );
}

/// Cosine of two probability rows clamped into `[LOG_EPS, 1]`, plus whether
/// the clamp is inactive (so the gradient is non-zero).
fn pair_cosine(a: &[f64], b: &[f64]) -> (f64, bool) {
    let c = dot(a, b) / (norm(a) * norm(b));
    if c < LOG_EPS {
        (LOG_EPS, false)
    } else if c > 1.0 {
        (1.0, false)
    } else {
        (c, true)
    }
}

fn proto_pair(a: &[f64], b: &[f64]) -> f64 {
    -pair_cosine(a, b).0.ln()
}

fn group_pair(a: &[f64], b: &[f64]) -> f64 {
    -a.iter()
        .zip(b)
        .map(|(&qa, &qb)| qb * clamp_log(qa) + qa * clamp_log(qb))
        .sum::<f64>()
}

/// Mean over rows of `-log(clamp(cos(p_i, p'_i)))`.
pub fn proto_loss(p_anchor: &AssignmentMatrix, p_positive: &AssignmentMatrix) -> f64 {
    check_pair_shapes(p_anchor, p_positive);
    let n = p_anchor.rows();
    if n == 0 {
        return 0.0;
    }
    (0..n)
        .map(|i| proto_pair(p_anchor.row(i), p_positive.row(i)))
        .sum::<f64>()
        / n as f64
}

/// Mean over rows of `-(q' . log q + q . log q')`.
pub fn group_loss(q_anchor: &AssignmentMatrix, q_positive: &AssignmentMatrix) -> f64 {
    check_pair_shapes(q_anchor, q_positive);
    let n = q_anchor.rows();
    if n == 0 {
        return 0.0;
    }
    (0..n)
        .map(|i| group_pair(q_anchor.row(i), q_positive.row(i)))
        .sum::<f64>()
        / n as f64
}

/// Column mean of `p_all`.
pub fn marginal(p_all: &AssignmentMatrix) -> Vec<f64> {
    let mut m = vec![0.0; p_all.cols()];
    for i in 0..p_all.rows() {
        for (acc, v) in m.iter_mut().zip(p_all.row(i)) {
            *acc += v;
        }
    }
    let n = p_all.rows().max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

/// `KL(marginal(p_all) || prior)`.
pub fn reg_loss(p_all: &AssignmentMatrix, prior: &[f64]) -> f64 {
    assert_eq!(p_all.cols(), prior.len(), "prior length differs from prototype count");
    if p_all.rows() == 0 {
        return 0.0;
    }
    marginal(p_all)
        .iter()
        .zip(prior)
        .filter(|(&m, _)| m > 0.0)
        .map(|(&m, &pi)| m * (m / pi).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Mean of `-log q_i[y_i]` over the given rows.
pub fn ce_loss(q_labeled: &AssignmentMatrix, group_labels: &[usize]) -> Result<f64, LossError> {
    if q_labeled.rows() != group_labels.len() {
        return Err(LossError::Shape(format!(
            "{} rows but {} labels",
            q_labeled.rows(),
            group_labels.len()
        )));
    }
    if group_labels.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, &y) in group_labels.iter().enumerate() {
        if y >= q_labeled.cols() {
            return Err(LossError::LabelOutOfRange {
                row: i,
                label: y,
                groups: q_labeled.cols(),
            });
        }
        total -= clamp_log(q_labeled.row(i)[y]);
    }
    Ok(total / group_labels.len() as f64)
}

/// Everything the combined objective needs for one mini-batch.
///
/// `anchor_z` holds the augmented views and `clean_z` the un-augmented views
/// of the same instances. Pair `i` compares `anchor_z[anchors[i]]` with
/// `clean_z[positives[i]]`. Regularization and cross-entropy use `clean_z`.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub anchor_z: &'a Matrix,
    pub clean_z: &'a Matrix,
    pub bank: &'a PrototypeBank,
    pub partition: &'a GroupPartition,
    pub pairing: &'a PositivePairing,
    /// Matched group id per clean row; `None` for unlabeled rows.
    pub group_labels: &'a [Option<usize>],
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub anchor_z: Matrix,
    pub clean_z: Matrix,
    pub prototypes: Matrix,
}

/// Combined loss and its gradients with respect to both embedding views and
/// the prototype coordinates.
pub fn total_loss_and_grads(inp: &LossInputs<'_>) -> Result<(LossBreakdown, LossGradients), LossError> {
    let b = inp.clean_z.rows();
    let k = inp.bank.len();
    let d = inp.bank.dim();
    if inp.anchor_z.rows() != b || inp.anchor_z.cols() != d || inp.clean_z.cols() != d {
        return Err(LossError::Shape("anchor and clean views must both be B x d".into()));
    }
    if inp.group_labels.len() != b {
        return Err(LossError::Shape("one group label slot per row required".into()));
    }
    if inp.partition.len() != k {
        return Err(PrototypeError::PartitionSize {
            expected: k,
            partition: inp.partition.len(),
        }
        .into());
    }
    inp.pairing.validate(b)?;
    let groups = inp.partition.group_count();

    let pa = assign_prototypes(inp.anchor_z, inp.bank)?;
    let pc = assign_prototypes(inp.clean_z, inp.bank)?;
    let qa = assign_groups(&pa, inp.partition)?;
    let qc = assign_groups(&pc, inp.partition)?;

    // dL/dp for both views, assembled in a fixed order.
    let mut dpa = Matrix::zeros(b, k);
    let mut dpc = Matrix::zeros(b, k);

    let n_pairs = inp.pairing.len();
    let mut proto = 0.0;
    let mut group = 0.0;
    if n_pairs > 0 {
        let w = 1.0 / n_pairs as f64;
        let mut dqa = vec![0.0; groups];
        let mut dqb = vec![0.0; groups];
        for (&ai, &pi) in inp.pairing.anchors.iter().zip(&inp.pairing.positives) {
            let (a, bb) = (pa.row(ai), pc.row(pi));
            let (cos, active) = pair_cosine(a, bb);
            proto -= cos.ln();
            if active {
                let (na, nb) = (norm(a), norm(bb));
                let scale = -w / cos;
                let ra = dpa.row_mut(ai);
                for j in 0..k {
                    ra[j] += scale * (bb[j] / (na * nb) - cos * a[j] / (na * na));
                }
                let rb = dpc.row_mut(pi);
                for j in 0..k {
                    rb[j] += scale * (a[j] / (na * nb) - cos * bb[j] / (nb * nb));
                }
            }

            let (ga, gb) = (qa.row(ai), qc.row(pi));
            group += group_pair(ga, gb);
            for g in 0..groups {
                let inv_a = if ga[g] > LOG_EPS { gb[g] / ga[g] } else { 0.0 };
                let inv_b = if gb[g] > LOG_EPS { ga[g] / gb[g] } else { 0.0 };
                dqa[g] = -w * (inv_a + clamp_log(gb[g]));
                dqb[g] = -w * (inv_b + clamp_log(ga[g]));
            }
            let ra = dpa.row_mut(ai);
            for (j, v) in ra.iter_mut().enumerate() {
                *v += dqa[inp.partition.group_of(j)];
            }
            let rb = dpc.row_mut(pi);
            for (j, v) in rb.iter_mut().enumerate() {
                *v += dqb[inp.partition.group_of(j)];
            }
        }
        proto *= w;
        group *= w;
    }

    let prior = crate::prototypes::prototype_prior(inp.partition);
    let reg = reg_loss(&pc, &prior);
    if inp.lambda1 != 0.0 && b > 0 {
        let m = marginal(&pc);
        let coef: Vec<f64> = m
            .iter()
            .zip(&prior)
            .map(|(&mk, &pk)| inp.lambda1 / b as f64 * ((mk / pk).ln() + 1.0))
            .collect();
        for i in 0..b {
            for (v, c) in dpc.row_mut(i).iter_mut().zip(&coef) {
                *v += c;
            }
        }
    }

    let labeled: Vec<(usize, usize)> = inp
        .group_labels
        .iter()
        .enumerate()
        .filter_map(|(i, g)| g.map(|g| (i, g)))
        .collect();
    let mut ce = 0.0;
    if !labeled.is_empty() {
        let w = 1.0 / labeled.len() as f64;
        for &(i, y) in &labeled {
            if y >= groups {
                return Err(LossError::LabelOutOfRange {
                    row: i,
                    label: y,
                    groups,
                });
            }
            let qy = qc.row(i)[y];
            ce -= clamp_log(qy);
            if inp.lambda2 != 0.0 && qy > LOG_EPS {
                let g = -inp.lambda2 * w / qy;
                for (j, v) in dpc.row_mut(i).iter_mut().enumerate() {
                    if inp.partition.group_of(j) == y {
                        *v += g;
                    }
                }
            }
        }
        ce *= w;
    }

    let breakdown = LossBreakdown::new(proto, group, reg, ce, inp.lambda1, inp.lambda2);

    let mut d_protos = Matrix::zeros(k, d);
    let d_anchor = softmax_backward(&pa, &dpa, inp.anchor_z, inp.bank, &mut d_protos);
    let d_clean = softmax_backward(&pc, &dpc, inp.clean_z, inp.bank, &mut d_protos);

    Ok((
        breakdown,
        LossGradients {
            anchor_z: d_anchor,
            clean_z: d_clean,
            prototypes: d_protos,
        },
    ))
}

/// Pulls `dL/dp` back through `p = softmax(z C^T / tau)`. Returns `dL/dz` and
/// accumulates `dL/dC` into `d_protos`.
fn softmax_backward(
    p: &AssignmentMatrix,
    dp: &Matrix,
    z: &Matrix,
    bank: &PrototypeBank,
    d_protos: &mut Matrix,
) -> Matrix {
    debug_assert_eq!(p.level, Level::Prototype);
    let (b, k, d) = (p.rows(), p.cols(), bank.dim());
    debug_assert_eq!(z.cols(), d);
    let inv_tau = 1.0 / bank.temperature;
    let mut dz = Matrix::zeros(b, d);
    for i in 0..b {
        let (pi, dpi) = (p.row(i), dp.row(i));
        let inner = dot(pi, dpi);
        let zi = z.row(i);
        for kk in 0..k {
            let ds = pi[kk] * (dpi[kk] - inner) * inv_tau;
            if ds == 0.0 {
                continue;
            }
            let c = bank.vectors.row(kk);
            for (dzv, cv) in dz.row_mut(i).iter_mut().zip(c) {
                *dzv += ds * cv;
            }
            for (dcv, zv) in d_protos.row_mut(kk).iter_mut().zip(zi) {
                *dcv += ds * zv;
            }
        }
    }
    dz
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    fn am(rows: &[&[f64]], level: Level) -> AssignmentMatrix {
        AssignmentMatrix {
            probs: Matrix::from_rows(rows),
            level,
        }
    }

    #[test]
    fn proto_loss_fixtures() {
        let p = am(&[&[0.2, 0.5, 0.3], &[0.9, 0.05, 0.05]], Level::Prototype);
        assert!(proto_loss(&p, &p).abs() < 1e-9);

        let a = am(&[&[1.0, 0.0]], Level::Prototype);
        let b = am(&[&[0.0, 1.0]], Level::Prototype);
        assert!((proto_loss(&a, &b) - 18.420_680_743_952_367).abs() < 1e-9);

        let a = am(&[&[0.6, 0.4]], Level::Prototype);
        let b = am(&[&[0.4, 0.6]], Level::Prototype);
        // cos = 0.48 / 0.52
        let expected = -(0.48f64 / 0.52).ln();
        assert!((proto_loss(&a, &b) - expected).abs() < 1e-12);
        assert!((proto_loss(&a, &b) - 0.080043).abs() < 1e-5);
    }

    #[test]
    fn group_loss_fixtures() {
        let q = am(&[&[0.5, 0.5]], Level::Group);
        assert!((group_loss(&q, &q) - 2.0 * 2f64.ln()).abs() < 1e-12);

        let e = LOG_EPS;
        let q = am(&[&[1.0 - e, e]], Level::Group);
        let v = group_loss(&q, &q);
        // 2e|ln e| plus the -(1-e)ln(1-e) ~ e contribution of each side
        assert!(v >= 0.0 && v <= 2.0 * e * (e.ln().abs() + 1.0) + 1e-12, "{v}");

        let a = am(&[&[0.7, 0.3], &[0.1, 0.9]], Level::Group);
        let b = am(&[&[0.2, 0.8], &[0.6, 0.4]], Level::Group);
        assert_eq!(group_loss(&a, &b), group_loss(&b, &a));
    }

    #[test]
    fn reg_loss_fixtures() {
        let p = am(&[&[0.5, 0.5]], Level::Prototype);
        assert!(reg_loss(&p, &[0.5, 0.5]).abs() < 1e-12);
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        let v = reg_loss(&p, &[0.25, 0.75]);
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.143841).abs() < 1e-5);
        // marginal over two rows equals the prior
        let p = am(&[&[0.8, 0.2], &[0.2, 0.8]], Level::Prototype);
        assert!(reg_loss(&p, &[0.5, 0.5]).abs() < 1e-12);
    }

    #[test]
    fn ce_loss_fixtures() {
        let q = am(&[&[1.0, 0.0], &[0.0, 1.0]], Level::Group);
        assert_eq!(ce_loss(&q, &[0, 1]).unwrap(), 0.0);
        let q = am(&[&[0.1, 0.9]], Level::Group);
        assert!((ce_loss(&q, &[1]).unwrap() - 0.105_360_515_657_826_3).abs() < 1e-12);
        let q = am(&[&[0.25; 4], &[0.25; 4]], Level::Group);
        assert!((ce_loss(&q, &[0, 3]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(
            ce_loss(&q, &[0, 4]),
            Err(LossError::LabelOutOfRange { label: 4, .. })
        ));
    }

    #[test]
    fn pairing_validation() {
        let ok = PositivePairing {
            anchors: vec![0, 1],
            positives: vec![1, 0],
            kinds: vec![PairKind::UnlabeledNearestNeighbor; 2],
        };
        assert!(ok.validate(2).is_ok());
        let selfpair = PositivePairing {
            anchors: vec![0],
            positives: vec![0],
            kinds: vec![PairKind::LabeledSameClass],
        };
        assert!(selfpair.validate(2).is_err());
    }
}
