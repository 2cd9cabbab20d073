//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use protogroup::encoder::{Activation, Encoder, EncoderConfig};
use protogroup::losses::{
    ce_loss, group_loss, proto_loss, reg_loss, total_loss_and_grads, LossInputs, PairKind, PositivePairing,
};
use protogroup::numerics::{finite_diff_gradient, relative_error, Matrix};
use protogroup::prototypes::{
    assign_groups, assign_prototypes, prototype_prior, AssignmentMatrix, GroupPartition, PrototypeBank,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random small model plus one batch with a fixed pairing.
pub struct GradientCase {
    pub encoder: Encoder,
    pub params: Vec<f64>,
    pub clean_x: Matrix,
    pub anchor_x: Matrix,
    pub bank: PrototypeBank,
    pub partition: GroupPartition,
    pub pairing: PositivePairing,
    pub group_labels: Vec<Option<usize>>,
    pub lambda1: f64,
    pub lambda2: f64,
}

pub fn random_gradient_case(seed: u64, batch: usize, k: usize, dim: usize, groups: usize) -> GradientCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = 5;
    let encoder = Encoder::new(EncoderConfig {
        input_dim,
        hidden_dims: vec![7],
        embed_dim: dim,
        activation: Activation::Tanh,
        seed,
    })
    .unwrap();
    let params = encoder.init_params().0;
    let clean: Vec<f64> = (0..batch * input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let anchor: Vec<f64> = clean.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    // moderate temperature keeps every probability far above the log clamp
    let temperature = rng.random_range(0.3..1.0);
    let bank = PrototypeBank::random(k, dim, temperature, seed ^ 0xABCD);
    // every group non-empty: first `groups` prototypes seed them, the rest are random
    let mut assignment: Vec<usize> = (0..k).map(|i| if i < groups { i } else { rng.random_range(0..groups) }).collect();
    assignment.rotate_left(rng.random_range(0..k));
    let partition = GroupPartition::from_assignment(assignment).unwrap();
    let group_labels: Vec<Option<usize>> = (0..batch)
        .map(|i| (i % 2 == 0).then(|| rng.random_range(0..groups)))
        .collect();
    let mut pairing = PositivePairing {
        anchors: Vec::new(),
        positives: Vec::new(),
        kinds: Vec::new(),
    };
    for i in 0..batch {
        let mut j = rng.random_range(0..batch - 1);
        if j >= i {
            j += 1;
        }
        pairing.anchors.push(i);
        pairing.positives.push(j);
        pairing.kinds.push(if group_labels[i].is_some() {
            PairKind::LabeledSameClass
        } else {
            PairKind::UnlabeledNearestNeighbor
        });
    }
    GradientCase {
        encoder,
        params,
        clean_x: Matrix::from_vec(batch, input_dim, clean),
        anchor_x: Matrix::from_vec(batch, input_dim, anchor),
        bank,
        partition,
        pairing,
        group_labels,
        lambda1: rng.random_range(0.5..2.0),
        lambda2: rng.random_range(0.5..2.0),
    }
}

fn rows(m: &AssignmentMatrix, idx: &[usize]) -> AssignmentMatrix {
    AssignmentMatrix {
        probs: m.probs.select_rows(idx),
        level: m.level,
    }
}

/// Total objective evaluated only through the standalone loss terms, as a
/// function of the flat `[encoder params, prototype coordinates]` vector.
pub fn oracle_objective(case: &GradientCase, theta: &[f64]) -> f64 {
    let n_enc = case.params.len();
    let bank = PrototypeBank {
        vectors: Matrix::from_vec(case.bank.len(), case.bank.dim(), theta[n_enc..].to_vec()),
        temperature: case.bank.temperature,
    };
    let za = case.encoder.encode(&case.anchor_x, &theta[..n_enc]).unwrap();
    let zc = case.encoder.encode(&case.clean_x, &theta[..n_enc]).unwrap();
    let pa = assign_prototypes(&za, &bank).unwrap();
    let pc = assign_prototypes(&zc, &bank).unwrap();
    let qa = assign_groups(&pa, &case.partition).unwrap();
    let qc = assign_groups(&pc, &case.partition).unwrap();
    let (an, po) = (&case.pairing.anchors, &case.pairing.positives);
    let proto = proto_loss(&rows(&pa, an), &rows(&pc, po));
    let group = group_loss(&rows(&qa, an), &rows(&qc, po));
    let reg = reg_loss(&pc, &prototype_prior(&case.partition));
    let labeled: Vec<usize> = (0..case.group_labels.len()).filter(|&i| case.group_labels[i].is_some()).collect();
    let ce = if labeled.is_empty() {
        0.0
    } else {
        let y: Vec<usize> = labeled.iter().map(|&i| case.group_labels[i].unwrap()).collect();
        ce_loss(&rows(&qc, &labeled), &y).unwrap()
    };
    proto + group + case.lambda1 * reg + case.lambda2 * ce
}

/// Analytic gradient through the loss module and both encoder passes.
pub fn analytic_gradient(case: &GradientCase) -> (f64, Vec<f64>) {
    let za = case.encoder.encode(&case.anchor_x, &case.params).unwrap();
    let zc = case.encoder.encode(&case.clean_x, &case.params).unwrap();
    let (loss, g) = total_loss_and_grads(&LossInputs {
        anchor_z: &za,
        clean_z: &zc,
        bank: &case.bank,
        partition: &case.partition,
        pairing: &case.pairing,
        group_labels: &case.group_labels,
        lambda1: case.lambda1,
        lambda2: case.lambda2,
    })
    .unwrap();
    let ga = case.encoder.encode_backward(&case.anchor_x, &case.params, &g.anchor_z).unwrap();
    let gc = case.encoder.encode_backward(&case.clean_x, &case.params, &g.clean_z).unwrap();
    let mut grad: Vec<f64> = ga.0.iter().zip(&gc.0).map(|(a, b)| a + b).collect();
    grad.extend_from_slice(g.prototypes.as_slice());
    (loss.total, grad)
}

/// Largest per-coordinate relative error between analytic and central
/// differences, plus the objective values from both paths.
pub fn gradient_check(case: &GradientCase, h: f64) -> (f64, f64, f64) {
    let mut theta = case.params.clone();
    theta.extend_from_slice(case.bank.vectors.as_slice());
    let numeric = finite_diff_gradient(|t| oracle_objective(case, t), &theta, h).unwrap();
    let (total, analytic) = analytic_gradient(case);
    let worst = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n, 1e-6))
        .fold(0.0, f64::max);
    (worst, total, oracle_objective(case, &theta))
}

/// Maximum total benefit over all injective row-to-column maps (rows <= cols).
pub fn brute_force_assignment(benefit: &[Vec<f64>]) -> f64 {
    fn go(benefit: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == benefit.len() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(benefit[row][j] + go(benefit, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    let cols = benefit.first().map_or(0, Vec::len);
    if benefit.len() > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|j| benefit.iter().map(|r| r[j]).collect()).collect();
        return brute_force_assignment(&t);
    }
    go(benefit, 0, &mut vec![false; cols])
}
