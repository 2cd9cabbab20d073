//! Training loop: pairing, bi-level loss, Adam with prototype projection,
//! per-epoch regrouping and held-out evaluation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{holdout_split, make_views, Dataset, FeatureBatch};
use crate::encoder::{Activation, Encoder, EncoderConfig, EncoderError};
use crate::grouping::{
    jaccard_affinity, match_classes_to_groups, representing_sets, select_threshold_by_persistence,
    tune_threshold, ClassGroupMatching, GroupingError, ThresholdPolicy, TieBreak,
};
use crate::losses::{total_loss_and_grads, LossBreakdown, LossError, LossInputs, PairKind, PositivePairing};
use crate::metrics::{open_world_report, EvalReport, MetricsError};
use crate::numerics::{dot, norm, AdamState, Matrix, NumericsError, ParamVector};
use rand_distr::StandardNormal;
use crate::prototypes::{
    assign_groups, assign_prototypes, project_in_place, AssignmentMatrix, GroupPartition, PrototypeBank, PrototypeError,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}: proto={} group={} reg={} ce={} total={}",
        breakdown.proto, breakdown.group, breakdown.reg, breakdown.ce, breakdown.total
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        breakdown: LossBreakdown,
    },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Prototype(#[from] PrototypeError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Grouping(#[from] GroupingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Encoder architecture; the input width comes from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderShape {
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub activation: Activation,
}

impl Default for EncoderShape {
    fn default() -> Self {
        let e = EncoderConfig::default();
        Self {
            hidden_dims: e.hidden_dims,
            embed_dim: e.embed_dim,
            activation: e.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub kappa: usize,
    pub num_prototypes: usize,
    /// Epochs before the first regrouping; the partition stays singleton until then.
    pub warmup_epochs: usize,
    /// Drives the held-out split, initialization, shuffling, pairing and views.
    pub seed: u64,
    pub noise_std: f64,
    /// Fraction of every (class, labeled) stratum held out for evaluation.
    pub eval_fraction: f64,
    pub encoder: EncoderShape,
    pub threshold: ThresholdPolicy,
    pub tie_break: TieBreak,
    /// Restart prototypes that became isolated and own no instance.
    pub revive_dead: bool,
    pub prototype_init: PrototypeInit,
}

/// Where the prototypes start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeInit {
    /// Independent uniform draws on the unit sphere.
    Sphere,
    /// k-means++ seeding over the initial embeddings of the training set.
    KmeansPp,
    /// k-means++ seeding followed by spherical Lloyd refinement.
    #[default]
    Kmeans,
}

const LLOYD_MAX_ITERS: usize = 100;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            learning_rate: 0.002,
            temperature: 0.1,
            lambda1: 1.0,
            lambda2: 1.0,
            kappa: 5,
            num_prototypes: 50,
            warmup_epochs: 0,
            seed: 0,
            noise_std: 0.5,
            eval_fraction: 0.2,
            encoder: EncoderShape::default(),
            threshold: ThresholdPolicy::Observed,
            tie_break: TieBreak::default(),
            revive_dead: true,
            prototype_init: PrototypeInit::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) || !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return bad("lambda1 and lambda2 must be non-negative");
        }
        if self.num_prototypes == 0 {
            return bad("num_prototypes must be positive");
        }
        if self.kappa == 0 || self.kappa > self.num_prototypes {
            return bad("kappa must be in 1..=num_prototypes");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be non-negative");
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return bad("eval_fraction must be in [0, 1)");
        }
        Ok(())
    }
}

/// Independent seed for a named sub-stream (splitmix64 finalizer).
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SPLIT: u64 = 1;
const STREAM_ENCODER: u64 = 2;
const STREAM_PROTOTYPES: u64 = 3;
const STREAM_LOOP: u64 = 4;

/// Cosine similarity of two unit-norm rows.
fn cosine(z: &Matrix, i: usize, j: usize) -> f64 {
    dot(z.row(i), z.row(j))
}

fn nearest_neighbor(z: &Matrix, i: usize) -> usize {
    let mut best = usize::MAX;
    let mut best_sim = f64::NEG_INFINITY;
    for j in 0..z.rows() {
        if j == i {
            continue;
        }
        let s = cosine(z, i, j);
        if s > best_sim {
            best_sim = s;
            best = j;
        }
    }
    best
}

/// One positive per batch row. Labeled rows take a random labeled batchmate
/// of the same class; rows without one, and unlabeled rows, take their
/// cosine-nearest batchmate. `embeddings` must be unit-norm.
pub fn build_pairs(batch: &FeatureBatch, embeddings: &Matrix, rng: &mut impl Rng) -> PositivePairing {
    let b = batch.len();
    assert!(b >= 2, "pairing needs at least two instances");
    assert_eq!(embeddings.rows(), b, "one embedding per batch row");
    let neighbors = crate::par::map_range(b, |i| nearest_neighbor(embeddings, i));
    let mut pairing = PositivePairing {
        anchors: Vec::with_capacity(b),
        positives: Vec::with_capacity(b),
        kinds: Vec::with_capacity(b),
    };
    for i in 0..b {
        let mates: Vec<usize> = match batch.labels[i] {
            Some(c) => (0..b).filter(|&j| j != i && batch.labels[j] == Some(c)).collect(),
            None => Vec::new(),
        };
        let (pos, kind) = if mates.is_empty() {
            (neighbors[i], PairKind::UnlabeledNearestNeighbor)
        } else {
            (mates[rng.random_range(0..mates.len())], PairKind::LabeledSameClass)
        };
        pairing.anchors.push(i);
        pairing.positives.push(pos);
        pairing.kinds.push(kind);
    }
    pairing
}

/// Mutable model and optimizer state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub encoder: Encoder,
    pub params: ParamVector,
    pub bank: PrototypeBank,
    pub partition: GroupPartition,
    pub matching: Option<ClassGroupMatching>,
    pub delta: Option<f64>,
    pub epochs_done: usize,
    adam: AdamState,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(train: &Dataset, cfg: &TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let encoder = Encoder::new(EncoderConfig {
            input_dim: train.dim(),
            hidden_dims: cfg.encoder.hidden_dims.clone(),
            embed_dim: cfg.encoder.embed_dim,
            activation: cfg.encoder.activation,
            seed: stream_seed(cfg.seed, STREAM_ENCODER),
        })?;
        let params = encoder.init_params();
        let proto_seed = stream_seed(cfg.seed, STREAM_PROTOTYPES);
        let bank = match cfg.prototype_init {
            PrototypeInit::Sphere => {
                PrototypeBank::random(cfg.num_prototypes, encoder.embed_dim(), cfg.temperature, proto_seed)
            }
            PrototypeInit::KmeansPp => {
                let z = encoder.encode(&train.features, params.as_slice())?;
                PrototypeBank::seeded_from(&z, cfg.num_prototypes, cfg.temperature, proto_seed)?
            }
            PrototypeInit::Kmeans => {
                let z = encoder.encode(&train.features, params.as_slice())?;
                let mut bank = PrototypeBank::seeded_from(&z, cfg.num_prototypes, cfg.temperature, proto_seed)?;
                bank.refine_lloyd(&z, LLOYD_MAX_ITERS)?;
                bank
            }
        };
        let adam = AdamState::new(params.len() + bank.vectors.as_slice().len(), cfg.learning_rate);
        Ok(Self {
            encoder,
            params,
            partition: GroupPartition::singletons(cfg.num_prototypes),
            bank,
            matching: None,
            delta: None,
            epochs_done: 0,
            adam,
            rng: ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, STREAM_LOOP)),
        })
    }

    pub fn embed(&self, features: &Matrix) -> Result<Matrix, TrainError> {
        Ok(self.encoder.encode(features, self.params.as_slice())?)
    }

    /// Group id with the largest assignment probability for every row.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>, TrainError> {
        let z = self.embed(features)?;
        let p = assign_prototypes(&z, &self.bank)?;
        let q = assign_groups(&p, &self.partition)?;
        Ok((0..q.rows()).map(|i| q.argmax(i)).collect())
    }

    /// Recomputes the class/group matching from the labeled instances.
    fn refresh_matching(&mut self, train: &Dataset) -> Result<(), TrainError> {
        let labeled: Vec<usize> = (0..train.len()).filter(|&i| train.is_labeled[i]).collect();
        if labeled.is_empty() {
            self.matching = None;
            return Ok(());
        }
        let z = self.embed(&train.features.select_rows(&labeled))?;
        let q = assign_groups(&assign_prototypes(&z, &self.bank)?, &self.partition)?;
        let labels: Vec<usize> = labeled.iter().map(|&i| train.labels[i]).collect();
        self.matching = match_classes_to_groups(&q, &labels).ok();
        Ok(())
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            encoder: self.encoder.config().clone(),
            params: self.params.0.clone(),
            bank: self.bank.clone(),
            partition: self.partition.assignment().to_vec(),
            matching: self.matching.clone(),
        }
    }
}

/// Everything needed to score new data with a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub encoder: EncoderConfig,
    pub params: Vec<f64>,
    pub bank: PrototypeBank,
    pub partition: Vec<usize>,
    pub matching: Option<ClassGroupMatching>,
}

impl ModelSnapshot {
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>, TrainError> {
        let encoder = Encoder::new(self.encoder.clone())?;
        let partition = GroupPartition::from_assignment(self.partition.clone())?;
        let z = encoder.encode(features, &self.params)?;
        let q = assign_groups(&assign_prototypes(&z, &self.bank)?, &partition)?;
        Ok((0..q.rows()).map(|i| q.argmax(i)).collect())
    }

    pub fn group_count(&self) -> usize {
        self.partition.iter().max().map_or(0, |m| m + 1)
    }
}

/// One logged epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean of the per-batch terms; `total` obeys the weighted-sum identity.
    pub loss: LossBreakdown,
    /// Groups in the partition trained against during this epoch.
    pub groups_before: usize,
    /// Groups after the end-of-epoch regrouping.
    pub group_count: usize,
    pub delta: Option<f64>,
    /// No candidate threshold could host every known class; the previous
    /// partition was kept.
    pub fallback: bool,
    pub labeled_acc: Option<f64>,
    pub eval: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<EpochRow>,
    pub estimated_class_count: usize,
    pub config: TrainConfig,
    pub seed: u64,
    pub train_size: usize,
    pub eval_size: usize,
}

impl RunRecord {
    pub fn final_eval(&self) -> &EvalReport {
        &self.rows.last().expect("at least one epoch").eval
    }

    pub const CSV_HEADER: &'static str = "epoch,proto,group,reg,ce,total,groups_before,group_count,delta,fallback,labeled_acc,known_acc,novel_acc,all_acc,nmi";

    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(String::new, |v| v.to_string())
        }
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let l = &r.loss;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                l.proto,
                l.group,
                l.reg,
                l.ce,
                l.total,
                r.groups_before,
                r.group_count,
                opt(r.delta),
                r.fallback as u8,
                opt(r.labeled_acc),
                opt(r.eval.known_acc),
                opt(r.eval.novel_acc),
                r.eval.all_acc,
                r.eval.nmi
            )
            .expect("writing to a String cannot fail");
        }
        out
    }
}

fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    // a trailing singleton cannot be paired; fold it into the previous batch
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * batch_size;
        out[n - 1] = &order[start..];
    }
    out
}

/// One pass over the training set followed by regrouping. Returns the mean
/// loss breakdown, the group count trained against, and whether regrouping
/// had to fall back to the previous partition.
pub fn train_epoch(
    state: &mut TrainState,
    train: &Dataset,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, usize, bool), TrainError> {
    if train.len() < 2 {
        return Err(TrainError::Config("training split needs at least two instances".into()));
    }
    let epoch = state.epochs_done + 1;
    let groups_before = state.partition.group_count();
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut state.rng);
    let chunks = batches(&order, cfg.batch_size);

    let n_enc = state.params.len();
    let mut sums = [0.0f64; 4];
    for (bi, idx) in chunks.iter().enumerate() {
        let batch = FeatureBatch::from_dataset(train, idx);
        let view_seed = state.rng.next_u64();
        let augmented = make_views(&batch.features, cfg.noise_std, view_seed);
        let clean_z = state.embed(&batch.features)?;
        let anchor_z = state.embed(&augmented)?;
        let pairing = build_pairs(&batch, &clean_z, &mut state.rng);
        let group_labels: Vec<Option<usize>> = batch
            .labels
            .iter()
            .map(|l| l.and_then(|c| state.matching.as_ref().and_then(|m| m.group_of(c))))
            .collect();

        let (loss, grads) = total_loss_and_grads(&LossInputs {
            anchor_z: &anchor_z,
            clean_z: &clean_z,
            bank: &state.bank,
            partition: &state.partition,
            pairing: &pairing,
            group_labels: &group_labels,
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
        })?;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                batch: bi,
                breakdown: loss,
            });
        }
        sums[0] += loss.proto;
        sums[1] += loss.group;
        sums[2] += loss.reg;
        sums[3] += loss.ce;

        let g_anchor = state.encoder.encode_backward(&augmented, state.params.as_slice(), &grads.anchor_z)?;
        let g_clean = state.encoder.encode_backward(&batch.features, state.params.as_slice(), &grads.clean_z)?;
        let mut all_grads: Vec<f64> = g_anchor.0.iter().zip(&g_clean.0).map(|(a, b)| a + b).collect();
        all_grads.extend_from_slice(grads.prototypes.as_slice());

        let mut all_params = std::mem::take(&mut state.params.0);
        all_params.extend_from_slice(state.bank.vectors.as_slice());
        let mut all_params = ParamVector(all_params);
        state.adam.step(&mut all_params, &ParamVector(all_grads))?;
        let proto_part = all_params.0.split_off(n_enc);
        state.params = all_params;
        state.bank.vectors.as_mut_slice().copy_from_slice(&proto_part);
        project_in_place(&mut state.bank.vectors)?;
    }
    let nb = chunks.len() as f64;
    let mean = LossBreakdown::new(
        sums[0] / nb,
        sums[1] / nb,
        sums[2] / nb,
        sums[3] / nb,
        cfg.lambda1,
        cfg.lambda2,
    );

    let fallback = if epoch > cfg.warmup_epochs {
        regroup(state, train, cfg)?
    } else {
        false
    };
    state.refresh_matching(train)?;
    state.epochs_done = epoch;
    Ok((mean, groups_before, fallback))
}

/// Rebuilds the partition from the current representing sets and refreshes
/// the matching. Returns `true` when no candidate could host every known
/// class, in which case the previous partition is kept.
pub fn regroup(state: &mut TrainState, train: &Dataset, cfg: &TrainConfig) -> Result<bool, TrainError> {
    let z = state.embed(&train.features)?;
    let mut p_all = assign_prototypes(&z, &state.bank)?;
    if cfg.revive_dead && revive_dead_prototypes(state, &p_all) > 0 {
        p_all = assign_prototypes(&z, &state.bank)?;
    }
    let affinity = jaccard_affinity(&representing_sets(&p_all, cfg.kappa)?);
    let labeled: Vec<usize> = (0..train.len()).filter(|&i| train.is_labeled[i]).collect();
    let choice = if labeled.is_empty() {
        select_threshold_by_persistence(&affinity)
    } else {
        let p_lab = select_assignment_rows(&p_all, &labeled);
        let labels: Vec<usize> = labeled.iter().map(|&i| train.labels[i]).collect();
        tune_threshold(&affinity, &p_lab, &labels, cfg.threshold, cfg.tie_break)?
    };
    if choice.fallback {
        return Ok(true);
    }
    state.partition = choice.partition;
    state.delta = Some(choice.delta);
    state.refresh_matching(train)?;
    Ok(false)
}

const REVIVE_JITTER: f64 = 1e-2;

/// Replaces every singleton prototype that is nobody's argmax with a jittered
/// copy of the currently most loaded prototype, halving that donor's load for
/// the next pick. Optimizer moments of a replaced prototype are cleared.
fn revive_dead_prototypes(state: &mut TrainState, p_all: &AssignmentMatrix) -> usize {
    let k = p_all.cols();
    let mut owned = vec![0usize; k];
    for i in 0..p_all.rows() {
        owned[p_all.argmax(i)] += 1;
    }
    let sizes = state.partition.group_sizes();
    let dead: Vec<usize> = (0..k)
        .filter(|&c| owned[c] == 0 && sizes[state.partition.assignment()[c]] == 1)
        .collect();
    if dead.is_empty() || dead.len() == k {
        return 0;
    }
    let mut load: Vec<f64> = owned.iter().map(|&o| o as f64).collect();
    let dim = state.bank.dim();
    let offset = state.params.len();
    for &c in &dead {
        let donor = (0..k).max_by(|&a, &b| load[a].total_cmp(&load[b]).then(b.cmp(&a))).expect("k > 0");
        load[donor] /= 2.0;
        load[c] = load[donor];
        let mut row: Vec<f64> = state
            .bank
            .vectors
            .row(donor)
            .iter()
            .map(|v| v + REVIVE_JITTER * state.rng.sample::<f64, _>(StandardNormal))
            .collect();
        let n = norm(&row);
        row.iter_mut().for_each(|v| *v /= n);
        state.bank.vectors.row_mut(c).copy_from_slice(&row);
        for j in offset + c * dim..offset + (c + 1) * dim {
            state.adam.first_moment.0[j] = 0.0;
            state.adam.second_moment.0[j] = 0.0;
        }
    }
    dead.len()
}

fn select_assignment_rows(p: &AssignmentMatrix, rows: &[usize]) -> AssignmentMatrix {
    AssignmentMatrix {
        probs: p.probs.select_rows(rows),
        level: p.level,
    }
}

/// Scores the current model on a held-out population.
pub fn evaluate(state: &TrainState, eval: &Dataset, known: &BTreeSet<usize>) -> Result<EvalReport, TrainError> {
    let pred = state.predict(&eval.features)?;
    Ok(open_world_report(
        &pred,
        &eval.labels,
        known,
        state.matching.as_ref(),
        state.partition.group_count(),
    )?)
}

/// Result of a full run: the log plus the trained model.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub state: TrainState,
}

/// Splits off a held-out set, trains for `cfg.epochs`, and evaluates after
/// every epoch.
pub fn run(dataset: &Dataset, cfg: &TrainConfig) -> Result<RunOutcome, TrainError> {
    cfg.validate()?;
    dataset
        .validate()
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let known = dataset.known_classes();
    if cfg.num_prototypes < known.len() {
        return Err(TrainError::Config(format!(
            "num_prototypes ({}) is below the known-class count ({})",
            cfg.num_prototypes,
            known.len()
        )));
    }
    let (train, eval) = if cfg.eval_fraction > 0.0 {
        holdout_split(dataset, cfg.eval_fraction, stream_seed(cfg.seed, STREAM_SPLIT))
    } else {
        (dataset.clone(), dataset.clone())
    };
    if eval.is_empty() {
        return Err(TrainError::Config("held-out split is empty".into()));
    }
    let mut state = TrainState::new(&train, cfg)?;
    state.refresh_matching(&train)?;

    let mut rows = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (loss, groups_before, fallback) = train_epoch(&mut state, &train, cfg)?;
        let report = evaluate(&state, &eval, &known)?;
        rows.push(EpochRow {
            epoch: state.epochs_done,
            loss,
            groups_before,
            group_count: state.partition.group_count(),
            delta: state.delta,
            fallback,
            labeled_acc: state.matching.as_ref().map(ClassGroupMatching::accuracy),
            eval: report,
        });
    }
    let record = RunRecord {
        estimated_class_count: crate::grouping::estimate_class_count(&state.partition),
        rows,
        config: cfg.clone(),
        seed: cfg.seed,
        train_size: train.len(),
        eval_size: eval.len(),
    };
    Ok(RunOutcome { record, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{apply_split, generate_blobs, BlobConfig, SplitConfig};
    use crate::numerics::norm;

    fn unit_rows(rows: &[[f64; 2]]) -> Matrix {
        let v: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let n = norm(r);
                r.iter().map(|x| x / n).collect()
            })
            .collect();
        Matrix::from_rows(&v)
    }

    fn batch(labels: Vec<Option<usize>>) -> FeatureBatch {
        let n = labels.len();
        FeatureBatch {
            features: Matrix::zeros(n, 2),
            labels,
            origin: (0..n).collect(),
        }
    }

    #[test]
    fn two_unlabeled_instances_pair_with_each_other() {
        let z = unit_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let p = build_pairs(&batch(vec![None, None]), &z, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(p.positives, vec![1, 0]);
        assert!(p.kinds.iter().all(|k| *k == PairKind::UnlabeledNearestNeighbor));
    }

    #[test]
    fn nearest_neighbor_matches_brute_force() {
        let z = unit_rows(&[[1.0, 0.0], [0.8, 0.6], [-0.6, 0.8]]);
        // cos(0,1)=0.8, cos(0,2)=-0.6, cos(1,2)=0
        let p = build_pairs(&batch(vec![None; 3]), &z, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(p.positives, vec![1, 0, 1]);
    }

    #[test]
    fn labeled_anchor_with_single_classmate_takes_it() {
        let z = unit_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 0.01], [0.0, -1.0]]);
        let labels = vec![Some(3), None, None, Some(3)];
        let p = build_pairs(&batch(labels), &z, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(p.positives[0], 3);
        assert_eq!(p.positives[3], 0);
        assert_eq!(p.kinds[0], PairKind::LabeledSameClass);
        assert_eq!(p.positives[1], 2);
        p.validate(4).unwrap();
    }

    #[test]
    fn labeled_anchor_without_classmate_falls_back_to_neighbor() {
        let z = unit_rows(&[[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]]);
        let p = build_pairs(&batch(vec![Some(0), Some(1), None]), &z, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(p.positives[0], 1);
        assert_eq!(p.kinds[0], PairKind::UnlabeledNearestNeighbor);
    }

    #[test]
    #[should_panic(expected = "at least two")]
    fn single_instance_batch_is_a_contract_violation() {
        let z = unit_rows(&[[1.0, 0.0]]);
        build_pairs(&batch(vec![None]), &z, &mut ChaCha8Rng::seed_from_u64(0));
    }

    #[test]
    fn trailing_singleton_is_folded_in() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], &[4, 5, 6, 7, 8]);
        assert_eq!(batches(&order, 3).len(), 3);
        assert_eq!(batches(&order[..1], 4).len(), 1);
    }

    fn small_fixture(seed: u64) -> Dataset {
        let d = generate_blobs(&BlobConfig {
            num_classes: 4,
            per_class: 30,
            dim: 6,
            seed,
            ..BlobConfig::default()
        })
        .unwrap();
        apply_split(&d, &SplitConfig::default(), seed).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 32,
            num_prototypes: 12,
            encoder: EncoderShape {
                hidden_dims: vec![16],
                embed_dim: 8,
                activation: Activation::Tanh,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn isolated_unowned_prototype_is_restarted_next_to_the_busiest_one() {
        let cfg = small_config();
        let train = small_fixture(3);
        let mut state = TrainState::new(&train, &cfg).unwrap();
        let k = cfg.num_prototypes;
        state.adam.first_moment.0.iter_mut().for_each(|v| *v = 1.0);
        state.adam.second_moment.0.iter_mut().for_each(|v| *v = 1.0);
        // every row's argmax is prototype 0 (six rows) or 1 (two rows)
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                let mut r = vec![0.01; k];
                r[usize::from(i >= 6)] = 1.0 - 0.01 * (k - 1) as f64;
                r
            })
            .collect();
        let p = AssignmentMatrix {
            probs: Matrix::from_rows(&rows),
            level: crate::prototypes::Level::Prototype,
        };
        // prototypes 2..k share a group and are therefore protected
        let mut assignment = vec![0, 1];
        assignment.extend(std::iter::repeat_n(2, k - 2));
        state.partition = GroupPartition::from_assignment(assignment).unwrap();
        assert_eq!(revive_dead_prototypes(&mut state, &p), 0);

        state.partition = GroupPartition::singletons(k);
        let before = state.bank.vectors.clone();
        let revived = revive_dead_prototypes(&mut state, &p);
        assert_eq!(revived, k - 2);
        let dim = state.bank.dim();
        let offset = state.params.len();
        for c in 2..k {
            let row = state.bank.vectors.row(c);
            assert!((norm(row) - 1.0).abs() < 1e-12);
            let near_0 = dot(row, before.row(0));
            let near_1 = dot(row, before.row(1));
            assert!(near_0.max(near_1) > 0.99, "prototype {c} is not a jittered copy");
            let moments = offset + c * dim..offset + (c + 1) * dim;
            assert!(state.adam.first_moment.0[moments.clone()].iter().all(|&v| v == 0.0));
            assert!(state.adam.second_moment.0[moments].iter().all(|&v| v == 0.0));
        }
        // owners are untouched, and the busier prototype donates first
        assert_eq!(state.bank.vectors.row(0), before.row(0));
        assert_eq!(state.bank.vectors.row(1), before.row(1));
        assert!(dot(state.bank.vectors.row(2), before.row(0)) > 0.99);
    }

    #[test]
    fn one_epoch_gives_one_row_and_the_loss_identity_holds() {
        let cfg = TrainConfig {
            epochs: 1,
            ..small_config()
        };
        let out = run(&small_fixture(0), &cfg).unwrap();
        assert_eq!(out.record.rows.len(), 1);
        let r = &out.record.rows[0];
        assert_eq!(r.groups_before, 12);
        let l = &r.loss;
        let sum = l.proto + l.group + cfg.lambda1 * l.reg + cfg.lambda2 * l.ce;
        assert!((l.total - sum).abs() <= 1e-12);
        assert_eq!(out.record.estimated_class_count, out.state.partition.group_count());
    }

    #[test]
    fn prototypes_and_embeddings_stay_unit_norm() {
        let out = run(&small_fixture(1), &small_config()).unwrap();
        for row in out.state.bank.vectors.iter_rows() {
            assert!((norm(row) - 1.0).abs() <= 1e-9);
        }
        let z = out.state.embed(&small_fixture(1).features).unwrap();
        for row in z.iter_rows() {
            assert!((norm(row) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn runs_are_bit_identical_per_seed() {
        let a = run(&small_fixture(2), &small_config()).unwrap();
        let b = run(&small_fixture(2), &small_config()).unwrap();
        assert_eq!(a.record.to_csv(), b.record.to_csv());
        assert_eq!(a.state.snapshot(), b.state.snapshot());
        let c = run(
            &small_fixture(2),
            &TrainConfig {
                seed: 1,
                ..small_config()
            },
        )
        .unwrap();
        assert_ne!(a.state.snapshot().params, c.state.snapshot().params);
    }

    #[test]
    fn label_free_mode_runs_without_matching() {
        let d = apply_split(
            &small_fixture(3),
            &SplitConfig {
                known_class_fraction: 0.5,
                label_fraction: 0.0,
            },
            0,
        )
        .unwrap();
        let cfg = TrainConfig {
            lambda2: 0.0,
            ..small_config()
        };
        let out = run(&d, &cfg).unwrap();
        assert!(out.state.matching.is_none());
        let last = out.record.final_eval();
        assert_eq!(last.known_acc, None);
        assert!(last.novel_acc.is_some());
        assert!(out.record.rows.iter().all(|r| r.loss.ce == 0.0 && r.labeled_acc.is_none()));
    }

    #[test]
    fn warmup_keeps_singletons() {
        let cfg = TrainConfig {
            warmup_epochs: 2,
            ..small_config()
        };
        let out = run(&small_fixture(4), &cfg).unwrap();
        assert!(out.record.rows.iter().all(|r| r.group_count == 12 && r.delta.is_none()));
    }

    #[test]
    fn snapshot_predictions_match_state() {
        let d = small_fixture(5);
        let out = run(&d, &small_config()).unwrap();
        let snap = out.state.snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        let back: ModelSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back.predict(&d.features).unwrap(), out.state.predict(&d.features).unwrap());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let d = small_fixture(0);
        for cfg in [
            TrainConfig {
                batch_size: 1,
                ..small_config()
            },
            TrainConfig {
                epochs: 0,
                ..small_config()
            },
            TrainConfig {
                num_prototypes: 1,
                kappa: 1,
                ..small_config()
            },
            TrainConfig {
                kappa: 13,
                ..small_config()
            },
        ] {
            assert!(matches!(run(&d, &cfg), Err(TrainError::Config(_))), "{cfg:?}");
        }
    }
}
