//! Evaluation protocols: pretrain-and-finetune, training from scratch, linear
//! probing, augmentation-pair grids, strength/pattern sweeps and loss-curve
//! comparisons.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{round_half_up, AugmentationKind, AugmentationPool, AugmentationSpec};
use crate::contrastive::{initial_params, pretrain_params, LossCurve, PretrainConfig};
use crate::encoder::{classify, cross_entropy, embed, encode, EncoderConfig, GraphBatch, ModelParams};
use crate::error::{Error, Result};
use crate::graph::GraphDataset;
use crate::numerics::{adam_step, AdamConfig, AdamState, Tape, Tensor};
use crate::rng::{substream, Rng};

/// Regularization strengths tried by [`linear_probe`].
pub const PROBE_LAMBDAS: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
const EMBED_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    /// Fraction of each training fold whose labels are visible.
    pub label_rate: f64,
    pub folds: usize,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            label_rate: 0.1,
            folds: 5,
            stratified: true,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.label_rate > 0.0 && self.label_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "label_rate must lie in (0, 1], got {}",
                self.label_rate
            )));
        }
        if self.folds < 2 {
            return Err(Error::InvalidArgument("folds must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.005,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("finetune epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "finetune learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Everything one pretrain-and-finetune cell needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub split: SplitSpec,
    pub finetune: FinetuneConfig,
}

impl ExperimentConfig {
    /// Same configuration with every seed set to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.pretrain.seed = seed;
        out.split.seed = seed;
        out.finetune.seed = seed;
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.pretrain.validate()?;
        self.split.validate()?;
        self.finetune.validate()
    }
}

/// Per-fold accuracies of one protocol run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
    /// Not part of serialized metrics.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn new(protocol: impl Into<String>, fold_accuracies: Vec<f64>, config: serde_json::Value) -> Self {
        let (mean, std) = mean_std(&fold_accuracies);
        Self {
            protocol: protocol.into(),
            fold_accuracies,
            mean,
            std,
            wall_clock_seconds: 0.0,
            config,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Rows `fold,accuracy`, then `mean` and `std`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut rows: Vec<Vec<String>> = self
            .fold_accuracies
            .iter()
            .enumerate()
            .map(|(k, a)| vec![(k + 1).to_string(), a.to_string()])
            .collect();
        rows.push(vec!["mean".into(), self.mean.to_string()]);
        rows.push(vec!["std".into(), self.std.to_string()]);
        write_table_csv(path, &["fold", "accuracy"], &rows)
    }
}

/// Mean and sample standard deviation; the deviation of fewer than two values is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Splits `0..labels.len()` into `folds` disjoint test folds. Stratified splits
/// deal each class's shuffled members round-robin across folds.
pub fn stratified_folds(labels: &[usize], folds: usize, stratified: bool, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if folds < 2 || folds > labels.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} graphs into {folds} folds",
            labels.len()
        )));
    }
    let groups: Vec<Vec<usize>> = if stratified {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &c) in labels.iter().enumerate() {
            by_class.entry(c).or_default().push(i);
        }
        by_class.into_values().collect()
    } else {
        vec![(0..labels.len()).collect()]
    };
    let mut out = vec![Vec::new(); folds];
    let mut slot = 0;
    for mut group in groups {
        group.shuffle(rng);
        for i in group {
            out[slot % folds].push(i);
            slot += 1;
        }
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    Ok(out)
}

/// Labeled subset of a training fold with `round(label_rate · |train|)` graphs
/// (at least one). Stratified selection gives every class at least one graph
/// when the budget allows and splits the rest proportionally to class sizes.
pub fn labeled_subset(
    train: &[usize],
    labels: &[usize],
    label_rate: f64,
    stratified: bool,
    rng: &mut Rng,
) -> Vec<usize> {
    let budget = round_half_up(label_rate * train.len() as f64).clamp(1, train.len().max(1));
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in train {
        by_class.entry(labels[i]).or_default().push(i);
    }
    let mut picked = if stratified && budget >= by_class.len() {
        let total = train.len() as f64;
        let mut quotas: Vec<(usize, f64)> = by_class
            .values()
            .map(|members| {
                let exact = budget as f64 * members.len() as f64 / total;
                ((exact.floor() as usize).max(1), exact - exact.floor())
            })
            .collect();
        let mut assigned: usize = quotas.iter().map(|q| q.0).sum();
        let mut order: Vec<usize> = (0..quotas.len()).collect();
        // largest remainder first, then larger class
        order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(b.cmp(&a)));
        for &c in order.iter().cycle().take(4 * quotas.len()) {
            if assigned >= budget {
                break;
            }
            let cap = by_class.values().nth(c).map_or(0, Vec::len);
            if quotas[c].0 < cap {
                quotas[c].0 += 1;
                assigned += 1;
            }
        }
        let sizes: Vec<usize> = by_class.values().map(Vec::len).collect();
        while assigned > budget {
            let c = (0..quotas.len())
                .filter(|&c| quotas[c].0 > 1)
                .max_by_key(|&c| (quotas[c].0, sizes[c]))
                .expect("budget covers one graph per class");
            quotas[c].0 -= 1;
            assigned -= 1;
        }
        let mut picked = Vec::with_capacity(budget);
        for (members, (quota, _)) in by_class.into_values().zip(quotas) {
            let mut members = members;
            members.shuffle(rng);
            picked.extend(members.into_iter().take(quota));
        }
        picked
    } else {
        if stratified {
            log::warn!(
                "label budget {budget} is below the {} classes of the training fold; selecting unstratified",
                by_class.len()
            );
        }
        let mut all = train.to_vec();
        all.shuffle(rng);
        all.truncate(budget);
        all
    };
    picked.sort_unstable();
    picked
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

fn check_compatible(params: &ModelParams<f64>, dataset: &GraphDataset) -> Result<()> {
    if params.feature_dim != dataset.feature_dim() {
        return Err(Error::shape(
            "finetune",
            format!(
                "model expects {} features, dataset {} has {}",
                params.feature_dim,
                dataset.name(),
                dataset.feature_dim()
            ),
        ));
    }
    Ok(())
}

/// Class predictions of the full model (encoder and classifier head).
pub fn predict(params: &ModelParams<f64>, dataset: &GraphDataset, indices: &[usize]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EMBED_CHUNK) {
        let batch = GraphBatch::new(chunk.iter().map(|&i| &dataset.graphs()[i]))?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let h = encode(&mut tape, &batch, &bound, &params.config)?;
        let logits = classify(&mut tape, h, &bound)?;
        let logits = tape.value(logits);
        out.extend((0..logits.rows()).map(|r| argmax(logits.row(r))));
    }
    Ok(out)
}

/// Supervised training of encoder and classifier on `labeled`.
pub fn train_supervised(
    params: &mut ModelParams<f64>,
    dataset: &GraphDataset,
    labeled: &[usize],
    config: &FinetuneConfig,
    stream: &[u64],
) -> Result<()> {
    let labels = dataset.labels()?;
    let adam = AdamConfig::with_learning_rate(config.learning_rate);
    let mut state = AdamState::new(params.named_tensors().into_iter().map(|(_, t)| t));
    let mut order = labeled.to_vec();
    for epoch in 0..config.epochs {
        let path: Vec<u64> = stream.iter().copied().chain([epoch as u64]).collect();
        order.shuffle(&mut substream(config.seed, "finetune-shuffle", &path));
        for chunk in order.chunks(config.batch_size) {
            let batch = GraphBatch::new(chunk.iter().map(|&i| &dataset.graphs()[i]))?;
            let targets: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, true);
            let h = encode(&mut tape, &batch, &bound, &params.config)?;
            let logits = classify(&mut tape, h, &bound)?;
            let loss = cross_entropy(&mut tape, logits, &targets)?;
            let mut grads = tape.backward(loss)?;
            let grads: Vec<Tensor<f64>> = bound
                .vars()
                .iter()
                .map(|&v| grads.take(v).ok_or_else(|| Error::NonFinite("missing gradient".into())))
                .collect::<Result<_>>()?;
            let refs: Vec<&Tensor<f64>> = grads.iter().collect();
            adam_step(&mut params.tensors_mut(), &refs, &mut state, &adam)?;
        }
    }
    Ok(())
}

/// k-fold pretrain-and-finetune evaluation: per fold a fresh classifier head on
/// top of `params`, the whole network trained on the labeled part of the
/// training folds, accuracy on the held-out fold.
pub fn finetune(
    params: &ModelParams<f64>,
    dataset: &GraphDataset,
    split: &SplitSpec,
    config: &FinetuneConfig,
) -> Result<EvalReport> {
    finetune_named("finetune", params, dataset, split, config)
}

fn finetune_named(
    protocol: &str,
    params: &ModelParams<f64>,
    dataset: &GraphDataset,
    split: &SplitSpec,
    config: &FinetuneConfig,
) -> Result<EvalReport> {
    let start = Instant::now();
    split.validate()?;
    config.validate()?;
    check_compatible(params, dataset)?;
    let labels = dataset.labels()?;
    let folds = stratified_folds(&labels, split.folds, split.stratified, &mut substream(split.seed, "folds", &[]))?;
    let accuracies = (0..folds.len())
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let test = &folds[k];
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            let labeled = labeled_subset(
                &train,
                &labels,
                split.label_rate,
                split.stratified,
                &mut substream(split.seed, "labeled", &[k as u64]),
            );
            let mut model = params.clone();
            model.reset_classifier(dataset.num_classes(), &mut substream(config.seed, "classifier", &[k as u64]));
            train_supervised(&mut model, dataset, &labeled, config, &[k as u64])?;
            let predictions = predict(&model, dataset, test)?;
            let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            Ok(accuracy(&predictions, &truth))
        })
        .collect::<Result<Vec<f64>>>()?;
    let snapshot = serde_json::json!({
        "dataset": dataset.name(),
        "encoder": params.config,
        "split": split,
        "finetune": config,
    });
    let mut report = EvalReport::new(protocol, accuracies, snapshot);
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// [`finetune`] from the untrained initialization that pretraining with
/// `init_seed` would start from.
pub fn train_from_scratch(
    dataset: &GraphDataset,
    encoder: &EncoderConfig,
    init_seed: u64,
    split: &SplitSpec,
    config: &FinetuneConfig,
) -> Result<EvalReport> {
    let params = initial_params(dataset, encoder, init_seed)?;
    finetune_named("scratch", &params, dataset, split, config)
}

/// Encoder outputs, one row per graph, without the projection head.
pub fn embed_dataset(params: &ModelParams<f64>, dataset: &GraphDataset) -> Result<Tensor<f64>> {
    check_compatible(params, dataset)?;
    let hidden = params.config.hidden_dim;
    let mut data = Vec::with_capacity(dataset.len() * hidden);
    for chunk in dataset.graphs().chunks(EMBED_CHUNK) {
        let h = embed(params, &GraphBatch::new(chunk)?)?;
        data.extend_from_slice(h.data());
    }
    Tensor::matrix(dataset.len(), hidden, data)
}

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &Tensor<f64>, rows: &[usize]) -> Self {
        let d = x.cols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, scale }
    }

    fn apply(&self, x: &Tensor<f64>, rows: &[usize]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|&r| {
                x.row(r)
                    .iter()
                    .zip(&self.mean)
                    .zip(&self.scale)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect()
            })
            .collect()
    }
}

/// Multinomial logistic regression `softmax(x·W + b)` minimizing
/// `Σ CE + λ/2 ‖W‖²` (scaled by `1/n`) with full-batch Adam.
#[derive(Clone, Debug)]
pub struct LogisticRegression {
    weight: Vec<f64>,
    bias: Vec<f64>,
    dim: usize,
    classes: usize,
}

impl LogisticRegression {
    const STEPS: usize = 400;
    const LEARNING_RATE: f64 = 0.05;

    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, lambda: f64) -> Result<Self> {
        let n = x.len();
        let dim = x.first().map_or(0, Vec::len);
        if n == 0 || n != y.len() {
            return Err(Error::LengthMismatch(format!("{n} rows for {} labels", y.len())));
        }
        let mut w = Tensor::<f64>::zeros(&[dim, classes]);
        let mut b = Tensor::<f64>::zeros(&[1, classes]);
        let mut state = AdamState::new([&w, &b]);
        let adam = AdamConfig::with_learning_rate(Self::LEARNING_RATE);
        let mut probs = vec![0.0; classes];
        for _ in 0..Self::STEPS {
            let mut gw = vec![0.0; dim * classes];
            let mut gb = vec![0.0; classes];
            for (row, &label) in x.iter().zip(y) {
                for (c, p) in probs.iter_mut().enumerate() {
                    *p = b.data()[c] + row.iter().enumerate().map(|(k, v)| v * w.data()[k * classes + c]).sum::<f64>();
                }
                softmax_in_place(&mut probs);
                probs[label] -= 1.0;
                for (c, &err) in probs.iter().enumerate() {
                    gb[c] += err / n as f64;
                    for (k, v) in row.iter().enumerate() {
                        gw[k * classes + c] += err * v / n as f64;
                    }
                }
            }
            for (g, wv) in gw.iter_mut().zip(w.data()) {
                *g += lambda * wv / n as f64;
            }
            let gw = Tensor::matrix(dim, classes, gw)?;
            let gb = Tensor::matrix(1, classes, gb)?;
            adam_step(&mut [&mut w, &mut b], &[&gw, &gb], &mut state, &adam)?;
        }
        Ok(Self {
            weight: w.into_data(),
            bias: b.into_data(),
            dim,
            classes,
        })
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<usize> {
        x.iter()
            .map(|row| {
                let scores: Vec<f64> = (0..self.classes)
                    .map(|c| {
                        self.bias[c] + (0..self.dim).map(|k| row[k] * self.weight[k * self.classes + c]).sum::<f64>()
                    })
                    .collect();
                argmax(&scores)
            })
            .collect()
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

fn probe_fold(
    embeddings: &Tensor<f64>,
    labels: &[usize],
    classes: usize,
    train: &[usize],
    test: &[usize],
    rng: &mut Rng,
) -> Result<f64> {
    let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    if train_labels.iter().all(|&l| l == train_labels[0]) {
        return Err(Error::InvalidDataset("linear probe training fold holds a single class".into()));
    }
    // inner split for λ: one stratified fifth held out
    let inner_folds = stratified_folds(&train_labels, 5.min(train.len()), true, rng)?;
    let inner_val: Vec<usize> = inner_folds[0].iter().map(|&p| train[p]).collect();
    let inner_train: Vec<usize> = inner_folds[1..].iter().flatten().map(|&p| train[p]).collect();
    let lambda = if inner_train.is_empty() || inner_val.is_empty() {
        1.0
    } else {
        let scaler = Standardizer::fit(embeddings, &inner_train);
        let xt = scaler.apply(embeddings, &inner_train);
        let yt: Vec<usize> = inner_train.iter().map(|&i| labels[i]).collect();
        let xv = scaler.apply(embeddings, &inner_val);
        let yv: Vec<usize> = inner_val.iter().map(|&i| labels[i]).collect();
        let mut best = (f64::NEG_INFINITY, PROBE_LAMBDAS[0]);
        for lambda in PROBE_LAMBDAS {
            let model = LogisticRegression::fit(&xt, &yt, classes, lambda)?;
            let acc = accuracy(&model.predict(&xv), &yv);
            if acc > best.0 {
                best = (acc, lambda);
            }
        }
        best.1
    };
    let scaler = Standardizer::fit(embeddings, train);
    let model = LogisticRegression::fit(&scaler.apply(embeddings, train), &train_labels, classes, lambda)?;
    let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    Ok(accuracy(&model.predict(&scaler.apply(embeddings, test)), &truth))
}

/// k-fold cross-validated logistic-regression probe on frozen embeddings.
pub fn linear_probe(embeddings: &Tensor<f64>, labels: &[usize], folds: usize, seed: u64) -> Result<EvalReport> {
    let start = Instant::now();
    if embeddings.shape().len() != 2 || embeddings.rows() != labels.len() {
        return Err(Error::LengthMismatch(format!(
            "{:?} embeddings for {} labels",
            embeddings.shape(),
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let split = stratified_folds(labels, folds, true, &mut substream(seed, "probe-folds", &[]))?;
    let accuracies = (0..split.len())
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = split
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            probe_fold(
                embeddings,
                labels,
                classes,
                &train,
                &split[k],
                &mut substream(seed, "probe-inner", &[k as u64]),
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    let snapshot = serde_json::json!({ "folds": folds, "seed": seed, "lambdas": PROBE_LAMBDAS });
    let mut report = EvalReport::new("linear_probe", accuracies, snapshot);
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// One pretrain-and-finetune cell against its scratch baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub pool_i: String,
    pub pool_j: String,
    pub seed: u64,
    pub accuracy: f64,
    pub scratch_accuracy: f64,
    pub gain: f64,
    pub final_loss: f64,
}

/// Pretrains with the given pools, finetunes and reports the accuracy gain over
/// `scratch_accuracy`.
pub fn run_cell(
    dataset: &GraphDataset,
    base: &ExperimentConfig,
    pool_i: &AugmentationPool,
    pool_j: &AugmentationPool,
    scratch_accuracy: f64,
) -> Result<CellResult> {
    let pretrain = base.pretrain.clone().with_pools(pool_i.clone(), pool_j.clone());
    let params = initial_params(dataset, &base.encoder, pretrain.seed)?;
    let (params, curve) = pretrain_params(dataset, &pretrain, params)?;
    let report = finetune(&params, dataset, &base.split, &base.finetune)?;
    Ok(CellResult {
        pool_i: pool_i.label(),
        pool_j: pool_j.label(),
        seed: pretrain.seed,
        accuracy: report.mean,
        scratch_accuracy,
        gain: report.mean - scratch_accuracy,
        final_loss: curve.last().unwrap_or(f64::NAN),
    })
}

fn scratch_accuracies(dataset: &GraphDataset, base: &ExperimentConfig, seeds: &[u64]) -> Result<BTreeMap<u64, f64>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let config = base.with_seed(seed);
            let report = train_from_scratch(dataset, &config.encoder, seed, &config.split, &config.finetune)?;
            Ok((seed, report.mean))
        })
        .collect()
}

fn check_seeds(seeds: &[u64]) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    Ok(())
}

/// Symmetric matrix of accuracy gains over all unordered augmentation pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub labels: Vec<String>,
    /// Mean gain over seeds; `gains[a][b] == gains[b][a]`.
    pub gains: Vec<Vec<f64>>,
    pub accuracies: Vec<Vec<f64>>,
    pub scratch_accuracy: f64,
    pub cells: Vec<CellResult>,
}

impl GridReport {
    pub fn write_matrix_csv(&self, path: &Path) -> Result<()> {
        write_matrix_csv(path, &self.labels, &self.gains)
    }
}

/// Pretrain-and-finetune for every unordered pair over `kinds ∪ {identity}`,
/// each cell minus the scratch baseline. Cells run in parallel.
pub fn aug_grid(
    dataset: &GraphDataset,
    kinds: &[AugmentationKind],
    base: &ExperimentConfig,
    seeds: &[u64],
) -> Result<GridReport> {
    check_seeds(seeds)?;
    base.validate()?;
    let mut axis = vec![AugmentationKind::Identity];
    for &k in kinds {
        if !axis.contains(&k) {
            axis.push(k);
        }
    }
    let pool = |k: AugmentationKind| AugmentationPool::single(AugmentationSpec::new(k));
    let scratch = scratch_accuracies(dataset, base, seeds)?;
    let jobs: Vec<(usize, usize, u64)> = (0..axis.len())
        .flat_map(|a| (a..axis.len()).map(move |b| (a, b)))
        .flat_map(|(a, b)| seeds.iter().map(move |&s| (a, b, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(a, b, seed)| run_cell(dataset, &base.with_seed(seed), &pool(axis[a]), &pool(axis[b]), scratch[&seed]))
        .collect::<Result<Vec<CellResult>>>()?;
    let size = axis.len();
    let mut gains = vec![vec![0.0; size]; size];
    let mut accuracies = vec![vec![0.0; size]; size];
    let per_seed = seeds.len() as f64;
    for (&(a, b, _), cell) in jobs.iter().zip(&cells) {
        gains[a][b] += cell.gain / per_seed;
        accuracies[a][b] += cell.accuracy / per_seed;
        if a != b {
            gains[b][a] += cell.gain / per_seed;
            accuracies[b][a] += cell.accuracy / per_seed;
        }
    }
    let scratch_mean = scratch.values().sum::<f64>() / per_seed;
    Ok(GridReport {
        labels: axis.iter().map(|k| k.as_str().to_string()).collect(),
        gains,
        accuracies,
        scratch_accuracy: scratch_mean,
        cells,
    })
}

/// One row of a strength or pattern sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Ratio or α, depending on the sweep.
    pub value: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_gain: f64,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: AugmentationKind,
    /// `ratio` or `alpha`.
    pub parameter: String,
    pub rows: Vec<SweepRow>,
    pub cells: Vec<CellResult>,
}

impl SweepReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.value.to_string(),
                    r.mean_accuracy.to_string(),
                    r.std_accuracy.to_string(),
                    r.mean_gain.to_string(),
                    r.seeds.to_string(),
                ]
            })
            .collect();
        let header = [self.parameter.as_str(), "mean_accuracy", "std_accuracy", "mean_gain", "seeds"];
        write_table_csv(path, &header, &rows)
    }
}

fn sweep(
    dataset: &GraphDataset,
    kind: AugmentationKind,
    parameter: &str,
    specs: Vec<(f64, AugmentationSpec)>,
    base: &ExperimentConfig,
    seeds: &[u64],
) -> Result<SweepReport> {
    check_seeds(seeds)?;
    base.validate()?;
    for (_, spec) in &specs {
        spec.validate()?;
    }
    let scratch = scratch_accuracies(dataset, base, seeds)?;
    let identity = AugmentationPool::identity();
    let jobs: Vec<(usize, u64)> = (0..specs.len()).flat_map(|r| seeds.iter().map(move |&s| (r, s))).collect();
    let cells = jobs
        .par_iter()
        .map(|&(r, seed)| {
            let pool_j = AugmentationPool::single(specs[r].1);
            run_cell(dataset, &base.with_seed(seed), &identity, &pool_j, scratch[&seed])
        })
        .collect::<Result<Vec<CellResult>>>()?;
    let rows = specs
        .iter()
        .enumerate()
        .map(|(r, &(value, _))| {
            let row_cells: Vec<&CellResult> = jobs
                .iter()
                .zip(&cells)
                .filter(|((row, _), _)| *row == r)
                .map(|(_, c)| c)
                .collect();
            let accs: Vec<f64> = row_cells.iter().map(|c| c.accuracy).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&accs);
            SweepRow {
                value,
                mean_accuracy,
                std_accuracy,
                mean_gain: row_cells.iter().map(|c| c.gain).sum::<f64>() / accs.len() as f64,
                seeds: accs.len(),
            }
        })
        .collect();
    Ok(SweepReport {
        kind,
        parameter: parameter.into(),
        rows,
        cells,
    })
}

/// Identity view against `kind` at each ratio.
pub fn strength_sweep(
    dataset: &GraphDataset,
    kind: AugmentationKind,
    ratios: &[f64],
    base: &ExperimentConfig,
    seeds: &[u64],
) -> Result<SweepReport> {
    if let Some(r) = ratios.iter().find(|r| !(0.0..=0.5).contains(*r)) {
        return Err(Error::InvalidArgument(format!("sweep ratio {r} is outside [0, 0.5]")));
    }
    let specs = ratios
        .iter()
        .map(|&r| (r, AugmentationSpec::new(kind).with_ratio(r)))
        .collect();
    sweep(dataset, kind, "ratio", specs, base, seeds)
}

/// Identity view against `kind` at ratio 0.2 with each degree-bias α.
pub fn pattern_sweep(
    dataset: &GraphDataset,
    kind: AugmentationKind,
    alphas: &[f64],
    base: &ExperimentConfig,
    seeds: &[u64],
) -> Result<SweepReport> {
    if !kind.supports_degree_bias() {
        return Err(Error::InvalidArgument(format!("{kind} has no degree-biased pattern")));
    }
    let specs = alphas
        .iter()
        .map(|&a| (a, AugmentationSpec::new(kind).with_alpha(a)))
        .collect();
    sweep(dataset, kind, "alpha", specs, base, seeds)
}

/// Loss curve of one pool pair under one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCurve {
    pub pool_i: String,
    pub pool_j: String,
    pub seed: u64,
    pub curve: LossCurve,
}

impl PairCurve {
    pub fn label(&self) -> String {
        format!("{}__{}", self.pool_i, self.pool_j)
    }
}

/// Pretraining curves for several pool pairs under identical seeds and optimizer.
pub fn loss_curve_compare(
    dataset: &GraphDataset,
    pairs: &[(AugmentationPool, AugmentationPool)],
    base: &ExperimentConfig,
    seeds: &[u64],
) -> Result<Vec<PairCurve>> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument("loss comparison needs at least two pool pairs".into()));
    }
    check_seeds(seeds)?;
    base.validate()?;
    let jobs: Vec<(usize, u64)> = (0..pairs.len()).flat_map(|p| seeds.iter().map(move |&s| (p, s))).collect();
    jobs.par_iter()
        .map(|&(p, seed)| {
            let (pool_i, pool_j) = &pairs[p];
            let config = base.pretrain.clone().with_seed(seed).with_pools(pool_i.clone(), pool_j.clone());
            let params = initial_params(dataset, &base.encoder, seed)?;
            let (_, curve) = pretrain_params(dataset, &config, params)?;
            Ok(PairCurve {
                pool_i: pool_i.label(),
                pool_j: pool_j.label(),
                seed,
                curve,
            })
        })
        .collect()
}

/// Long-format `pair,seed,epoch,mean_loss` table of several curves.
pub fn write_curves_csv(path: &Path, curves: &[PairCurve]) -> Result<()> {
    let rows: Vec<Vec<String>> = curves
        .iter()
        .flat_map(|c| {
            c.curve.losses.iter().enumerate().map(move |(e, l)| {
                vec![c.label(), c.seed.to_string(), (e + 1).to_string(), l.to_string()]
            })
        })
        .collect();
    write_table_csv(path, &["pair", "seed", "epoch", "mean_loss"], &rows)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_table_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row.iter().map(AsRef::as_ref))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Square matrix with a header row and a leading label column.
pub fn write_matrix_csv(path: &Path, labels: &[String], matrix: &[Vec<f64>]) -> Result<()> {
    if matrix.len() != labels.len() || matrix.iter().any(|r| r.len() != labels.len()) {
        return Err(Error::shape("write_matrix_csv", "matrix does not match its labels"));
    }
    let mut header = vec!["augmentation"];
    header.extend(labels.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = labels
        .iter()
        .zip(matrix)
        .map(|(l, r)| std::iter::once(l.clone()).chain(r.iter().map(f64::to_string)).collect())
        .collect();
    write_table_csv(path, &header, &rows)
}

/// Differentiable building blocks covered by [`gradient_suite`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradComponent {
    GcnLayer,
    GinLayer,
    ProjectionHead,
    ClassifierHead,
    NtXentExclusive,
    NtXentInclusive,
}

impl GradComponent {
    pub const ALL: [GradComponent; 6] = [
        GradComponent::GcnLayer,
        GradComponent::GinLayer,
        GradComponent::ProjectionHead,
        GradComponent::ClassifierHead,
        GradComponent::NtXentExclusive,
        GradComponent::NtXentInclusive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GradComponent::GcnLayer => "gcn_layer",
            GradComponent::GinLayer => "gin_layer",
            GradComponent::ProjectionHead => "projection_head",
            GradComponent::ClassifierHead => "classifier_head",
            GradComponent::NtXentExclusive => "nt_xent_paper_exclusive",
            GradComponent::NtXentInclusive => "nt_xent_standard_inclusive",
        }
    }
}

/// Finite-difference result of one component on one random draw.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckCase {
    pub component: GradComponent,
    pub draw: usize,
    pub max_rel_error: f64,
    pub checked: usize,
    pub pass: bool,
}

fn random_graph(rng: &mut Rng, dim: usize) -> Result<crate::graph::Graph> {
    use rand::Rng as _;
    let n = rng.gen_range(4..=8);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
    for _ in 0..n {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v {
            edges.push((u, v));
        }
    }
    let features = Tensor::<f64>::uniform(&[n, dim], 1.0, rng).into_data();
    crate::graph::Graph::new(n, edges, features, dim, None)
}

/// Runs [`crate::numerics::finite_diff_check`] on every component for `draws`
/// random parameter and input draws. Each objective weights the component's
/// output with a fixed random tensor and sums it, except the classifier head
/// (cross-entropy) and NT-Xent (the loss itself).
pub fn gradient_suite(draws: usize, step: f64, tolerance: f64, seed: u64) -> Result<Vec<GradCheckCase>> {
    use crate::contrastive::{nt_xent, LossVariant};
    use crate::encoder::{gcn_layer, gin_layer, project, BoundLinear, BoundParams};
    use crate::numerics::{finite_diff_check, Var};
    use rand::Rng as _;

    fn weighted_sum(tape: &mut Tape<f64>, out: Var, weight: &Tensor<f64>) -> Result<Var> {
        let w = tape.constant(weight.clone());
        let prod = tape.mul(out, w)?;
        tape.sum(prod, None)
    }
    fn gradients(tape: Tape<f64>, loss: Var, vars: &[Var]) -> Result<(f64, Vec<Tensor<f64>>)> {
        let value = tape.value(loss).item()?;
        let mut grads = tape.backward(loss)?;
        let grads = vars
            .iter()
            .map(|&v| grads.take(v).ok_or_else(|| Error::NonFinite("missing gradient".into())))
            .collect::<Result<_>>()?;
        Ok((value, grads))
    }
    let lin = |w: Var, b: Option<Var>| BoundLinear { weight: w, bias: b };
    let (dim, hidden, rows, classes) = (3, 4, 5, 3);

    let mut cases = Vec::new();
    for (ci, &component) in GradComponent::ALL.iter().enumerate() {
        for draw in 0..draws {
            let mut rng = substream(seed, "gradcheck", &[ci as u64, draw as u64]);
            let u = |shape: &[usize], rng: &mut Rng| Tensor::<f64>::uniform(shape, 1.0, rng);
            let report = match component {
                GradComponent::GcnLayer | GradComponent::GinLayer => {
                    let g = random_graph(&mut rng, dim)?;
                    let batch = GraphBatch::<f64>::new([&g])?;
                    let n = g.num_nodes();
                    let mut params = vec![u(&[n, dim], &mut rng), u(&[dim, hidden], &mut rng), u(&[1, hidden], &mut rng)];
                    if component == GradComponent::GinLayer {
                        params.push(u(&[hidden, hidden], &mut rng));
                        params.push(u(&[1, hidden], &mut rng));
                    }
                    let weight = u(&[n, hidden], &mut rng);
                    finite_diff_check(
                        |ps: &[Tensor<f64>]| {
                            let mut tape = Tape::new();
                            let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
                            let out = if component == GradComponent::GcnLayer {
                                gcn_layer(&mut tape, vars[0], &batch, &lin(vars[1], Some(vars[2])))?
                            } else {
                                let mlp = [lin(vars[1], Some(vars[2])), lin(vars[3], Some(vars[4]))];
                                gin_layer(&mut tape, vars[0], &batch, &mlp, 0.0)?
                            };
                            let loss = weighted_sum(&mut tape, out, &weight)?;
                            gradients(tape, loss, &vars)
                        },
                        &params,
                        step,
                        tolerance,
                    )?
                }
                GradComponent::ProjectionHead => {
                    let params = vec![u(&[rows, hidden], &mut rng), u(&[hidden, hidden], &mut rng), u(&[hidden, hidden], &mut rng)];
                    let weight = u(&[rows, hidden], &mut rng);
                    finite_diff_check(
                        |ps: &[Tensor<f64>]| {
                            let mut tape = Tape::new();
                            let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
                            let heads = [lin(vars[1], None), lin(vars[2], None)];
                            let bound = BoundParams::from_parts(vec![], heads, heads);
                            let out = project(&mut tape, vars[0], &bound)?;
                            let loss = weighted_sum(&mut tape, out, &weight)?;
                            gradients(tape, loss, &vars)
                        },
                        &params,
                        step,
                        tolerance,
                    )?
                }
                GradComponent::ClassifierHead => {
                    let params = vec![
                        u(&[rows, hidden], &mut rng),
                        u(&[hidden, hidden], &mut rng),
                        u(&[1, hidden], &mut rng),
                        u(&[hidden, classes], &mut rng),
                        u(&[1, classes], &mut rng),
                    ];
                    let labels: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..classes)).collect();
                    finite_diff_check(
                        |ps: &[Tensor<f64>]| {
                            let mut tape = Tape::new();
                            let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
                            let heads = [lin(vars[1], Some(vars[2])), lin(vars[3], Some(vars[4]))];
                            let bound = BoundParams::from_parts(vec![], heads, heads);
                            let logits = classify(&mut tape, vars[0], &bound)?;
                            let loss = cross_entropy(&mut tape, logits, &labels)?;
                            gradients(tape, loss, &vars)
                        },
                        &params,
                        step,
                        tolerance,
                    )?
                }
                GradComponent::NtXentExclusive | GradComponent::NtXentInclusive => {
                    let variant = if component == GradComponent::NtXentExclusive {
                        LossVariant::PaperExclusive
                    } else {
                        LossVariant::StandardInclusive
                    };
                    let params = vec![u(&[rows, hidden], &mut rng), u(&[rows, hidden], &mut rng)];
                    finite_diff_check(
                        |ps: &[Tensor<f64>]| {
                            let mut tape = Tape::new();
                            let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
                            let loss = nt_xent(&mut tape, vars[0], vars[1], 0.5, variant, false)?;
                            gradients(tape, loss, &vars)
                        },
                        &params,
                        step,
                        tolerance,
                    )?
                }
            };
            cases.push(GradCheckCase {
                component,
                draw,
                max_rel_error: report.max_rel_error,
                checked: report.checked,
                pass: report.pass,
            });
        }
    }
    Ok(cases)
}
