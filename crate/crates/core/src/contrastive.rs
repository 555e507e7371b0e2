//! NT-Xent objective and the contrastive pretraining loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{default_pool, sample_view_pair, AugmentationPool};
use crate::encoder::{encode, project, EncoderConfig, GraphBatch, ModelParams};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphDataset};
use crate::numerics::{adam_step, AdamConfig, AdamState, Tape, Tensor, Var};
use crate::rng::substream;
use crate::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Positive pair left out of the denominator; negatives from the j-view only.
    #[default]
    PaperExclusive,
    /// Positive pair included in the denominator.
    StandardInclusive,
}

impl LossVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::PaperExclusive => "paper_exclusive",
            LossVariant::StandardInclusive => "standard_inclusive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Minibatch size, capped at the dataset size.
    pub batch_size: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// `None` selects the dataset category's default pool.
    pub pool_i: Option<AugmentationPool>,
    pub pool_j: Option<AugmentationPool>,
    pub seed: u64,
    pub loss_variant: LossVariant,
    /// Average the i→j and j→i anchored losses.
    pub symmetric: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            temperature: 0.5,
            epochs: 20,
            learning_rate: 1e-3,
            pool_i: None,
            pool_j: None,
            seed: 0,
            loss_variant: LossVariant::PaperExclusive,
            symmetric: false,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch_size must be at least 2".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn with_pools(mut self, pool_i: AugmentationPool, pool_j: AugmentationPool) -> Self {
        self.pool_i = Some(pool_i);
        self.pool_j = Some(pool_j);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }
}

/// Per-epoch training trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    /// Mean NT-Xent loss per epoch.
    pub losses: Vec<f64>,
    /// Mean cosine similarity of positive pairs in projection space, measured
    /// before each step.
    pub positive_similarity: Vec<f64>,
}

impl LossCurve {
    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// Writes `epoch,mean_loss` rows, epochs counted from 1.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        writer.write_record(["epoch", "mean_loss"])?;
        for (epoch, loss) in self.losses.iter().enumerate() {
            writer.write_record([(epoch + 1).to_string(), loss.to_string()])?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("{}: {other:?}", path.display())),
    }
}

/// Cosine similarity; a zero vector has similarity 0 with everything.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn anchored<T: Scalar>(tape: &mut Tape<T>, sim: Var, variant: LossVariant) -> Result<Var> {
    let positives = tape.diagonal(sim)?;
    let lse = tape.log_sum_exp_rows(sim, variant == LossVariant::PaperExclusive)?;
    let per_anchor = tape.sub(lse, positives)?;
    tape.mean(per_anchor)
}

/// NT-Xent over `N` positive pairs (row `n` of `zi` with row `n` of `zj`).
pub fn nt_xent<T: Scalar>(
    tape: &mut Tape<T>,
    zi: Var,
    zj: Var,
    temperature: f64,
    variant: LossVariant,
    symmetric: bool,
) -> Result<Var> {
    let (si, sj) = (tape.value(zi).shape().to_vec(), tape.value(zj).shape().to_vec());
    if si.len() != 2 || si != sj {
        return Err(Error::shape("nt_xent", format!("views of shape {si:?} and {sj:?}")));
    }
    if si[0] < 2 {
        return Err(Error::InvalidArgument(format!(
            "nt_xent needs at least 2 pairs, got {}",
            si[0]
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    let ni = tape.row_l2_normalize(zi)?;
    let nj = tape.row_l2_normalize(zj)?;
    let njt = tape.transpose(nj)?;
    let cos = tape.matmul(ni, njt)?;
    let sim = tape.mul_scalar(cos, T::of(1.0 / temperature))?;
    let forward = anchored(tape, sim, variant)?;
    if !symmetric {
        return Ok(forward);
    }
    let sim_t = tape.transpose(sim)?;
    let backward = anchored(tape, sim_t, variant)?;
    let total = tape.add(forward, backward)?;
    tape.mul_scalar(total, T::of(0.5))
}

/// Value of [`nt_xent`] without keeping the tape.
pub fn nt_xent_value<T: Scalar>(
    zi: &Tensor<T>,
    zj: &Tensor<T>,
    temperature: f64,
    variant: LossVariant,
    symmetric: bool,
) -> Result<T> {
    let mut tape = Tape::new();
    let a = tape.constant(zi.clone());
    let b = tape.constant(zj.clone());
    let loss = nt_xent(&mut tape, a, b, temperature, variant, symmetric)?;
    tape.value(loss).item()
}

/// Freshly initialized parameters for `dataset`, drawn from the seed's `init` stream.
pub fn initial_params(dataset: &GraphDataset, encoder: &EncoderConfig, seed: u64) -> Result<ModelParams<f64>> {
    ModelParams::init(
        encoder,
        dataset.feature_dim(),
        dataset.num_classes().max(1),
        &mut substream(seed, "init", &[]),
    )
}

/// Contrastive pretraining from a fresh initialization.
pub fn pretrain(
    dataset: &GraphDataset,
    config: &PretrainConfig,
    encoder: &EncoderConfig,
) -> Result<(ModelParams<f64>, LossCurve)> {
    let params = initial_params(dataset, encoder, config.seed)?;
    pretrain_params(dataset, config, params)
}

/// Contrastive pretraining continuing from `params`.
pub fn pretrain_params(
    dataset: &GraphDataset,
    config: &PretrainConfig,
    mut params: ModelParams<f64>,
) -> Result<(ModelParams<f64>, LossCurve)> {
    config.validate()?;
    if dataset.len() < 2 {
        return Err(Error::InvalidDataset(format!(
            "pretraining needs at least 2 graphs, {} has {}",
            dataset.name(),
            dataset.len()
        )));
    }
    if dataset.feature_dim() != params.feature_dim {
        return Err(Error::shape(
            "pretrain",
            format!(
                "dataset feature dimension {} does not match the encoder's {}",
                dataset.feature_dim(),
                params.feature_dim
            ),
        ));
    }
    let pool_i = config.pool_i.clone().unwrap_or_else(|| default_pool(dataset.category()));
    let pool_j = config.pool_j.clone().unwrap_or_else(|| default_pool(dataset.category()));
    let adam = AdamConfig::with_learning_rate(config.learning_rate);
    let mut state = AdamState::new(params.named_tensors().into_iter().map(|(_, t)| t));
    let batch_size = config.batch_size.min(dataset.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = LossCurve::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut substream(config.seed, "shuffle", &[epoch as u64]));
        let (mut loss_total, mut sim_total, mut counted) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let views: Vec<(Graph, Graph)> = chunk
                .par_iter()
                .filter_map(|&idx| {
                    let mut rng = substream(config.seed, "views", &[epoch as u64, idx as u64]);
                    match sample_view_pair(&pool_i, &pool_j, &dataset.graphs()[idx], &mut rng) {
                        Ok(pair) => Some(pair),
                        Err(e) => {
                            log::warn!("epoch {}: skipping graph {idx}: {e}", epoch + 1);
                            None
                        }
                    }
                })
                .collect();
            if views.len() < 2 {
                continue;
            }
            let (loss, similarity) = step(&mut params, &mut state, &adam, config, &views)?;
            loss_total += loss * views.len() as f64;
            sim_total += similarity * views.len() as f64;
            counted += views.len();
        }
        if counted == 0 {
            return Err(Error::InvalidDataset(format!(
                "epoch {} had no minibatch with two usable graphs",
                epoch + 1
            )));
        }
        let mean = loss_total / counted as f64;
        log::info!("pretrain epoch {}: mean loss {mean:.6}", epoch + 1);
        curve.losses.push(mean);
        curve.positive_similarity.push(sim_total / counted as f64);
    }
    Ok((params, curve))
}

/// One Adam step on a minibatch of view pairs. Returns the loss and the mean
/// positive-pair similarity before the step.
fn step(
    params: &mut ModelParams<f64>,
    state: &mut AdamState<f64>,
    adam: &AdamConfig,
    config: &PretrainConfig,
    views: &[(Graph, Graph)],
) -> Result<(f64, f64)> {
    let batch_i = GraphBatch::new(views.iter().map(|(a, _)| a))?;
    let batch_j = GraphBatch::new(views.iter().map(|(_, b)| b))?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let hi = encode(&mut tape, &batch_i, &bound, &params.config)?;
    let hj = encode(&mut tape, &batch_j, &bound, &params.config)?;
    let zi = project(&mut tape, hi, &bound)?;
    let zj = project(&mut tape, hj, &bound)?;
    let loss = nt_xent(&mut tape, zi, zj, config.temperature, config.loss_variant, config.symmetric)?;
    let value = tape.value(loss).item()?;
    let (vi, vj) = (tape.value(zi), tape.value(zj));
    let similarity = (0..vi.rows()).map(|r| cosine_sim(vi.row(r), vj.row(r))).sum::<f64>() / vi.rows() as f64;

    let mut grads = tape.backward(loss)?;
    let grads: Vec<Tensor<f64>> = bound
        .vars()
        .iter()
        .map(|&v| grads.take(v).ok_or_else(|| Error::NonFinite("missing gradient".into())))
        .collect::<Result<_>>()?;
    let grad_refs: Vec<&Tensor<f64>> = grads.iter().collect();
    adam_step(&mut params.tensors_mut(), &grad_refs, state, adam)?;
    Ok((value, similarity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{synthetic_corpus, SyntheticConfig};
    use crate::numerics::finite_diff_check;
    use crate::rng::seeded;

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[3.0, 4.0], &[3.0, 4.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
        assert!((cosine_sim(&[1.0, 1.0], &[1.0, 0.0]) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    fn loss(zi: &Tensor<f64>, zj: &Tensor<f64>, tau: f64, variant: LossVariant) -> f64 {
        nt_xent_value(zi, zj, tau, variant, false).unwrap()
    }

    #[test]
    fn identical_embeddings_give_log_n_minus_one() {
        for n in [2, 3, 8] {
            for tau in [0.1, 0.5, 1.0] {
                let z = Tensor::full(&[n, 4], 0.7);
                let l = loss(&z, &z, tau, LossVariant::PaperExclusive);
                assert!((l - ((n - 1) as f64).ln()).abs() < 1e-9, "n={n} tau={tau}: {l}");
            }
        }
    }

    #[test]
    fn orthogonal_pair_example() {
        let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((loss(&z, &z, 1.0, LossVariant::PaperExclusive) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn invariances_and_inclusive_bound() {
        let mut rng = seeded(3);
        for _ in 0..100 {
            let zi = Tensor::<f64>::uniform(&[5, 3], 1.0, &mut rng);
            let zj = Tensor::<f64>::uniform(&[5, 3], 1.0, &mut rng);
            let base = loss(&zi, &zj, 0.5, LossVariant::PaperExclusive);
            let inclusive = loss(&zi, &zj, 0.5, LossVariant::StandardInclusive);
            assert!(inclusive >= base);

            let scales = Tensor::<f64>::uniform(&[5], 1.0, &mut rng).map(|s| 0.1 + 5.0 * s.abs());
            let scale = |z: &Tensor<f64>| {
                let rows: Vec<Vec<f64>> =
                    (0..5).map(|r| z.row(r).iter().map(|x| x * scales.data()[r]).collect()).collect();
                Tensor::from_rows(&rows).unwrap()
            };
            assert!((loss(&scale(&zi), &scale(&zj), 0.5, LossVariant::PaperExclusive) - base).abs() < 1e-9);

            let perm = [3, 0, 4, 1, 2];
            let permute = |z: &Tensor<f64>| {
                let rows: Vec<Vec<f64>> = perm.iter().map(|&r| z.row(r).to_vec()).collect();
                Tensor::from_rows(&rows).unwrap()
            };
            assert!((loss(&permute(&zi), &permute(&zj), 0.5, LossVariant::PaperExclusive) - base).abs() < 1e-9);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded(17);
        for variant in [LossVariant::PaperExclusive, LossVariant::StandardInclusive] {
            for symmetric in [false, true] {
                let zi = Tensor::<f64>::uniform(&[4, 3], 1.0, &mut rng);
                let zj = Tensor::<f64>::uniform(&[4, 3], 1.0, &mut rng);
                let objective = |ps: &[Tensor<f64>]| -> Result<(f64, Vec<Tensor<f64>>)> {
                    let mut tape = Tape::new();
                    let a = tape.param(ps[0].clone());
                    let b = tape.param(ps[1].clone());
                    let l = nt_xent(&mut tape, a, b, 0.5, variant, symmetric)?;
                    let value = tape.value(l).item()?;
                    let mut g = tape.backward(l)?;
                    Ok((value, vec![g.take(a).unwrap(), g.take(b).unwrap()]))
                };
                let report = finite_diff_check(objective, &[zi, zj], 1e-5, 1e-4).unwrap();
                assert!(report.pass, "{variant:?} {symmetric}: {report:?}");
            }
        }
    }

    #[test]
    fn rejects_degenerate_input() {
        let one = Tensor::<f64>::full(&[1, 3], 1.0);
        assert!(nt_xent_value(&one, &one, 0.5, LossVariant::PaperExclusive, false).is_err());
        let a = Tensor::<f64>::full(&[2, 3], 1.0);
        let b = Tensor::<f64>::full(&[2, 2], 1.0);
        assert!(nt_xent_value(&a, &b, 0.5, LossVariant::PaperExclusive, false).is_err());
        assert!(nt_xent_value(&a, &a, 0.0, LossVariant::PaperExclusive, false).is_err());
        assert!(PretrainConfig { temperature: -1.0, ..Default::default() }.validate().is_err());
    }

    fn small_corpus(n: usize) -> GraphDataset {
        synthetic_corpus(&SyntheticConfig { num_graphs: n, ..Default::default() }).unwrap()
    }

    fn small_encoder() -> EncoderConfig {
        EncoderConfig { hidden_dim: 16, ..Default::default() }
    }

    #[test]
    fn identity_views_have_unit_positive_similarity() {
        let data = small_corpus(12);
        let config = PretrainConfig { batch_size: 4, epochs: 1, ..Default::default() }
            .with_pools(AugmentationPool::identity(), AugmentationPool::identity());
        let (_, curve) = pretrain(&data, &config, &small_encoder()).unwrap();
        assert_eq!(curve.len(), 1);
        assert!((curve.positive_similarity[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pretraining_is_deterministic() {
        let data = small_corpus(15);
        let config = PretrainConfig { batch_size: 8, epochs: 2, seed: 9, ..Default::default() };
        let (pa, a) = pretrain(&data, &config, &small_encoder()).unwrap();
        let (pb, b) = pretrain(&data, &config, &small_encoder()).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert!(a.losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn loss_descends_on_synthetic_corpus() {
        let data = small_corpus(30);
        let config = PretrainConfig { batch_size: 10, learning_rate: 0.01, ..Default::default() };
        let (_, curve) = pretrain(&data, &config, &small_encoder()).unwrap();
        assert_eq!(curve.len(), 20);
        assert!(curve.last().unwrap() < curve.losses[0], "{:?}", curve.losses);
    }

    #[test]
    fn loss_curve_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let curve = LossCurve { losses: vec![1.5, 0.25], positive_similarity: vec![0.0, 0.0] };
        curve.write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "epoch,mean_loss\n1,1.5\n2,0.25\n");
    }
}
