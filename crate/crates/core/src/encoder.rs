//! GNN encoders, READOUT and the projection/classifier heads.
//!
//! A minibatch of graphs is flattened into one disjoint-union node matrix
//! ([`GraphBatch`]); message passing is an edge gather followed by a segment
//! sum over destination nodes, and READOUT is a segment sum (or mean) over the
//! node-to-graph assignment.

use std::sync::Arc;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{Checkpoint, Tape, Tensor, Var};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Gcn,
    Gin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub arch: Arch,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub readout: Readout,
    /// Fixed (not learned) self-weight of GIN's `(1 + eps)·h` term.
    pub gin_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Gin,
            num_layers: 3,
            hidden_dim: 32,
            readout: Readout::Mean,
            gin_eps: 0.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::InvalidArgument("encoder needs at least one layer".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::InvalidArgument("hidden_dim must be at least 1".into()));
        }
        if !self.gin_eps.is_finite() {
            return Err(Error::InvalidArgument("gin_eps must be finite".into()));
        }
        Ok(())
    }
}

/// Dense layer `x·W (+ b)` with `W` of shape `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn glorot(fan_in: usize, fan_out: usize, bias: bool, rng: &mut impl RngCore) -> Self {
        Self {
            weight: Tensor::glorot(fan_in, fan_out, rng),
            bias: bias.then(|| Tensor::zeros(&[1, fan_out])),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: bias.then(|| Tensor::zeros(&[1, fan_out])),
        }
    }
}

/// All trainable weights: encoder layers, projection head and classifier head.
///
/// A GCN layer holds one [`Linear`]; a GIN layer holds the two of its MLP.
/// The projection head is `hidden → hidden → hidden` without biases, the
/// classifier head `hidden → hidden → num_classes` with biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: EncoderConfig,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub layers: Vec<Vec<Linear<T>>>,
    pub projection: [Linear<T>; 2],
    pub classifier: [Linear<T>; 2],
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(
        config: &EncoderConfig,
        feature_dim: usize,
        num_classes: usize,
        rng: &mut impl RngCore,
    ) -> Result<Self> {
        config.validate()?;
        if feature_dim == 0 {
            return Err(Error::InvalidArgument("feature_dim must be at least 1".into()));
        }
        let hidden = config.hidden_dim;
        let layers = (0..config.num_layers)
            .map(|k| {
                let fan_in = if k == 0 { feature_dim } else { hidden };
                match config.arch {
                    Arch::Gcn => vec![Linear::glorot(fan_in, hidden, true, rng)],
                    Arch::Gin => vec![
                        Linear::glorot(fan_in, hidden, true, rng),
                        Linear::glorot(hidden, hidden, true, rng),
                    ],
                }
            })
            .collect();
        let projection = [
            Linear::glorot(hidden, hidden, false, rng),
            Linear::glorot(hidden, hidden, false, rng),
        ];
        let classifier = Self::fresh_classifier(hidden, num_classes, rng);
        Ok(Self {
            config: config.clone(),
            feature_dim,
            num_classes,
            layers,
            projection,
            classifier,
        })
    }

    fn fresh_classifier(hidden: usize, num_classes: usize, rng: &mut impl RngCore) -> [Linear<T>; 2] {
        [
            Linear::glorot(hidden, hidden, true, rng),
            Linear::glorot(hidden, num_classes.max(1), true, rng),
        ]
    }

    /// Replaces the classifier head with a freshly initialized one.
    pub fn reset_classifier(&mut self, num_classes: usize, rng: &mut impl RngCore) {
        self.num_classes = num_classes;
        self.classifier = Self::fresh_classifier(self.config.hidden_dim, num_classes, rng);
    }

    fn linears(&self) -> impl Iterator<Item = (String, &Linear<T>)> {
        let encoder = self.layers.iter().enumerate().flat_map(|(k, layer)| {
            layer
                .iter()
                .enumerate()
                .map(move |(i, lin)| (format!("encoder.{k}.{i}"), lin))
        });
        let heads = self
            .projection
            .iter()
            .enumerate()
            .map(|(i, lin)| (format!("projection.{i}"), lin))
            .chain(
                self.classifier
                    .iter()
                    .enumerate()
                    .map(|(i, lin)| (format!("classifier.{i}"), lin)),
            );
        encoder.chain(heads)
    }

    /// Every tensor with its checkpoint name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (prefix, lin) in self.linears() {
            out.push((format!("{prefix}.weight"), &lin.weight));
            if let Some(b) = &lin.bias {
                out.push((format!("{prefix}.bias"), b));
            }
        }
        out
    }

    /// Mutable tensors in the order of [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        let linears = self
            .layers
            .iter_mut()
            .flatten()
            .chain(self.projection.iter_mut())
            .chain(self.classifier.iter_mut());
        for lin in linears {
            out.push(&mut lin.weight);
            if let Some(b) = &mut lin.bias {
                out.push(b);
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// Registers every tensor on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        let mut all = Vec::new();
        let mut bind_linear = |lin: &Linear<T>| {
            let weight = tape.leaf(lin.weight.clone(), trainable);
            all.push(weight);
            let bias = lin.bias.as_ref().map(|b| {
                let v = tape.leaf(b.clone(), trainable);
                all.push(v);
                v
            });
            BoundLinear { weight, bias }
        };
        let layers = self
            .layers
            .iter()
            .map(|layer| layer.iter().map(&mut bind_linear).collect())
            .collect();
        let projection = [bind_linear(&self.projection[0]), bind_linear(&self.projection[1])];
        let classifier = [bind_linear(&self.classifier[0]), bind_linear(&self.classifier[1])];
        BoundParams {
            layers,
            projection,
            classifier,
            all,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let metadata = serde_json::json!({
            "encoder": self.config,
            "feature_dim": self.feature_dim,
            "num_classes": self.num_classes,
        });
        Checkpoint::new(metadata, self.named_tensors().into_iter())
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        let meta = &checkpoint.metadata;
        let config: EncoderConfig = serde_json::from_value(meta["encoder"].clone())?;
        let count = |key: &str| {
            meta[key]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Checkpoint(format!("metadata lacks {key}")))
        };
        let (feature_dim, num_classes) = (count("feature_dim")?, count("num_classes")?);
        let mut params = Self::init(&config, feature_dim, num_classes, &mut crate::rng::seeded(0))?;
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(params.tensors_mut()) {
            let loaded: Tensor<T> = checkpoint.tensor(name)?;
            if loaded.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name} has shape {:?}, expected {:?}",
                    loaded.shape(),
                    slot.shape()
                )));
            }
            *slot = loaded;
        }
        Ok(params)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Option<Var>,
}

/// [`ModelParams`] registered on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub layers: Vec<Vec<BoundLinear>>,
    pub projection: [BoundLinear; 2],
    pub classifier: [BoundLinear; 2],
    all: Vec<Var>,
}

impl BoundParams {
    pub fn from_parts(layers: Vec<Vec<BoundLinear>>, projection: [BoundLinear; 2], classifier: [BoundLinear; 2]) -> Self {
        let all = layers
            .iter()
            .flatten()
            .chain(&projection)
            .chain(&classifier)
            .flat_map(|lin| std::iter::once(lin.weight).chain(lin.bias))
            .collect();
        Self {
            layers,
            projection,
            classifier,
            all,
        }
    }

    /// Vars in the order of [`ModelParams::tensors_mut`].
    pub fn vars(&self) -> &[Var] {
        &self.all
    }
}

/// Disjoint union of several graphs, ready for message passing.
#[derive(Clone, Debug)]
pub struct GraphBatch<T> {
    features: Tensor<T>,
    graph_sizes: Vec<usize>,
    segments: Arc<[usize]>,
    inverse_sizes: Arc<[T]>,
    edges: Vec<(usize, usize)>,
    neighbor_src: Arc<[usize]>,
    neighbor_dst: Arc<[usize]>,
    gcn_src: Arc<[usize]>,
    gcn_dst: Arc<[usize]>,
    gcn_coef: Arc<[T]>,
    labels: Vec<Option<usize>>,
}

impl<T: Scalar> GraphBatch<T> {
    pub fn new<'a>(graphs: impl IntoIterator<Item = &'a Graph>) -> Result<Self> {
        let graphs: Vec<&Graph> = graphs.into_iter().collect();
        let dim = graphs
            .first()
            .map(|g| g.feature_dim())
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let mut features = Vec::new();
        let mut sizes = Vec::with_capacity(graphs.len());
        let mut segments = Vec::new();
        let mut edges = Vec::new();
        let mut labels = Vec::with_capacity(graphs.len());
        let mut offset = 0;
        for (gi, g) in graphs.iter().enumerate() {
            if g.num_nodes() == 0 {
                return Err(Error::InvalidArgument(format!("graph {gi} of the batch is empty")));
            }
            if g.feature_dim() != dim {
                return Err(Error::shape(
                    "graph batch",
                    format!("graph {gi} has feature dimension {}, expected {dim}", g.feature_dim()),
                ));
            }
            features.extend(g.features().iter().map(|&x| T::of(x)));
            sizes.push(g.num_nodes());
            segments.extend(std::iter::repeat(gi).take(g.num_nodes()));
            edges.extend(g.edges().iter().map(|&(u, v)| (u + offset, v + offset)));
            labels.push(g.label());
            offset += g.num_nodes();
        }
        let n = offset;

        let mut degree = vec![0usize; n];
        let (mut src, mut dst) = (Vec::with_capacity(2 * edges.len()), Vec::with_capacity(2 * edges.len()));
        for &(u, v) in &edges {
            degree[u] += 1;
            degree[v] += 1;
            src.extend([u, v]);
            dst.extend([v, u]);
        }
        // GCN propagation: neighbors plus self-loop, weight 1/sqrt(d̂_u d̂_v), d̂ = deg + 1
        let inv_sqrt: Vec<f64> = degree.iter().map(|&d| 1.0 / ((d + 1) as f64).sqrt()).collect();
        let mut gcn_src = src.clone();
        let mut gcn_dst = dst.clone();
        gcn_src.extend(0..n);
        gcn_dst.extend(0..n);
        let gcn_coef: Vec<T> = gcn_src
            .iter()
            .zip(&gcn_dst)
            .map(|(&u, &v)| T::of(inv_sqrt[u] * inv_sqrt[v]))
            .collect();

        Ok(Self {
            features: Tensor::matrix(n, dim, features)?,
            inverse_sizes: sizes.iter().map(|&s| T::one() / T::of(s as f64)).collect(),
            graph_sizes: sizes,
            segments: segments.into(),
            edges,
            neighbor_src: src.into(),
            neighbor_dst: dst.into(),
            gcn_src: gcn_src.into(),
            gcn_dst: gcn_dst.into(),
            gcn_coef: gcn_coef.into(),
            labels,
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.graph_sizes.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn features(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn graph_sizes(&self) -> &[usize] {
        &self.graph_sizes
    }

    /// Node-to-graph assignment, non-decreasing.
    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    /// Undirected edges in global node ids.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }
}

pub fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, lin: &BoundLinear) -> Result<Var> {
    let y = tape.matmul(x, lin.weight)?;
    match lin.bias {
        Some(b) => tape.add(y, b),
        None => Ok(y),
    }
}

fn check_rows<T: Scalar>(tape: &Tape<T>, h: Var, batch: &GraphBatch<T>, op: &'static str) -> Result<()> {
    let rows = tape.value(h).rows();
    if rows != batch.num_nodes() {
        return Err(Error::shape(op, format!("{rows} embedding rows for {} nodes", batch.num_nodes())));
    }
    Ok(())
}

/// `ReLU(S·H·W + b)` with `S = D̂^{-1/2}(A + I)D̂^{-1/2}`.
pub fn gcn_layer<T: Scalar>(tape: &mut Tape<T>, h: Var, batch: &GraphBatch<T>, lin: &BoundLinear) -> Result<Var> {
    check_rows(tape, h, batch, "gcn_layer")?;
    let hw = tape.matmul(h, lin.weight)?;
    let messages = tape.gather_rows(hw, batch.gcn_src.clone())?;
    let weighted = tape.scale_rows(messages, batch.gcn_coef.clone())?;
    let mut out = tape.segment_sum(weighted, batch.gcn_dst.clone(), batch.num_nodes())?;
    if let Some(b) = lin.bias {
        out = tape.add(out, b)?;
    }
    tape.relu(out)
}

/// `MLP((1 + eps)·h_v + Σ_{u ∈ N(v)} h_u)` with a `Linear → ReLU → Linear` MLP.
pub fn gin_layer<T: Scalar>(
    tape: &mut Tape<T>,
    h: Var,
    batch: &GraphBatch<T>,
    mlp: &[BoundLinear],
    eps: f64,
) -> Result<Var> {
    check_rows(tape, h, batch, "gin_layer")?;
    let [first, second] = mlp else {
        return Err(Error::shape("gin_layer", format!("{} linears, expected 2", mlp.len())));
    };
    let messages = tape.gather_rows(h, batch.neighbor_src.clone())?;
    let neighbors = tape.segment_sum(messages, batch.neighbor_dst.clone(), batch.num_nodes())?;
    let own = if eps == 0.0 { h } else { tape.mul_scalar(h, T::of(1.0 + eps))? };
    let combined = tape.add(own, neighbors)?;
    let hidden = linear(tape, combined, first)?;
    let hidden = tape.relu(hidden)?;
    linear(tape, hidden, second)
}

/// Per-graph pooling of node embeddings.
pub fn readout<T: Scalar>(tape: &mut Tape<T>, h: Var, batch: &GraphBatch<T>, kind: Readout) -> Result<Var> {
    check_rows(tape, h, batch, "readout")?;
    let pooled = tape.segment_sum(h, batch.segments.clone(), batch.num_graphs())?;
    match kind {
        Readout::Sum => Ok(pooled),
        Readout::Mean => tape.scale_rows(pooled, batch.inverse_sizes.clone()),
    }
}

/// Graph embeddings, one row per graph: `K` message-passing layers (each
/// followed by ReLU) and READOUT over the final layer.
pub fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    batch: &GraphBatch<T>,
    params: &BoundParams,
    config: &EncoderConfig,
) -> Result<Var> {
    if batch.graph_sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidArgument("empty graph in batch".into()));
    }
    let mut h = tape.constant(batch.features.clone());
    for layer in &params.layers {
        h = match config.arch {
            Arch::Gcn => gcn_layer(tape, h, batch, &layer[0])?,
            Arch::Gin => {
                let out = gin_layer(tape, h, batch, layer, config.gin_eps)?;
                tape.relu(out)?
            }
        };
    }
    readout(tape, h, batch, config.readout)
}

/// Projection head `z = ReLU(h·W1)·W2`.
pub fn project<T: Scalar>(tape: &mut Tape<T>, h: Var, params: &BoundParams) -> Result<Var> {
    let hidden = linear(tape, h, &params.projection[0])?;
    let hidden = tape.relu(hidden)?;
    linear(tape, hidden, &params.projection[1])
}

/// Classifier head, one logit row per graph.
pub fn classify<T: Scalar>(tape: &mut Tape<T>, h: Var, params: &BoundParams) -> Result<Var> {
    let hidden = linear(tape, h, &params.classifier[0])?;
    let hidden = tape.relu(hidden)?;
    linear(tape, hidden, &params.classifier[1])
}

/// Mean softmax cross-entropy of `logits` against class indices.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let lse = tape.log_sum_exp_rows(logits, false)?;
    let picked = tape.pick_per_row(logits, labels.into())?;
    let per_graph = tape.sub(lse, picked)?;
    tape.mean(per_graph)
}

/// Graph embeddings without recording gradients.
pub fn embed<T: Scalar>(params: &ModelParams<T>, batch: &GraphBatch<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let h = encode(&mut tape, batch, &bound, &params.config)?;
    Ok(tape.value(h).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures;
    use crate::numerics::finite_diff_check;
    use crate::rng::seeded;

    fn graph(n: usize, edges: &[(usize, usize)], features: Vec<f64>, dim: usize) -> Graph {
        Graph::new(n, edges.iter().copied(), features, dim, Some(0)).unwrap()
    }

    fn identity_linear(tape: &mut Tape<f64>, n: usize) -> BoundLinear {
        BoundLinear {
            weight: tape.constant(Tensor::identity(n)),
            bias: None,
        }
    }

    #[test]
    fn gcn_hand_examples() {
        let single = graph(1, &[], vec![-1.0, 2.0], 2);
        let batch = GraphBatch::<f64>::new([&single]).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(batch.features().clone());
        let lin = identity_linear(&mut tape, 2);
        let out = gcn_layer(&mut tape, h, &batch, &lin).unwrap();
        assert_eq!(tape.value(out).data(), &[0.0, 2.0]);

        let pair = graph(2, &[(0, 1)], vec![1.0, 1.0], 1);
        let batch = GraphBatch::<f64>::new([&pair]).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(batch.features().clone());
        let lin = identity_linear(&mut tape, 1);
        let out = gcn_layer(&mut tape, h, &batch, &lin).unwrap();
        assert!(tape.value(out).data().iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    fn mlp_of(tape: &mut Tape<f64>, rng: &mut crate::rng::Rng, d: usize) -> (Vec<BoundLinear>, Linear<f64>, Linear<f64>) {
        let a = Linear::glorot(d, 3, true, rng);
        let mut b = Linear::glorot(3, 2, true, rng);
        b.bias = Some(Tensor::uniform(&[1, 2], 0.5, rng));
        let bound = vec![
            BoundLinear { weight: tape.constant(a.weight.clone()), bias: Some(tape.constant(a.bias.clone().unwrap())) },
            BoundLinear { weight: tape.constant(b.weight.clone()), bias: Some(tape.constant(b.bias.clone().unwrap())) },
        ];
        (bound, a, b)
    }

    fn apply_mlp(a: &Linear<f64>, b: &Linear<f64>, h: &[f64]) -> Vec<f64> {
        let x = Tensor::matrix(1, h.len(), h.to_vec()).unwrap();
        let mut y = crate::numerics::matmul(&x, &a.weight).unwrap();
        y.add_scaled(a.bias.as_ref().unwrap(), 1.0);
        let y = y.map(|v| v.max(0.0));
        let mut z = crate::numerics::matmul(&y, &b.weight).unwrap();
        z.add_scaled(b.bias.as_ref().unwrap(), 1.0);
        z.into_data()
    }

    #[test]
    fn gin_hand_examples() {
        let mut rng = seeded(2);
        let single = graph(1, &[], vec![0.3, -0.7], 2);
        let batch = GraphBatch::<f64>::new([&single]).unwrap();
        let mut tape = Tape::new();
        let (mlp, a, b) = mlp_of(&mut tape, &mut rng, 2);
        let h = tape.constant(batch.features().clone());
        let out = gin_layer(&mut tape, h, &batch, &mlp, 0.0).unwrap();
        let expected = apply_mlp(&a, &b, &[0.3, -0.7]);
        assert!(tape.value(out).data().iter().zip(&expected).all(|(x, y)| (x - y).abs() < 1e-12));

        let pair = graph(2, &[(0, 1)], vec![0.4, 0.4], 1);
        let batch = GraphBatch::<f64>::new([&pair]).unwrap();
        let mut tape = Tape::new();
        let (mlp, a, b) = mlp_of(&mut tape, &mut rng, 1);
        let h = tape.constant(batch.features().clone());
        let out = gin_layer(&mut tape, h, &batch, &mlp, 0.0).unwrap();
        let expected = apply_mlp(&a, &b, &[0.8]);
        let value = tape.value(out);
        for r in 0..2 {
            assert!(value.row(r).iter().zip(&expected).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn layers_are_permutation_equivariant() {
        let mut rng = seeded(5);
        let g = graph(4, &[(0, 1), (1, 2), (1, 3)], vec![0.1, 0.5, -0.3, 0.9, 0.2, 0.4, -0.8, 0.6], 2);
        // relabel node v as perm[v]
        let perm = [2, 0, 3, 1];
        let mut features = vec![0.0; 8];
        for v in 0..4 {
            features[perm[v] * 2..perm[v] * 2 + 2].copy_from_slice(g.feature_row(v));
        }
        let edges: Vec<_> = g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let permuted = graph(4, &edges, features, 2);
        for arch in [Arch::Gcn, Arch::Gin] {
            let config = EncoderConfig { arch, hidden_dim: 3, ..Default::default() };
            let params = ModelParams::<f64>::init(&config, 2, 2, &mut rng).unwrap();
            let run = |g: &Graph| {
                let batch = GraphBatch::<f64>::new([g]).unwrap();
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape, false);
                let h = tape.constant(batch.features().clone());
                let out = match arch {
                    Arch::Gcn => gcn_layer(&mut tape, h, &batch, &bound.layers[0][0]),
                    Arch::Gin => gin_layer(&mut tape, h, &batch, &bound.layers[0], 0.0),
                }
                .unwrap();
                tape.value(out).clone()
            };
            let (a, b) = (run(&g), run(&permuted));
            for v in 0..4 {
                for (x, y) in a.row(v).iter().zip(b.row(perm[v])) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn readout_examples() {
        let g = graph(2, &[(0, 1)], vec![0.0, 0.0, 0.0, 0.0], 2);
        let batch = GraphBatch::<f64>::new([&g]).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let mean = readout(&mut tape, h, &batch, Readout::Mean).unwrap();
        assert_eq!(tape.value(mean).data(), &[2.0, 3.0]);
        let sum = readout(&mut tape, h, &batch, Readout::Sum).unwrap();
        assert_eq!(tape.value(sum).data(), &[4.0, 6.0]);
    }

    #[test]
    fn identical_graphs_embed_identically() {
        let g = fixtures::cycle(5);
        let params = ModelParams::<f64>::init(&EncoderConfig::default(), 1, 2, &mut seeded(0)).unwrap();
        let batch = GraphBatch::<f64>::new([&g, &fixtures::path(4), &g]).unwrap();
        let h = embed(&params, &batch).unwrap();
        assert_eq!(h.shape(), &[3, 32]);
        assert_eq!(h.row(0), h.row(2));
    }

    #[test]
    fn sum_readout_is_additive_over_disjoint_copies() {
        let g = graph(3, &[(0, 1), (1, 2)], vec![0.2, -0.5, 0.9], 1);
        let doubled = graph(6, &[(0, 1), (1, 2), (3, 4), (4, 5)], vec![0.2, -0.5, 0.9, 0.2, -0.5, 0.9], 1);
        for arch in [Arch::Gcn, Arch::Gin] {
            let config = EncoderConfig { arch, readout: Readout::Sum, hidden_dim: 8, ..Default::default() };
            let params = ModelParams::<f64>::init(&config, 1, 2, &mut seeded(4)).unwrap();
            let one = embed(&params, &GraphBatch::new([&g]).unwrap()).unwrap();
            let two = embed(&params, &GraphBatch::new([&doubled]).unwrap()).unwrap();
            for (a, b) in one.data().iter().zip(two.data()) {
                assert!((2.0 * a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn head_examples() {
        let mut params = ModelParams::<f64>::init(
            &EncoderConfig { hidden_dim: 3, ..Default::default() },
            1,
            4,
            &mut seeded(0),
        )
        .unwrap();
        params.projection[0].weight = Tensor::identity(3);
        params.projection[1].weight = Tensor::identity(3);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let h0 = Tensor::from_rows(&[vec![0.5, 0.0, 2.0], vec![1.0, 3.0, 0.25]]).unwrap();
        let h = tape.constant(h0.clone());
        let z = project(&mut tape, h, &bound).unwrap();
        assert_eq!(tape.value(z), &h0);

        for lin in params.projection.iter_mut().chain(params.classifier.iter_mut()) {
            *lin = Linear::zeros(lin.weight.shape()[0], lin.weight.shape()[1], lin.bias.is_some());
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let h = tape.constant(h0.clone());
        let z = project(&mut tape, h, &bound).unwrap();
        assert!(tape.value(z).data().iter().all(|&x| x == 0.0));
        let logits = classify(&mut tape, h, &bound).unwrap();
        assert_eq!(tape.value(logits).shape(), &[2, 4]);
        let loss = cross_entropy(&mut tape, logits, &[1, 3]).unwrap();
        assert!((tape.value(loss).item().unwrap() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gin_distinguishes_triangle_from_path() {
        let triangle = graph(3, &[(0, 1), (1, 2), (0, 2)], vec![1.0; 3], 1);
        let path = graph(3, &[(0, 1), (1, 2)], vec![1.0; 3], 1);
        let config = EncoderConfig { readout: Readout::Sum, hidden_dim: 16, ..Default::default() };
        let distinguished = (0..100)
            .filter(|&draw| {
                let params = ModelParams::<f64>::init(&config, 1, 2, &mut seeded(draw)).unwrap();
                let h = embed(&params, &GraphBatch::new([&triangle, &path]).unwrap()).unwrap();
                h.row(0).iter().zip(h.row(1)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() > 1e-6
            })
            .count();
        assert!(distinguished >= 99, "{distinguished}/100");
    }

    #[test]
    fn projection_gradient_matches_finite_differences() {
        let mut rng = seeded(8);
        let h0 = Tensor::<f64>::uniform(&[4, 5], 1.0, &mut rng);
        let target = Tensor::<f64>::uniform(&[4, 5], 1.0, &mut rng);
        let w1 = Tensor::<f64>::glorot(5, 5, &mut rng);
        let w2 = Tensor::<f64>::glorot(5, 5, &mut rng);
        let objective = |ps: &[Tensor<f64>]| -> Result<(f64, Vec<Tensor<f64>>)> {
            let mut tape = Tape::new();
            let w1 = tape.param(ps[0].clone());
            let w2 = tape.param(ps[1].clone());
            let bound = BoundParams {
                layers: vec![],
                projection: [BoundLinear { weight: w1, bias: None }, BoundLinear { weight: w2, bias: None }],
                classifier: [BoundLinear { weight: w1, bias: None }, BoundLinear { weight: w2, bias: None }],
                all: vec![],
            };
            let h = tape.constant(h0.clone());
            let z = project(&mut tape, h, &bound)?;
            let t = tape.constant(target.clone());
            let prod = tape.mul(z, t)?;
            let loss = tape.sum(prod, None)?;
            let value = tape.value(loss).item()?;
            let mut grads = tape.backward(loss)?;
            Ok((value, vec![grads.take(w1).unwrap(), grads.take(w2).unwrap()]))
        };
        let report = finite_diff_check(objective, &[w1, w2], 1e-5, 1e-4).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let config = EncoderConfig { arch: Arch::Gcn, num_layers: 2, hidden_dim: 4, ..Default::default() };
        let params = ModelParams::<f64>::init(&config, 3, 2, &mut seeded(1)).unwrap();
        let back = ModelParams::<f64>::from_checkpoint(&params.to_checkpoint()).unwrap();
        assert_eq!(back, params);
        let text = params.to_checkpoint().to_json().unwrap();
        let reparsed = Checkpoint::from_json(&text).unwrap();
        assert_eq!(ModelParams::<f64>::from_checkpoint(&reparsed).unwrap(), params);
    }

    #[test]
    fn batch_rejects_bad_input() {
        let empty = Graph::new(0, [], vec![], 1, None).unwrap();
        assert!(GraphBatch::<f64>::new([&empty]).is_err());
        let a = fixtures::path(3);
        let b = a.with_features(vec![0.0; 6], 2).unwrap();
        assert!(GraphBatch::<f64>::new([&a, &b]).is_err());
        assert!(GraphBatch::<f64>::new(std::iter::empty::<&Graph>()).is_err());
        assert!(EncoderConfig { num_layers: 0, ..Default::default() }.validate().is_err());
    }
}
