//! Graph augmentations: node dropping, edge perturbation, attribute masking
//! and random-walk subgraphs.
//!
//! Every augmentation takes a `ratio` (the fraction of the graph that is
//! removed or perturbed) and draws from a caller-provided RNG, so an
//! augmentation is a pure function of `(graph, spec, rng state)`. Node
//! selection for dropping and masking can be biased by degree through `alpha`:
//! node `n` is picked with probability proportional to `(deg_n + 1)^alpha`.

use std::collections::HashSet;
use std::fmt;

use rand::seq::index;
use rand::{Rng as _, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Category, Graph};
use crate::rng::Rng;

pub const DEFAULT_RATIO: f64 = 0.2;
/// Probability of jumping back to the seed node at each random-walk step.
pub const RESTART_PROBABILITY: f64 = 0.15;
/// The walk gives up after `WALK_BUDGET_FACTOR * num_nodes` steps.
pub const WALK_BUDGET_FACTOR: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    Identity,
    NodeDrop,
    EdgePerturb,
    AttrMask,
    Subgraph,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 5] = [
        AugmentationKind::Identity,
        AugmentationKind::NodeDrop,
        AugmentationKind::EdgePerturb,
        AugmentationKind::AttrMask,
        AugmentationKind::Subgraph,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AugmentationKind::Identity => "identity",
            AugmentationKind::NodeDrop => "node_drop",
            AugmentationKind::EdgePerturb => "edge_perturb",
            AugmentationKind::AttrMask => "attr_mask",
            AugmentationKind::Subgraph => "subgraph",
        }
    }

    pub fn supports_degree_bias(self) -> bool {
        matches!(self, AugmentationKind::NodeDrop | AugmentationKind::AttrMask)
    }
}

impl fmt::Display for AugmentationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AugmentationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AugmentationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown augmentation {s:?}")))
    }
}

fn default_ratio() -> f64 {
    DEFAULT_RATIO
}

/// One augmentation with its strength and pattern.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    /// Degree-bias exponent; 0 is uniform.
    #[serde(default)]
    pub alpha: f64,
    /// Edge perturbation only removes edges instead of swapping them.
    #[serde(default)]
    pub drop_only: bool,
}

impl AugmentationSpec {
    pub fn new(kind: AugmentationKind) -> Self {
        Self {
            kind,
            ratio: DEFAULT_RATIO,
            alpha: 0.0,
            drop_only: false,
        }
    }

    pub fn identity() -> Self {
        Self::new(AugmentationKind::Identity)
    }

    pub fn with_ratio(mut self, ratio: f64) -> Self {
        self.ratio = ratio;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn drop_only(mut self, drop_only: bool) -> Self {
        self.drop_only = drop_only;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == AugmentationKind::Identity {
            return Ok(());
        }
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(Error::InvalidArgument(format!(
                "augmentation ratio {} is outside [0, 1)",
                self.ratio
            )));
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidArgument("augmentation alpha must be finite".into()));
        }
        Ok(())
    }

    /// Short label such as `node_drop(0.2,a=1)`.
    pub fn label(&self) -> String {
        match self.kind {
            AugmentationKind::Identity => "identity".into(),
            kind if self.alpha != 0.0 => format!("{kind}({},a={})", self.ratio, self.alpha),
            kind => format!("{kind}({})", self.ratio),
        }
    }
}

/// Non-empty set of augmentations a view is drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AugmentationSpec>", into = "Vec<AugmentationSpec>")]
pub struct AugmentationPool {
    specs: Vec<AugmentationSpec>,
}

impl AugmentationPool {
    pub fn new(specs: Vec<AugmentationSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidArgument("augmentation pool is empty".into()));
        }
        for spec in &specs {
            spec.validate()?;
        }
        Ok(Self { specs })
    }

    pub fn single(spec: AugmentationSpec) -> Self {
        Self::new(vec![spec]).expect("a single valid spec")
    }

    pub fn identity() -> Self {
        Self::single(AugmentationSpec::identity())
    }

    pub fn specs(&self) -> &[AugmentationSpec] {
        &self.specs
    }

    pub fn label(&self) -> String {
        let labels: Vec<String> = self.specs.iter().map(AugmentationSpec::label).collect();
        labels.join("+")
    }
}

impl TryFrom<Vec<AugmentationSpec>> for AugmentationPool {
    type Error = Error;

    fn try_from(specs: Vec<AugmentationSpec>) -> Result<Self> {
        Self::new(specs)
    }
}

impl From<AugmentationPool> for Vec<AugmentationSpec> {
    fn from(pool: AugmentationPool) -> Self {
        pool.specs
    }
}

/// `round(x)` with halves rounded up. The small guard absorbs representation
/// error in products such as `0.35 * 10`.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Node-selection distribution `p_n ∝ (deg_n + 1)^alpha`, exactly uniform for `alpha == 0`.
pub fn degree_biased_probs(g: &Graph, alpha: f64) -> Vec<f64> {
    let n = g.num_nodes();
    if n == 0 {
        return Vec::new();
    }
    if alpha == 0.0 {
        return vec![1.0 / n as f64; n];
    }
    let weights: Vec<f64> = g
        .degrees()
        .into_iter()
        .map(|d| (d as f64 + 1.0).powf(alpha))
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Draws `k` distinct indices one at a time, each proportionally to its
/// weight among those not yet drawn. Returned in draw order.
pub fn sample_without_replacement(weights: &[f64], k: usize, rng: &mut impl RngCore) -> Vec<usize> {
    let mut remaining: Vec<f64> = weights.to_vec();
    let mut picked = Vec::with_capacity(k.min(weights.len()));
    for _ in 0..k.min(weights.len()) {
        let total: f64 = remaining.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut choice = None;
        for (i, &w) in remaining.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            choice = Some(i);
            if u < w {
                break;
            }
            u -= w;
        }
        let i = choice.expect("positive weight remains");
        remaining[i] = 0.0;
        picked.push(i);
    }
    picked
}

/// Removes `round(ratio * n)` nodes (at most `n - 1`) together with their edges.
pub fn node_drop(g: &Graph, ratio: f64, alpha: f64, rng: &mut impl RngCore) -> Result<Graph> {
    let n = g.num_nodes();
    if n < 2 {
        return Err(Error::Augmentation {
            augmentation: "node_drop",
            reason: format!("graph has {n} node(s), at least 2 are required"),
        });
    }
    let drop = round_half_up(ratio * n as f64).min(n - 1);
    let dropped: HashSet<usize> =
        sample_without_replacement(&degree_biased_probs(g, alpha), drop, rng)
            .into_iter()
            .collect();
    let keep: Vec<usize> = (0..n).filter(|v| !dropped.contains(v)).collect();
    g.induced_subgraph(&keep)
}

/// Removes `k = round(ratio * |E|)` edges uniformly and, unless `drop_only`,
/// adds `k` uniformly chosen non-edges that were not just removed.
pub fn edge_perturb(g: &Graph, ratio: f64, drop_only: bool, rng: &mut impl RngCore) -> Result<Graph> {
    let m = g.num_edges();
    if m == 0 {
        return Err(Error::Augmentation {
            augmentation: "edge_perturb",
            reason: "graph has no edges".into(),
        });
    }
    let k = round_half_up(ratio * m as f64).min(m);
    let removed: HashSet<usize> = index::sample(rng, m, k).into_iter().collect();
    let mut edges: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .enumerate()
        .filter(|(i, _)| !removed.contains(i))
        .map(|(_, &e)| e)
        .collect();
    if !drop_only && k > 0 {
        edges.extend(sample_non_edges(g, k, rng));
    }
    g.with_edges(edges)
}

fn sample_non_edges(g: &Graph, k: usize, rng: &mut impl RngCore) -> Vec<(usize, usize)> {
    let n = g.num_nodes();
    let total_pairs = n * n.saturating_sub(1) / 2;
    let available = total_pairs - g.num_edges();
    let k = k.min(available);
    if k == 0 {
        return Vec::new();
    }
    if total_pairs <= 1 << 20 || 2 * available < total_pairs {
        let candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !g.has_edge(u, v))
            .collect();
        return index::sample(rng, candidates.len(), k)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
    }
    let mut chosen = HashSet::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        let pair = (u.min(v), u.max(v));
        if u != v && !g.has_edge(pair.0, pair.1) && chosen.insert(pair) {
            out.push(pair);
        }
    }
    out
}

/// Zeroes the feature rows of `round(ratio * n)` nodes.
pub fn attr_mask(g: &Graph, ratio: f64, alpha: f64, rng: &mut impl RngCore) -> Result<Graph> {
    let n = g.num_nodes();
    if n == 0 {
        return Err(Error::Augmentation {
            augmentation: "attr_mask",
            reason: "graph has no nodes".into(),
        });
    }
    let masked = round_half_up(ratio * n as f64).min(n);
    let dim = g.feature_dim();
    let mut features = g.features().to_vec();
    for v in sample_without_replacement(&degree_biased_probs(g, alpha), masked, rng) {
        features[v * dim..(v + 1) * dim].fill(0.0);
    }
    g.with_features(features, dim)
}

/// Nodes visited by a restarting random walk from a uniform seed, in visit
/// order, and whether `target` distinct nodes were reached within the budget.
pub fn random_walk_nodes(g: &Graph, target: usize, rng: &mut impl RngCore) -> (Vec<usize>, bool) {
    let n = g.num_nodes();
    if n == 0 {
        return (Vec::new(), target == 0);
    }
    let adj = g.adjacency();
    let seed = rng.gen_range(0..n);
    let mut visited = vec![false; n];
    visited[seed] = true;
    let mut order = vec![seed];
    let mut current = seed;
    let budget = WALK_BUDGET_FACTOR * n;
    let mut steps = 0;
    while order.len() < target && steps < budget {
        steps += 1;
        let neighbors = &adj[current];
        current = if neighbors.is_empty() || rng.gen_bool(RESTART_PROBABILITY) {
            seed
        } else {
            neighbors[rng.gen_range(0..neighbors.len())]
        };
        if !visited[current] {
            visited[current] = true;
            order.push(current);
        }
    }
    let reached = order.len() >= target;
    (order, reached)
}

/// Keeps the `max(1, round((1 - ratio) * n))` nodes first reached by a
/// restarting random walk (fewer if the step budget runs out).
pub fn subgraph_rw(g: &Graph, ratio: f64, rng: &mut impl RngCore) -> Result<Graph> {
    let n = g.num_nodes();
    if n < 2 {
        return Err(Error::Augmentation {
            augmentation: "subgraph",
            reason: format!("graph has {n} node(s), at least 2 are required"),
        });
    }
    let target = round_half_up((1.0 - ratio) * n as f64).clamp(1, n);
    let (nodes, _) = random_walk_nodes(g, target, rng);
    g.induced_subgraph(&nodes)
}

/// Applies one augmentation.
pub fn apply(spec: &AugmentationSpec, g: &Graph, rng: &mut impl RngCore) -> Result<Graph> {
    spec.validate()?;
    match spec.kind {
        AugmentationKind::Identity => Ok(g.clone()),
        AugmentationKind::NodeDrop => node_drop(g, spec.ratio, spec.alpha, rng),
        AugmentationKind::EdgePerturb => edge_perturb(g, spec.ratio, spec.drop_only, rng),
        AugmentationKind::AttrMask => attr_mask(g, spec.ratio, spec.alpha, rng),
        AugmentationKind::Subgraph => subgraph_rw(g, spec.ratio, rng),
    }
}

/// Draws one spec uniformly from each pool and applies them to `g` on
/// independent child streams.
pub fn sample_view_pair(
    pool_i: &AugmentationPool,
    pool_j: &AugmentationPool,
    g: &Graph,
    rng: &mut impl RngCore,
) -> Result<(Graph, Graph)> {
    let spec_i = pool_i.specs[rng.gen_range(0..pool_i.specs.len())];
    let spec_j = pool_j.specs[rng.gen_range(0..pool_j.specs.len())];
    let mut rng_i = Rng::seed_from_u64(rng.next_u64());
    let mut rng_j = Rng::seed_from_u64(rng.next_u64());
    Ok((apply(&spec_i, g, &mut rng_i)?, apply(&spec_j, g, &mut rng_j)?))
}

/// Default pool for a dataset family, every spec at ratio 0.2 and uniform selection.
pub fn default_pool(category: Category) -> AugmentationPool {
    use AugmentationKind::*;
    let kinds: &[AugmentationKind] = match category {
        Category::Biochemical => &[NodeDrop, Subgraph],
        Category::SocialDense => &[NodeDrop, EdgePerturb, AttrMask, Subgraph],
        Category::SocialSparse => &[NodeDrop, EdgePerturb, Subgraph],
        Category::Synthetic => &[NodeDrop, EdgePerturb, AttrMask, Subgraph],
    };
    AugmentationPool::new(kinds.iter().map(|&k| AugmentationSpec::new(k)).collect())
        .expect("default pools are non-empty")
}
