//! Labeled synthetic corpora made of three structural families.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{degree_features, Category, Graph, GraphDataset};
use crate::error::Result;
use crate::rng;

/// Class names, in label order.
pub const SYNTHETIC_FAMILIES: [&str; 3] = ["cycle", "tree", "dense"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_graphs: 300,
            min_nodes: 10,
            max_nodes: 20,
            seed: 0,
        }
    }
}

fn cycle_with_chords(n: usize, rng: &mut rng::Rng) -> Vec<(usize, usize)> {
    let mut edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    for _ in 0..rng.gen_range(0..=2) {
        let u = rng.gen_range(0..n);
        let v = (u + n / 2) % n;
        edges.push((u, v));
    }
    edges
}

fn random_tree(n: usize, rng: &mut rng::Rng) -> Vec<(usize, usize)> {
    (1..n).map(|v| (rng.gen_range(0..v), v)).collect()
}

fn dense_community(n: usize, rng: &mut rng::Rng) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    // spanning path keeps the graph connected
    let mut edges: Vec<_> = order.windows(2).map(|w| (w[0], w[1])).collect();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(0.5) {
                edges.push((u, v));
            }
        }
    }
    edges
}

/// Generates `num_graphs` connected graphs, label `i % 3` for graph `i`.
/// Features are `[deg / max_deg, 1]` with `max_deg` over the whole corpus.
pub fn synthetic_corpus(config: &SyntheticConfig) -> Result<GraphDataset> {
    let mut structures = Vec::with_capacity(config.num_graphs);
    for i in 0..config.num_graphs {
        let mut rng = rng::substream(config.seed, "synthetic", &[i as u64]);
        let n = rng.gen_range(config.min_nodes.max(3)..=config.max_nodes.max(config.min_nodes.max(3)));
        let mut edges = match i % 3 {
            0 => cycle_with_chords(n, &mut rng),
            1 => random_tree(n, &mut rng),
            _ => dense_community(n, &mut rng),
        };
        for e in &mut edges {
            *e = (e.0.min(e.1), e.0.max(e.1));
        }
        edges.retain(|&(u, v)| u != v);
        edges.sort_unstable();
        edges.dedup();
        structures.push((n, edges));
    }
    let degree_columns = degree_features(&structures);
    let graphs = structures
        .into_iter()
        .zip(degree_columns)
        .enumerate()
        .map(|(i, ((n, edges), deg))| {
            let features = deg.into_iter().flat_map(|d| [d, 1.0]).collect();
            Graph::new(n, edges, features, 2, Some(i % 3))
        })
        .collect::<Result<Vec<_>>>()?;
    GraphDataset::new("synthetic", Category::Synthetic, graphs, SYNTHETIC_FAMILIES.len())
}
