#![allow(dead_code)]

use graphcl::graph::Graph;
use proptest::prelude::*;
use rand::{Rng, RngCore};

/// Graph on `n` nodes with unique one-dimensional features `v + 1`.
pub fn graph(n: usize, edges: Vec<(usize, usize)>, label: usize) -> Graph {
    let features = (0..n).map(|v| (v + 1) as f64).collect();
    Graph::new(n, edges.into_iter().filter(|(u, v)| u != v), features, 1, Some(label)).unwrap()
}

/// Random graph with `features_dim` uniform features per node.
pub fn random_graph(rng: &mut impl RngCore, min_nodes: usize, max_nodes: usize, dim: usize, connected: bool) -> Graph {
    let n = rng.gen_range(min_nodes..=max_nodes);
    let mut edges: Vec<(usize, usize)> = Vec::new();
    if connected {
        edges.extend((1..n).map(|v| (rng.gen_range(0..v), v)));
    }
    let extra = rng.gen_range(0..=n);
    for _ in 0..extra {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v {
            edges.push((u, v));
        }
    }
    let features = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Graph::new(n, edges, features, dim, Some(rng.gen_range(0..2))).unwrap()
}

/// Relabels node `v` as `perm[v]`.
pub fn permute(g: &Graph, perm: &[usize]) -> Graph {
    let dim = g.feature_dim();
    let mut features = vec![0.0; g.features().len()];
    for v in 0..g.num_nodes() {
        features[perm[v] * dim..(perm[v] + 1) * dim].copy_from_slice(g.feature_row(v));
    }
    let edges: Vec<_> = g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
    Graph::new(g.num_nodes(), edges, features, dim, g.label()).unwrap()
}

prop_compose! {
    pub fn arb_graph(max_nodes: usize)(n in 1..=max_nodes)
        (edges in prop::collection::vec((0..n, 0..n), 0..=2 * n), n in Just(n), label in 0usize..3) -> Graph {
        graph(n, edges, label)
    }
}

prop_compose! {
    pub fn arb_connected_graph(max_nodes: usize)(n in 2..=max_nodes)
        (parents in prop::collection::vec(any::<prop::sample::Index>(), n - 1),
         extra in prop::collection::vec((0..n, 0..n), 0..=n), n in Just(n)) -> Graph {
        let mut edges: Vec<(usize, usize)> = parents.iter().enumerate().map(|(i, p)| (p.index(i + 1), i + 1)).collect();
        edges.extend(extra);
        graph(n, edges, 0)
    }
}

pub mod cli {
    use std::collections::BTreeMap;
    use std::path::{Path, PathBuf};
    use std::process::{Command, Output};

    /// Small synthetic configuration that keeps every command under a few seconds.
    pub const SMALL_CONFIG: &str = r#"
seed = 7

[dataset.synthetic]
num_graphs = 30

[encoder]
hidden_dim = 8

[pretrain]
epochs = 3
batch_size = 10

[finetune]
epochs = 5

[split]
label_rate = 0.5
folds = 3

[probe]
folds = 3

[sweep]
ratios = [0.0, 0.2]
alphas = [-1.0, 1.0]

[gradcheck]
draws = 2
"#;

    pub fn write_config(dir: &Path, text: &str) -> PathBuf {
        let path = dir.join("run.toml");
        std::fs::write(&path, text).unwrap();
        path
    }

    pub fn graphcl(args: &[&str], output_dir: Option<&Path>) -> Output {
        let mut command = Command::new(env!("CARGO_BIN_EXE_graphcl"));
        command.args(args).env_remove("GRAPHCL_OUTPUT_DIR").env("RUST_LOG", "error");
        if let Some(dir) = output_dir {
            command.arg("--output-dir").arg(dir);
        }
        command.output().unwrap()
    }

    /// Every output file except the timestamped run log and the config echo.
    pub fn metric_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        std::fs::read_dir(dir)
            .unwrap()
            .map(|entry| entry.unwrap().path())
            .filter(|p| !matches!(p.file_name().unwrap().to_str(), Some("run_log.jsonl" | "effective_config.toml")))
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
            .collect()
    }

    /// Runs `args` twice into fresh directories; returns the two metric snapshots.
    pub fn rerun(args: &[&str], root: &Path, tag: &str) -> (i32, BTreeMap<String, Vec<u8>>, BTreeMap<String, Vec<u8>>) {
        let (a, b) = (root.join(format!("{tag}-a")), root.join(format!("{tag}-b")));
        let first = graphcl(args, Some(&a));
        let second = graphcl(args, Some(&b));
        assert_eq!(first.status.code(), second.status.code());
        (first.status.code().unwrap(), metric_files(&a), metric_files(&b))
    }
}
