//! TUDataset text format.
//!
//! A dataset `NAME` is a directory holding:
//!
//! | file | content |
//! |------|---------|
//! | `NAME_A.txt` | `i, j` per line, 1-based global node ids, both directions listed |
//! | `NAME_graph_indicator.txt` | 1-based graph id of each node |
//! | `NAME_graph_labels.txt` | optional, one integer class per graph |
//! | `NAME_node_labels.txt` | optional, one integer per node |
//! | `NAME_node_attributes.txt` | optional, comma-separated reals per node |
//!
//! Node labels become a one-hot block over their sorted distinct values, node
//! attributes are appended after it, and a dataset with neither gets the single
//! normalized-degree column from [`super::degree_features`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{degree_features, Category, Graph, GraphDataset};
use crate::error::{Error, Result};

/// Default category of the well-known TUDataset benchmarks.
pub fn category_for_name(name: &str) -> Option<Category> {
    match name.to_ascii_uppercase().as_str() {
        "NCI1" | "NCI109" | "PROTEINS" | "PROTEINS_FULL" | "DD" | "MUTAG" | "PTC_MR"
        | "ENZYMES" => Some(Category::Biochemical),
        "COLLAB" | "IMDB-BINARY" | "IMDB-MULTI" => Some(Category::SocialDense),
        "REDDIT-BINARY" | "REDDIT-MULTI-5K" | "REDDIT-MULTI-12K" | "GITHUB_STARGAZERS" => {
            Some(Category::SocialSparse)
        }
        _ => None,
    }
}

struct Lines {
    path: PathBuf,
    lines: Vec<(usize, String)>,
}

impl Lines {
    fn read(path: PathBuf) -> Result<Self> {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim().to_string()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        Ok(Self { path, lines })
    }

    fn read_optional(path: PathBuf) -> Result<Option<Self>> {
        if path.is_file() {
            Self::read(path).map(Some)
        } else {
            Ok(None)
        }
    }

    fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    fn parse_fields<T: std::str::FromStr>(&self, line: usize, text: &str) -> Result<Vec<T>> {
        text.split(',')
            .map(|field| {
                let field = field.trim();
                field
                    .parse()
                    .map_err(|_| self.error(line, format!("cannot parse {field:?}")))
            })
            .collect()
    }

    fn integers(&self) -> Result<Vec<i64>> {
        self.lines
            .iter()
            .map(|(n, text)| {
                let fields: Vec<i64> = self.parse_fields(*n, text)?;
                Ok(fields[0])
            })
            .collect()
    }
}

fn file(directory: &Path, name: &str, suffix: &str) -> PathBuf {
    directory.join(format!("{name}_{suffix}.txt"))
}

/// Loads `directory/NAME_*.txt`. The category comes from [`category_for_name`],
/// falling back to [`Category::Synthetic`] for unknown names.
pub fn load_tudataset(directory: impl AsRef<Path>, name: &str) -> Result<GraphDataset> {
    let directory = directory.as_ref();
    let a_path = file(directory, name, "A");
    let indicator_path = file(directory, name, "graph_indicator");
    for path in [&a_path, &indicator_path] {
        if !path.is_file() {
            return Err(Error::MissingFile(path.clone()));
        }
    }

    let indicator_lines = Lines::read(indicator_path)?;
    let indicator = indicator_lines.integers()?;
    let num_nodes = indicator.len();
    let mut graph_of = Vec::with_capacity(num_nodes);
    let mut local_of = Vec::with_capacity(num_nodes);
    let mut sizes: Vec<usize> = Vec::new();
    for (&(line, _), &gid) in indicator_lines.lines.iter().zip(&indicator) {
        if gid < 1 {
            return Err(indicator_lines.error(line, format!("graph id {gid} is not 1-based")));
        }
        let g = (gid - 1) as usize;
        if g >= sizes.len() {
            sizes.resize(g + 1, 0);
        }
        graph_of.push(g);
        local_of.push(sizes[g]);
        sizes[g] += 1;
    }
    let num_graphs = sizes.len();

    let a_lines = Lines::read(a_path)?;
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (line, text) in &a_lines.lines {
        let pair: Vec<i64> = a_lines.parse_fields(*line, text)?;
        if pair.len() != 2 {
            return Err(a_lines.error(*line, "expected two node ids"));
        }
        let mut ends = [0usize; 2];
        for (end, &id) in ends.iter_mut().zip(&pair) {
            if id < 1 || id as usize > num_nodes {
                return Err(Error::NodeOutOfRange {
                    index: id.max(0) as usize,
                    num_nodes,
                });
            }
            *end = id as usize - 1;
        }
        let [u, v] = ends;
        if graph_of[u] != graph_of[v] {
            return Err(a_lines.error(*line, "edge joins nodes of different graphs"));
        }
        if u != v {
            let (a, b) = (local_of[u], local_of[v]);
            edges[graph_of[u]].push((a.min(b), a.max(b)));
        }
    }
    for list in &mut edges {
        list.sort_unstable();
        list.dedup();
    }

    let mut node_features: Vec<Vec<f64>> = vec![Vec::new(); num_nodes];
    if let Some(lines) = Lines::read_optional(file(directory, name, "node_labels"))? {
        let labels = lines.integers()?;
        if labels.len() != num_nodes {
            return Err(Error::LengthMismatch(format!(
                "{} node labels for {num_nodes} nodes in the graph indicator",
                labels.len()
            )));
        }
        let values: BTreeSet<i64> = labels.iter().copied().collect();
        let index: BTreeMap<i64, usize> = values.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        for (row, label) in node_features.iter_mut().zip(&labels) {
            let mut one_hot = vec![0.0; values.len()];
            one_hot[index[label]] = 1.0;
            row.extend(one_hot);
        }
    }
    if let Some(lines) = Lines::read_optional(file(directory, name, "node_attributes"))? {
        if lines.lines.len() != num_nodes {
            return Err(Error::LengthMismatch(format!(
                "{} node attribute rows for {num_nodes} nodes in the graph indicator",
                lines.lines.len()
            )));
        }
        let mut width = None;
        for ((line, text), row) in lines.lines.iter().zip(node_features.iter_mut()) {
            let values: Vec<f64> = lines.parse_fields(*line, text)?;
            if *width.get_or_insert(values.len()) != values.len() {
                return Err(lines.error(*line, "inconsistent attribute count"));
            }
            row.extend(values);
        }
    }

    let graph_labels = match Lines::read_optional(file(directory, name, "graph_labels"))? {
        Some(lines) => {
            let raw = lines.integers()?;
            if raw.len() != num_graphs {
                return Err(Error::LengthMismatch(format!(
                    "{} graph labels for {num_graphs} graphs",
                    raw.len()
                )));
            }
            let values: BTreeSet<i64> = raw.iter().copied().collect();
            let index: BTreeMap<i64, usize> =
                values.iter().enumerate().map(|(i, &v)| (v, i)).collect();
            Some((raw.iter().map(|v| index[v]).collect::<Vec<_>>(), values.len()))
        }
        None => None,
    };

    let mut per_graph_rows: Vec<Vec<Vec<f64>>> =
        sizes.iter().map(|&n| Vec::with_capacity(n)).collect();
    for (node, row) in node_features.into_iter().enumerate() {
        per_graph_rows[graph_of[node]].push(row);
    }
    let featureless = per_graph_rows.iter().flatten().all(Vec::is_empty);
    if featureless {
        let structures: Vec<_> = sizes.iter().copied().zip(edges.iter().cloned()).collect();
        for (rows, degs) in per_graph_rows.iter_mut().zip(degree_features(&structures)) {
            *rows = degs.into_iter().map(|d| vec![d]).collect();
        }
    }

    let mut graphs = Vec::with_capacity(num_graphs);
    for (g, (rows, edge_list)) in per_graph_rows.into_iter().zip(edges).enumerate() {
        let dim = rows.first().map_or(0, Vec::len);
        let label = graph_labels.as_ref().map(|(labels, _)| labels[g]);
        let features = rows.into_iter().flatten().collect();
        graphs.push(Graph::new(sizes[g], edge_list, features, dim, label)?);
    }
    let num_classes = graph_labels.map_or(0, |(_, c)| c);
    let category = category_for_name(name).unwrap_or(Category::Synthetic);
    GraphDataset::new(name, category, graphs, num_classes)
}

/// Writes `dataset` as `directory/NAME_*.txt`. Features are stored as node
/// attributes with shortest round-trip formatting, so reloading reproduces
/// them bit for bit. Graph labels are written when every graph has one.
pub fn write_tudataset(dataset: &GraphDataset, directory: impl AsRef<Path>) -> Result<()> {
    let directory = directory.as_ref();
    fs::create_dir_all(directory).map_err(|e| Error::io(directory, e))?;
    let name = dataset.name();
    let mut a = String::new();
    let mut indicator = String::new();
    let mut attributes = String::new();
    let mut offset = 1;
    for (g, graph) in dataset.graphs().iter().enumerate() {
        let adj = graph.adjacency();
        for (u, neighbors) in adj.iter().enumerate() {
            for &v in neighbors {
                a.push_str(&format!("{}, {}\n", u + offset, v + offset));
            }
        }
        for node in 0..graph.num_nodes() {
            indicator.push_str(&format!("{}\n", g + 1));
            let row: Vec<String> = graph.feature_row(node).iter().map(f64::to_string).collect();
            attributes.push_str(&row.join(", "));
            attributes.push('\n');
        }
        offset += graph.num_nodes();
    }
    let write = |suffix: &str, text: &str| -> Result<()> {
        let path = file(directory, name, suffix);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
    };
    write("A", &a)?;
    write("graph_indicator", &indicator)?;
    if dataset.feature_dim() > 0 {
        write("node_attributes", &attributes)?;
    }
    if let Ok(labels) = dataset.labels() {
        let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
        write("graph_labels", &text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_files(dir: &Path, name: &str, files: &[(&str, &str)]) {
        for (suffix, text) in files {
            fs::write(file(dir, name, suffix), text).unwrap();
        }
    }

    fn two_triangles(dir: &Path) {
        write_files(
            dir,
            "TRI",
            &[
                ("A", "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n5, 6\n6, 5\n4, 6\n6, 4\n"),
                ("graph_indicator", "1\n1\n1\n2\n2\n2\n"),
                ("graph_labels", "0\n1\n"),
                ("node_labels", "0\n1\n0\n1\n1\n0\n"),
            ],
        );
    }

    #[test]
    fn minimal_corpus() {
        let dir = tempfile::tempdir().unwrap();
        two_triangles(dir.path());
        let ds = load_tudataset(dir.path(), "TRI").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.num_classes(), 2);
        let g = &ds.graphs()[0];
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(g.feature_row(1), &[0.0, 1.0]);
        assert_eq!(ds.graphs()[1].label(), Some(1));
    }

    #[test]
    fn labels_and_attributes_concatenate() {
        let dir = tempfile::tempdir().unwrap();
        two_triangles(dir.path());
        let attrs = "0.5, 1\n1.5, 2\n2.5, 3\n3.5, 4\n4.5, 5\n5.5, 6\n";
        fs::write(file(dir.path(), "TRI", "node_attributes"), attrs).unwrap();
        let ds = load_tudataset(dir.path(), "TRI").unwrap();
        assert_eq!(ds.feature_dim(), 4);
        assert_eq!(ds.graphs()[1].feature_row(0), &[0.0, 1.0, 3.5, 4.0]);
    }

    #[test]
    fn featureless_gets_degree_column() {
        let dir = tempfile::tempdir().unwrap();
        write_files(
            dir.path(),
            "P",
            &[
                ("A", "1, 2\n2, 1\n2, 3\n3, 2\n"),
                ("graph_indicator", "1\n1\n1\n2\n"),
            ],
        );
        let ds = load_tudataset(dir.path(), "P").unwrap();
        assert_eq!(ds.feature_dim(), 1);
        assert_eq!(ds.graphs()[0].features(), &[0.5, 1.0, 0.5]);
        assert_eq!(ds.graphs()[1].features(), &[0.0]);
        assert_eq!(ds.num_classes(), 0);
    }

    #[test]
    fn error_paths() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_tudataset(dir.path(), "X"),
            Err(Error::MissingFile(_))
        ));

        write_files(dir.path(), "X", &[("A", "1, 9\n"), ("graph_indicator", "1\n1\n")]);
        assert!(matches!(
            load_tudataset(dir.path(), "X"),
            Err(Error::NodeOutOfRange { index: 9, num_nodes: 2 })
        ));

        write_files(
            dir.path(),
            "Y",
            &[("A", "1, 2\n"), ("graph_indicator", "1\n1\n"), ("node_labels", "0\n1\n1\n")],
        );
        assert!(matches!(
            load_tudataset(dir.path(), "Y"),
            Err(Error::LengthMismatch(_))
        ));

        write_files(dir.path(), "Z", &[("A", "1; 2\n"), ("graph_indicator", "1\n1\n")]);
        match load_tudataset(dir.path(), "Z") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn write_then_reload_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        two_triangles(dir.path());
        let ds = load_tudataset(dir.path(), "TRI").unwrap();
        let out = tempfile::tempdir().unwrap();
        write_tudataset(&ds, out.path()).unwrap();
        let back = load_tudataset(out.path(), "TRI").unwrap();
        assert_eq!(back, ds);
    }
}
