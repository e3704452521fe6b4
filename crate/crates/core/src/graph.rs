//! Graph and dataset types, TUDataset ingestion and degree statistics.
//!
//! A TUDataset directory holds one comma separated text file per table:
//!
//! * `<name>_A.txt`: one edge per line, `u, v` with 1-indexed global node ids
//! * `<name>_graph_indicator.txt`: line `i` holds the graph id of node `i`
//! * `<name>_graph_labels.txt`: line `g` holds the class label of graph `g`
//! * `<name>_node_labels.txt`: optional categorical label of node `i`
//!
//! Node attribute and edge files are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// A labelled graph with dense node features.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub adj: CsrMatrix,
    /// `n × d` node feature matrix.
    pub features: Array2<f64>,
    pub label: usize,
}

impl Graph {
    pub fn new(adj: CsrMatrix, features: Array2<f64>, label: usize) -> Result<Self> {
        if features.nrows() != adj.n() {
            return Err(Error::shape(format!(
                "{} feature rows for {} nodes",
                features.nrows(),
                adj.n()
            )));
        }
        Ok(Self { adj, features, label })
    }

    /// Graph with a single constant feature per node.
    pub fn unlabeled(adj: CsrMatrix, label: usize) -> Self {
        let n = adj.n();
        Self {
            adj,
            features: Array2::ones((n, 1)),
            label,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.n()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.num_nodes()).map(|i| self.adj.row_len(i)).max().unwrap_or(0)
    }

    /// Relabels nodes so node `i` becomes `perm[i]`; features move along.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let adj = self.adj.permute(perm)?;
        let mut features = Array2::zeros(self.features.dim());
        for (i, &p) in perm.iter().enumerate() {
            features.row_mut(p).assign(&self.features.row(i));
        }
        Ok(Self {
            adj,
            features,
            label: self.label,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    /// Feature dimensionality shared by every graph.
    pub d: usize,
    pub num_classes: usize,
    /// Degree statistic driving the default perturbation hyperparameters:
    /// the mean over graphs of each graph's maximum node degree.
    pub gamma: f64,
    /// Whether features came from categorical node labels.
    pub has_node_labels: bool,
}

impl Dataset {
    /// Assembles a dataset, deriving `d`, the class count and `gamma`.
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>, has_node_labels: bool) -> Result<Self> {
        let d = graphs.first().map_or(0, Graph::num_features);
        if let Some(g) = graphs.iter().find(|g| g.num_features() != d) {
            return Err(Error::shape(format!(
                "graphs disagree on feature width ({} vs {d})",
                g.num_features()
            )));
        }
        let num_classes = graphs.iter().map(|g| g.label + 1).max().unwrap_or(0);
        let mut ds = Self {
            name: name.into(),
            graphs,
            d,
            num_classes,
            gamma: 0.0,
            has_node_labels,
        };
        ds.gamma = if ds.graphs.is_empty() {
            0.0
        } else {
            mean_max_degree(&ds)?
        };
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label).collect()
    }

    pub fn total_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::num_nodes).sum()
    }

    pub fn stats(&self) -> Result<DatasetStats> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(DatasetStats {
            name: self.name.clone(),
            graphs: self.len(),
            avg_nodes: self.total_nodes() as f64 / self.len() as f64,
            avg_degree: avg_degree(self)?,
            mean_max_degree: mean_max_degree(self)?,
            classes: self.num_classes,
            d: self.d,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub name: String,
    pub graphs: usize,
    pub avg_nodes: f64,
    pub avg_degree: f64,
    pub mean_max_degree: f64,
    pub classes: usize,
    pub d: usize,
}

fn table_path(dir: &Path, name: &str, table: &str) -> PathBuf {
    dir.join(format!("{name}_{table}.txt"))
}

struct Table {
    file: String,
    rows: Vec<(usize, Vec<i64>)>,
}

fn read_table(path: &Path, required: bool) -> Result<Option<Table>> {
    if !path.exists() {
        return if required {
            Err(Error::MissingFile(path.to_path_buf()))
        } else {
            Ok(None)
        };
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<i64>().map_err(|_| Error::Format {
                    file: file.clone(),
                    line: idx + 1,
                    msg: format!("expected an integer, found {tok:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((idx + 1, values));
    }
    Ok(Some(Table { file, rows }))
}

impl Table {
    fn scalar_column(&self) -> Result<Vec<(usize, i64)>> {
        self.rows
            .iter()
            .map(|(line, vals)| match vals.as_slice() {
                [v] => Ok((*line, *v)),
                _ => Err(self.err(*line, format!("expected one value, found {}", vals.len()))),
            })
            .collect()
    }

    fn err(&self, line: usize, msg: String) -> Error {
        Error::Format {
            file: self.file.clone(),
            line,
            msg,
        }
    }
}

/// Maps arbitrary integer values onto `0..k` by ascending order.
fn remap_sorted(values: impl IntoIterator<Item = i64>) -> BTreeMap<i64, usize> {
    let mut map: BTreeMap<i64, usize> = values.into_iter().map(|v| (v, 0)).collect();
    for (i, slot) in map.values_mut().enumerate() {
        *slot = i;
    }
    map
}

/// Reads the TUDataset `name` stored in `dir`.
///
/// Edges are deduplicated and symmetrized, self-loops dropped, graph labels
/// remapped onto `0..C` in ascending order and node labels (when present)
/// one-hot encoded the same way.
pub fn parse_tu_dataset(dir: impl AsRef<Path>, name: &str) -> Result<Dataset> {
    let dir = dir.as_ref();
    let edges = read_table(&table_path(dir, name, "A"), true)?.expect("required");
    let indicator = read_table(&table_path(dir, name, "graph_indicator"), true)?.expect("required");
    let graph_labels = read_table(&table_path(dir, name, "graph_labels"), true)?.expect("required");
    let node_labels = read_table(&table_path(dir, name, "node_labels"), false)?;

    let labels = graph_labels.scalar_column()?;
    let num_graphs = labels.len();
    let class_map = remap_sorted(labels.iter().map(|&(_, v)| v));

    // global node id (0-based) -> (graph index, local index)
    let mut placement = Vec::new();
    let mut graph_sizes = vec![0usize; num_graphs];
    for (line, gid) in indicator.scalar_column()? {
        if gid < 1 || gid as usize > num_graphs {
            return Err(indicator.err(line, format!("graph id {gid} outside 1..={num_graphs}")));
        }
        let g = gid as usize - 1;
        placement.push((g, graph_sizes[g]));
        graph_sizes[g] += 1;
    }
    let num_nodes = placement.len();

    let mut graph_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (line, vals) in &edges.rows {
        let [u, v] = vals.as_slice() else {
            return Err(edges.err(*line, format!("expected two node ids, found {}", vals.len())));
        };
        let node = |id: i64| {
            if id < 1 || id as usize > num_nodes {
                Err(edges.err(*line, format!("node id {id} outside 1..={num_nodes}")))
            } else {
                Ok(placement[id as usize - 1])
            }
        };
        let (gu, lu) = node(*u)?;
        let (gv, lv) = node(*v)?;
        if gu != gv {
            return Err(edges.err(*line, format!("edge ({u}, {v}) crosses graphs")));
        }
        graph_edges[gu].push((lu, lv));
    }

    let mut features: Vec<Array2<f64>> = graph_sizes.iter().map(|&n| Array2::zeros((n, 0))).collect();
    if let Some(table) = &node_labels {
        let column = table.scalar_column()?;
        if column.len() != num_nodes {
            let line = column.last().map_or(1, |&(l, _)| l);
            return Err(table.err(line, format!("{} node labels for {num_nodes} nodes", column.len())));
        }
        let label_map = remap_sorted(column.iter().map(|&(_, v)| v));
        let d = label_map.len();
        for (g, f) in features.iter_mut().enumerate() {
            *f = Array2::zeros((graph_sizes[g], d));
        }
        for (node, &(_, raw)) in column.iter().enumerate() {
            let (g, local) = placement[node];
            features[g][[local, label_map[&raw]]] = 1.0;
        }
    }

    let graphs = labels
        .iter()
        .zip(graph_edges)
        .zip(features)
        .enumerate()
        .map(|(g, ((&(_, raw), edges), feats))| {
            let adj = CsrMatrix::from_edges(graph_sizes[g], edges)?;
            Graph::new(adj, feats, class_map[&raw])
        })
        .collect::<Result<Vec<_>>>()?;

    Dataset::new(name, graphs, node_labels.is_some())
}

/// Writes `ds` in TUDataset layout under `dir`. Node labels are written
/// from each feature row's argmax when the dataset has node labels.
pub fn write_tu_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (mut a, mut ind, mut gl, mut nl) = (String::new(), String::new(), String::new(), String::new());
    let mut offset = 1;
    for (g, graph) in ds.graphs.iter().enumerate() {
        for (i, j, _) in graph.adj.triplets() {
            let _ = writeln!(a, "{}, {}", i + offset, j + offset);
        }
        for row in graph.features.outer_iter() {
            let _ = writeln!(ind, "{}", g + 1);
            if ds.has_node_labels {
                let label = row.iter().position(|&v| v != 0.0).unwrap_or_default();
                let _ = writeln!(nl, "{label}");
            }
        }
        let _ = writeln!(gl, "{}", graph.label);
        offset += graph.num_nodes();
    }
    let write = |table: &str, body: &str| {
        let path = table_path(dir, &ds.name, table);
        fs::write(&path, body).map_err(|e| Error::io(path, e))
    };
    write("A", &a)?;
    write("graph_indicator", &ind)?;
    write("graph_labels", &gl)?;
    if ds.has_node_labels {
        write("node_labels", &nl)?;
    }
    Ok(())
}

/// Replaces node features with one-hot encodings of node degree.
/// The width is the largest degree in the dataset plus one.
pub fn encode_degree_features(ds: &Dataset) -> Dataset {
    let max_degree = ds.graphs.iter().map(Graph::max_degree).max().unwrap_or(0);
    let d = max_degree + 1;
    let graphs = ds
        .graphs
        .iter()
        .map(|g| {
            let mut features = Array2::zeros((g.num_nodes(), d));
            for i in 0..g.num_nodes() {
                features[[i, g.adj.row_len(i)]] = 1.0;
            }
            Graph {
                adj: g.adj.clone(),
                features,
                label: g.label,
            }
        })
        .collect();
    Dataset {
        name: ds.name.clone(),
        graphs,
        d,
        num_classes: ds.num_classes,
        gamma: ds.gamma,
        has_node_labels: false,
    }
}

/// Mean node degree pooled over every node of every graph.
pub fn avg_degree(ds: &Dataset) -> Result<f64> {
    let nodes = ds.total_nodes();
    if nodes == 0 {
        return Err(Error::EmptyDataset);
    }
    let degree_sum: usize = ds.graphs.iter().map(|g| g.adj.nnz()).sum();
    Ok(degree_sum as f64 / nodes as f64)
}

/// Mean over graphs of each graph's maximum node degree.
///
/// This is the "average degree" reported for the TU benchmarks and the
/// value the default drop probability and perturbation count are derived
/// from.
pub fn mean_max_degree(ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total: usize = ds.graphs.iter().map(Graph::max_degree).sum();
    Ok(total as f64 / ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_fixture(dir: &Path, name: &str, files: &[(&str, &str)]) {
        for (table, body) in files {
            fs::write(table_path(dir, name, table), body).unwrap();
        }
    }

    /// Graph 1: triangle on nodes 1-3, graph 2: single edge 4-5.
    fn two_graph_fixture(dir: &Path) {
        write_fixture(
            dir,
            "T",
            &[
                ("A", "1, 2\n2, 1\n2, 3\n3, 2\n1,3\r\n3, 1\n4, 5\n5, 4\n1, 1\n"),
                ("graph_indicator", "1\n1\n1\n2\n2\n"),
                ("graph_labels", "9\n5\n"),
                ("node_labels", "3\n3\n7\n7\n3\n"),
            ],
        );
    }

    #[test]
    fn handcrafted_fixture_remaps_labels() {
        let dir = tempdir().unwrap();
        two_graph_fixture(dir.path());
        let ds = parse_tu_dataset(dir.path(), "T").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.labels(), vec![1, 0]);
        assert_eq!(ds.graphs[0].num_nodes(), 3);
        assert_eq!(ds.graphs[0].adj.nnz(), 6);
        assert_eq!(ds.graphs[1].adj.nnz(), 2);
        assert_eq!(ds.d, 2);
        assert_eq!(ds.graphs[0].features.row(2).to_vec(), vec![0.0, 1.0]);
        assert_eq!(ds.graphs[1].features.row(1).to_vec(), vec![1.0, 0.0]);
        for g in &ds.graphs {
            g.adj.validate().unwrap();
            assert!((0..g.num_nodes()).all(|i| g.adj.get(i, i) == 0.0));
        }
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempdir().unwrap();
        write_fixture(dir.path(), "T", &[("A", "1, 2\n"), ("graph_labels", "1\n")]);
        let err = parse_tu_dataset(dir.path(), "T").unwrap_err();
        match err {
            Error::MissingFile(p) => assert!(p.ends_with("T_graph_indicator.txt")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn out_of_range_node_reports_line() {
        let dir = tempdir().unwrap();
        write_fixture(
            dir.path(),
            "T",
            &[
                ("A", "1, 2\n2, 9\n"),
                ("graph_indicator", "1\n1\n"),
                ("graph_labels", "0\n"),
            ],
        );
        match parse_tu_dataset(dir.path(), "T").unwrap_err() {
            Error::Format { line, file, .. } => {
                assert_eq!(line, 2);
                assert_eq!(file, "T_A.txt");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_graph_id_and_token_are_format_errors() {
        let dir = tempdir().unwrap();
        write_fixture(
            dir.path(),
            "T",
            &[("A", "1, 2\n"), ("graph_indicator", "1\n3\n"), ("graph_labels", "0\n")],
        );
        assert!(matches!(
            parse_tu_dataset(dir.path(), "T"),
            Err(Error::Format { line: 2, .. })
        ));
        write_fixture(dir.path(), "T", &[("graph_indicator", "1\nx\n")]);
        assert!(matches!(
            parse_tu_dataset(dir.path(), "T"),
            Err(Error::Format { line: 2, .. })
        ));
    }

    #[test]
    fn degree_encoding() {
        let star = CsrMatrix::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let tri = CsrMatrix::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let lonely = CsrMatrix::empty(1);
        let ds = Dataset::new(
            "S",
            vec![
                Graph::new(star, Array2::zeros((4, 0)), 0).unwrap(),
                Graph::new(tri, Array2::zeros((3, 0)), 1).unwrap(),
                Graph::new(lonely, Array2::zeros((1, 0)), 0).unwrap(),
            ],
            false,
        )
        .unwrap();
        let enc = encode_degree_features(&ds);
        assert_eq!(enc.d, 4);
        assert_eq!(enc.graphs[0].features.row(0).to_vec(), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(enc.graphs[0].features.row(2).to_vec(), vec![0.0, 1.0, 0.0, 0.0]);
        for row in enc.graphs[1].features.outer_iter() {
            assert_eq!(row.to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
        }
        assert_eq!(enc.graphs[2].features.row(0).to_vec(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn average_degree_examples() {
        let tri = || CsrMatrix::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let single = Dataset::new("t", vec![Graph::unlabeled(tri(), 0)], false).unwrap();
        assert_eq!(avg_degree(&single).unwrap(), 2.0);

        let with_isolated = CsrMatrix::from_edges(4, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let ds = Dataset::new("t", vec![Graph::unlabeled(with_isolated, 0)], false).unwrap();
        assert_eq!(avg_degree(&ds).unwrap(), 1.5);

        let empty = Dataset::new("e", vec![], false).unwrap();
        assert!(matches!(avg_degree(&empty), Err(Error::EmptyDataset)));
        assert!(matches!(mean_max_degree(&empty), Err(Error::EmptyDataset)));
    }

    #[test]
    fn mean_max_degree_averages_per_graph_maxima() {
        let star = CsrMatrix::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let edge = CsrMatrix::from_edges(2, [(0, 1)]).unwrap();
        let ds = Dataset::new("m", vec![Graph::unlabeled(star, 0), Graph::unlabeled(edge, 1)], false).unwrap();
        assert_eq!(mean_max_degree(&ds).unwrap(), 2.0);
        assert_eq!(ds.gamma, 2.0);
    }
}
