//! Parser for the TU graph-classification text format.
//!
//! A dataset `NAME` in directory `dir` consists of:
//!
//! - `NAME_A.txt` — one directed adjacency entry `i, j` per line, 1-indexed
//!   over all nodes of all graphs; deduplicated into undirected simple edges
//! - `NAME_graph_indicator.txt` — the graph id of each node, 1-indexed and
//!   contiguous
//! - `NAME_graph_labels.txt` — one class label per graph, remapped densely
//!   to `0..C-1` in ascending label order
//! - `NAME_node_labels.txt` (optional) — integer node labels, one-hot encoded
//!   over the ascending label alphabet
//! - `NAME_node_attributes.txt` (optional) — comma-separated real vectors
//!
//! One-hot node labels and attributes are concatenated when both exist.
//! Self-loops in the raw files are dropped with a warning. Datasets with
//! neither labels nor attributes parse with 1-dim zero features;
//! [`augment_degree_feature`] replaces those with the raw node degree.

use crate::graph::{Graph, GraphError, LabeledGraph, Topology};
use ndarray::Array2;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TuError {
    #[error("missing mandatory file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: malformed line: {content}")]
    MalformedLine { file: String, line: usize, content: String },
    #[error("graph indicator must assign nodes to graphs 1..G contiguously (node {node})")]
    NonContiguousIndicator { node: usize },
    #[error("edge ({a}, {b}) crosses graph boundaries")]
    EdgeCrossesGraphs { a: usize, b: usize },
    #[error("{file}: expected {want} entries, found {got}")]
    CountMismatch { file: String, want: usize, got: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct TuDataset {
    pub name: String,
    pub graphs: Vec<LabeledGraph>,
    pub num_classes: usize,
    pub has_node_attributes: bool,
    pub has_node_labels: bool,
    /// Original graph labels in ascending order; position = dense class id.
    pub label_map: Vec<i64>,
    pub warnings: Vec<String>,
}

fn read_lines(path: &Path) -> Result<Vec<String>, TuError> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

fn parse_ints(path: &Path, want_fields: usize) -> Result<Vec<Vec<i64>>, TuError> {
    let file = path.display().to_string();
    let mut out = Vec::new();
    for (no, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Result<Vec<i64>, _> =
            line.split(',').map(|f| f.trim().parse::<i64>()).collect();
        match fields {
            Ok(v) if v.len() == want_fields => out.push(v),
            _ => {
                return Err(TuError::MalformedLine {
                    file,
                    line: no + 1,
                    content: line.clone(),
                })
            }
        }
    }
    Ok(out)
}

/// Parses `dir/NAME_*.txt` into labeled graphs with canonical edge lists.
pub fn parse_tu(dir: &Path, name: &str) -> Result<TuDataset, TuError> {
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));
    for mandatory in ["A", "graph_indicator", "graph_labels"] {
        let p = file(mandatory);
        if !p.exists() {
            return Err(TuError::MissingFile(p));
        }
    }
    let mut warnings = Vec::new();

    // node -> graph assignment, 1-indexed and contiguous
    let indicator: Vec<i64> =
        parse_ints(&file("graph_indicator"), 1)?.into_iter().map(|v| v[0]).collect();
    let total_nodes = indicator.len();
    let mut num_graphs = 0usize;
    for (node, &g) in indicator.iter().enumerate() {
        let expect_next = num_graphs as i64 + 1;
        if g == expect_next {
            num_graphs += 1;
        } else if g != num_graphs as i64 {
            return Err(TuError::NonContiguousIndicator { node: node + 1 });
        }
    }
    if num_graphs == 0 {
        return Err(TuError::CountMismatch {
            file: file("graph_indicator").display().to_string(),
            want: 1,
            got: 0,
        });
    }
    // node id ranges per graph
    let mut first_node = vec![usize::MAX; num_graphs];
    let mut count = vec![0usize; num_graphs];
    for (node, &g) in indicator.iter().enumerate() {
        let gi = (g - 1) as usize;
        first_node[gi] = first_node[gi].min(node);
        count[gi] += 1;
    }

    // undirected simple edges per graph
    let mut edges: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); num_graphs];
    for row in parse_ints(&file("A"), 2)? {
        let (a, b) = (row[0], row[1]);
        let ok = |v: i64| v >= 1 && v as usize <= total_nodes;
        if !ok(a) || !ok(b) {
            return Err(TuError::EdgeCrossesGraphs { a: a as usize, b: b as usize });
        }
        let (a, b) = (a as usize - 1, b as usize - 1);
        if a == b {
            warnings.push(format!("dropped self-loop at node {}", a + 1));
            continue;
        }
        let ga = (indicator[a] - 1) as usize;
        let gb = (indicator[b] - 1) as usize;
        if ga != gb {
            return Err(TuError::EdgeCrossesGraphs { a: a + 1, b: b + 1 });
        }
        let (lo, hi) = (a.min(b) - first_node[ga], a.max(b) - first_node[ga]);
        edges[ga].insert((lo, hi));
    }

    // graph labels, densely remapped in ascending order
    let raw_labels: Vec<i64> =
        parse_ints(&file("graph_labels"), 1)?.into_iter().map(|v| v[0]).collect();
    if raw_labels.len() != num_graphs {
        return Err(TuError::CountMismatch {
            file: file("graph_labels").display().to_string(),
            want: num_graphs,
            got: raw_labels.len(),
        });
    }
    let label_map: Vec<i64> = raw_labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let dense: BTreeMap<i64, i64> =
        label_map.iter().enumerate().map(|(i, &l)| (l, i as i64)).collect();

    // node features: one-hot labels ++ attributes
    let labels_path = file("node_labels");
    let attrs_path = file("node_attributes");
    let has_node_labels = labels_path.exists();
    let has_node_attributes = attrs_path.exists();
    let node_labels: Option<Vec<i64>> = if has_node_labels {
        let v: Vec<i64> = parse_ints(&labels_path, 1)?.into_iter().map(|r| r[0]).collect();
        if v.len() != total_nodes {
            return Err(TuError::CountMismatch {
                file: labels_path.display().to_string(),
                want: total_nodes,
                got: v.len(),
            });
        }
        Some(v)
    } else {
        None
    };
    let alphabet: Vec<i64> = node_labels
        .as_ref()
        .map(|v| v.iter().copied().collect::<BTreeSet<_>>().into_iter().collect())
        .unwrap_or_default();
    let node_attrs: Option<Vec<Vec<f64>>> = if has_node_attributes {
        let fname = attrs_path.display().to_string();
        let mut rows = Vec::new();
        for (no, line) in read_lines(&attrs_path)?.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> =
                line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            match row {
                Ok(v) if !v.is_empty() => rows.push(v),
                _ => {
                    return Err(TuError::MalformedLine {
                        file: fname,
                        line: no + 1,
                        content: line.clone(),
                    })
                }
            }
        }
        if rows.len() != total_nodes || rows.iter().any(|r| r.len() != rows[0].len()) {
            return Err(TuError::CountMismatch {
                file: fname,
                want: total_nodes,
                got: rows.len(),
            });
        }
        Some(rows)
    } else {
        None
    };

    let attr_dim = node_attrs.as_ref().map_or(0, |r| r[0].len());
    let d = (alphabet.len() + attr_dim).max(1);
    let mut graphs = Vec::with_capacity(num_graphs);
    for gi in 0..num_graphs {
        let n = count[gi];
        let mut x = Array2::zeros((n, d));
        for local in 0..n {
            let global = first_node[gi] + local;
            if let Some(nl) = &node_labels {
                let pos = alphabet.binary_search(&nl[global]).expect("label in alphabet");
                x[[local, pos]] = 1.0;
            }
            if let Some(na) = &node_attrs {
                for (j, &v) in na[global].iter().enumerate() {
                    x[[local, alphabet.len() + j]] = v;
                }
            }
        }
        let topo = Topology::new(n, edges[gi].iter().copied())?;
        graphs.push(LabeledGraph {
            graph: Graph::new(topo, x)?,
            label: dense[&raw_labels[gi]],
        });
    }

    Ok(TuDataset {
        name: name.to_string(),
        graphs,
        num_classes: label_map.len(),
        has_node_attributes,
        has_node_labels,
        label_map,
        warnings,
    })
}

/// When a dataset has no node information at all, each node's feature becomes
/// its raw degree (1-dim); datasets with labels or attributes pass through
/// unchanged.
pub fn augment_degree_feature(ds: &TuDataset) -> TuDataset {
    if ds.has_node_attributes || ds.has_node_labels {
        return ds.clone();
    }
    let graphs = ds
        .graphs
        .iter()
        .map(|lg| {
            let degs = lg.graph.topology().degrees();
            let x = Array2::from_shape_fn((lg.graph.n(), 1), |(i, _)| degs[i] as f64);
            LabeledGraph {
                graph: Graph::new(lg.graph.topology().clone(), x).expect("shape consistent"),
                label: lg.label,
            }
        })
        .collect();
    TuDataset { graphs, ..ds.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{read_jsonl_labeled, write_jsonl_labeled};
    use std::fs;

    /// triangle (nodes 1-3, label 1), 2-edge path (nodes 4-6, label -1),
    /// isolated pair (nodes 7-8, label 1)
    fn write_fixture(dir: &Path, node_labels: bool) {
        let name = "MINI3";
        fs::write(
            dir.join(format!("{name}_A.txt")),
            "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n5, 6\n6, 5\n",
        )
        .unwrap();
        fs::write(
            dir.join(format!("{name}_graph_indicator.txt")),
            "1\n1\n1\n2\n2\n2\n3\n3\n",
        )
        .unwrap();
        fs::write(dir.join(format!("{name}_graph_labels.txt")), "1\n-1\n1\n").unwrap();
        if node_labels {
            fs::write(
                dir.join(format!("{name}_node_labels.txt")),
                "0\n1\n0\n2\n1\n0\n1\n1\n",
            )
            .unwrap();
        }
    }

    #[test]
    fn parses_hand_built_fixture() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), false);
        let ds = parse_tu(dir.path(), "MINI3").unwrap();
        assert_eq!(ds.graphs.len(), 3);
        assert_eq!(ds.num_classes, 2);
        assert_eq!(ds.label_map, vec![-1, 1]);
        // labels {-1, 1} remapped to {0, 1}
        assert_eq!(
            ds.graphs.iter().map(|g| g.label).collect::<Vec<_>>(),
            vec![1, 0, 1]
        );
        assert_eq!(ds.graphs[0].graph.edges(), &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(ds.graphs[1].graph.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(ds.graphs[2].graph.edges(), &[] as &[(usize, usize)]);
        assert!(!ds.has_node_labels && !ds.has_node_attributes);
        // both (i,j) and (j,i) rows collapse into one undirected edge
        assert_eq!(ds.graphs[0].graph.edges().len(), 3);
    }

    #[test]
    fn degree_augmentation_hand_values() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), false);
        let ds = augment_degree_feature(&parse_tu(dir.path(), "MINI3").unwrap());
        let feats: Vec<Vec<f64>> = ds
            .graphs
            .iter()
            .map(|g| g.graph.features().iter().copied().collect())
            .collect();
        assert_eq!(feats[0], vec![2.0, 2.0, 2.0]);
        assert_eq!(feats[1], vec![1.0, 2.0, 1.0]);
        assert_eq!(feats[2], vec![0.0, 0.0]);
    }

    #[test]
    fn one_hot_node_labels_disable_augmentation() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), true);
        let ds = parse_tu(dir.path(), "MINI3").unwrap();
        assert!(ds.has_node_labels);
        // alphabet {0,1,2} -> 3-dim one-hot
        assert_eq!(ds.graphs[0].graph.dim(), 3);
        assert_eq!(
            ds.graphs[0].graph.features().row(1).to_vec(),
            vec![0.0, 1.0, 0.0]
        );
        assert_eq!(
            ds.graphs[1].graph.features().row(0).to_vec(),
            vec![0.0, 0.0, 1.0]
        );
        let same = augment_degree_feature(&ds);
        assert_eq!(same.graphs, ds.graphs);
    }

    #[test]
    fn whitespace_variants_parse_identically() {
        let a = tempfile::tempdir().unwrap();
        write_fixture(a.path(), false);
        let b = tempfile::tempdir().unwrap();
        fs::write(
            b.path().join("MINI3_A.txt"),
            "1,2\n2,1\n2,3\n3,2\n1,3\n3,1\n4,  5\n5,4\n5, 6\n6,5",
        )
        .unwrap();
        fs::write(b.path().join("MINI3_graph_indicator.txt"), "1\n1\n1\n2\n2\n2\n3\n3").unwrap();
        fs::write(b.path().join("MINI3_graph_labels.txt"), "1\n-1\n1").unwrap();
        let da = parse_tu(a.path(), "MINI3").unwrap();
        let db = parse_tu(b.path(), "MINI3").unwrap();
        assert_eq!(da.graphs, db.graphs);
    }

    #[test]
    fn self_loops_dropped_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), false);
        fs::write(
            dir.path().join("MINI3_A.txt"),
            "1, 2\n2, 1\n1, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n5, 6\n6, 5\n",
        )
        .unwrap();
        let ds = parse_tu(dir.path(), "MINI3").unwrap();
        assert_eq!(ds.warnings.len(), 1);
        assert_eq!(ds.graphs[0].graph.edges().len(), 3);
    }

    #[test]
    fn reports_errors_with_location() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), false);

        fs::write(dir.path().join("MINI3_A.txt"), "1, 2\nnot-a-number, 3\n").unwrap();
        let err = parse_tu(dir.path(), "MINI3").unwrap_err();
        assert!(matches!(err, TuError::MalformedLine { line: 2, .. }), "{err}");

        write_fixture(dir.path(), false);
        fs::write(dir.path().join("MINI3_A.txt"), "1, 4\n4, 1\n").unwrap();
        let err = parse_tu(dir.path(), "MINI3").unwrap_err();
        assert!(matches!(err, TuError::EdgeCrossesGraphs { a: 1, b: 4 }), "{err}");

        write_fixture(dir.path(), false);
        fs::write(dir.path().join("MINI3_graph_indicator.txt"), "1\n1\n3\n2\n2\n2\n3\n3\n").unwrap();
        let err = parse_tu(dir.path(), "MINI3").unwrap_err();
        assert!(matches!(err, TuError::NonContiguousIndicator { node: 3 }), "{err}");

        let err = parse_tu(dir.path(), "NOPE").unwrap_err();
        assert!(matches!(err, TuError::MissingFile(_)), "{err}");
    }

    #[test]
    fn jsonl_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), true);
        let ds = parse_tu(dir.path(), "MINI3").unwrap();
        let mut buf = Vec::new();
        write_jsonl_labeled(&mut buf, &ds.graphs).unwrap();
        let back = read_jsonl_labeled(&buf[..]).unwrap();
        assert_eq!(back, ds.graphs);
        let mut buf2 = Vec::new();
        write_jsonl_labeled(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);
    }
}
