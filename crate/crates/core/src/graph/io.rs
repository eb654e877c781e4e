//! Graph bundle directories: `features.tsv`, `edges.tsv`, optional
//! `labels.tsv` (`-1` marks an unlabeled node) and `meta.json`.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fsutil::write_atomic;
use crate::scalar::Scalar;
use crate::tensor::{read_matrix_tsv, write_matrix_tsv, Matrix, MatrixFormatError};

use super::{Graph, GraphError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub num_nodes: usize,
    pub feature_dim: usize,
    pub num_classes: Option<usize>,
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse { file: file.to_path_buf(), line, message: message.into() }
}

fn read_text(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io { path: path.to_path_buf(), source })
}

pub fn load_graph<S: Scalar>(dir: &Path) -> Result<Graph<S>, GraphError> {
    let meta_path = dir.join("meta.json");
    let meta: GraphMeta =
        serde_json::from_str(&read_text(&meta_path)?).map_err(|e| parse_err(&meta_path, e.line(), e.to_string()))?;

    let feat_path = dir.join("features.tsv");
    let file = fs::File::open(&feat_path).map_err(|source| GraphError::Io { path: feat_path.clone(), source })?;
    let features: Matrix<S> = read_matrix_tsv(BufReader::new(file)).map_err(|e| match e {
        MatrixFormatError::Parse { line, message } => parse_err(&feat_path, line, message),
        other => parse_err(&feat_path, 0, other.to_string()),
    })?;
    if features.rows() != meta.num_nodes {
        return Err(parse_err(
            &feat_path,
            features.rows(),
            format!("{} feature rows but meta.json declares {} nodes", features.rows(), meta.num_nodes),
        ));
    }
    if features.rows() > 0 && features.cols() != meta.feature_dim {
        return Err(parse_err(
            &feat_path,
            1,
            format!("{} feature columns but meta.json declares {}", features.cols(), meta.feature_dim),
        ));
    }
    let features = if features.rows() == 0 { Matrix::zeros(0, meta.feature_dim) } else { features };

    let edge_path = dir.join("edges.tsv");
    let n = meta.num_nodes;
    let mut edges = Vec::new();
    for (i, line) in read_text(&edge_path)?.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(&edge_path, line_no, format!("expected 2 node ids, found {}", toks.len())));
        }
        let mut ends = [0usize; 2];
        for (slot, tok) in ends.iter_mut().zip(&toks) {
            *slot = tok.parse().map_err(|_| parse_err(&edge_path, line_no, format!("bad node id {tok:?}")))?;
            if *slot >= n {
                return Err(parse_err(&edge_path, line_no, format!("node id {} out of range for {n} nodes", *slot)));
            }
        }
        if ends[0] == ends[1] {
            return Err(parse_err(&edge_path, line_no, "self-loop"));
        }
        edges.push((ends[0], ends[1]));
    }

    let label_path = dir.join("labels.tsv");
    let labels = if label_path.exists() {
        let mut labels = Vec::with_capacity(n);
        for (i, line) in read_text(&label_path)?.lines().enumerate() {
            let line_no = i + 1;
            let tok = line.trim();
            if tok.is_empty() {
                continue;
            }
            let v: i64 = tok.parse().map_err(|_| parse_err(&label_path, line_no, format!("bad label {tok:?}")))?;
            let label = match v {
                -1 => None,
                v if v >= 0 => {
                    let v = v as usize;
                    if let Some(c) = meta.num_classes {
                        if v >= c {
                            return Err(parse_err(&label_path, line_no, format!("label {v} outside [0, {c})")));
                        }
                    }
                    Some(v)
                }
                v => return Err(parse_err(&label_path, line_no, format!("label {v} is negative (use -1 for unlabeled)"))),
            };
            labels.push(label);
        }
        if labels.len() != n {
            return Err(parse_err(&label_path, labels.len(), format!("{} labels for {n} nodes", labels.len())));
        }
        Some(labels)
    } else {
        None
    };

    Graph::new(features, edges, labels, meta.num_classes).map_err(|e| match e {
        GraphError::DuplicateEdge(u, v) => parse_err(&edge_path, 0, format!("duplicate edge ({u}, {v})")),
        other => other,
    })
}

pub fn save_graph<S: Scalar>(g: &Graph<S>, dir: &Path) -> Result<(), GraphError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| GraphError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;

    let mut buf = Vec::new();
    write_matrix_tsv(g.features(), &mut buf).expect("write to vec");
    let p = dir.join("features.tsv");
    write_atomic(&p, &buf).map_err(io(&p))?;

    let mut text = String::new();
    for &(u, v) in g.edges() {
        text.push_str(&format!("{u}\t{v}\n"));
    }
    let p = dir.join("edges.tsv");
    write_atomic(&p, text.as_bytes()).map_err(io(&p))?;

    if g.num_classes().is_some() {
        let mut text = String::new();
        for l in g.labels() {
            match l {
                Some(c) => text.push_str(&format!("{c}\n")),
                None => text.push_str("-1\n"),
            }
        }
        let p = dir.join("labels.tsv");
        write_atomic(&p, text.as_bytes()).map_err(io(&p))?;
    }

    let meta = GraphMeta { num_nodes: g.num_nodes(), feature_dim: g.feature_dim(), num_classes: g.num_classes() };
    let p = dir.join("meta.json");
    let json = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    write_atomic(&p, &json).map_err(io(&p))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmConfig};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SbmConfig { blocks: 2, nodes_per_block: 10, ..SbmConfig::default() };
        let mut g: Graph<f64> = generate_sbm(&cfg, 1).unwrap();
        let mut labels = g.labels().to_vec();
        labels[3] = None;
        g = g.with_labels(labels).unwrap();
        save_graph(&g, dir.path()).unwrap();
        let back: Graph<f64> = load_graph(dir.path()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.labels()[3], None);
    }

    fn write_bundle(dir: &Path, edges: &str, labels: Option<&str>) {
        fs::write(dir.join("meta.json"), r#"{"num_nodes":3,"feature_dim":2,"num_classes":2}"#).unwrap();
        fs::write(dir.join("features.tsv"), "0 1\n1 0\n0.5 0.5\n").unwrap();
        fs::write(dir.join("edges.tsv"), edges).unwrap();
        if let Some(l) = labels {
            fs::write(dir.join("labels.tsv"), l).unwrap();
        }
    }

    #[test]
    fn out_of_range_edge_names_line() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), "0 1\n1 3\n", None);
        match load_graph::<f64>(dir.path()) {
            Err(GraphError::Parse { file, line, .. }) => {
                assert!(file.ends_with("edges.tsv"));
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn minus_one_is_unlabeled() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), "0 1\n", Some("1\n-1\n0\n"));
        let g = load_graph::<f64>(dir.path()).unwrap();
        assert_eq!(g.labels(), &[Some(1), None, Some(0)]);
    }

    #[test]
    fn row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), "", None);
        fs::write(dir.path().join("features.tsv"), "0 1\n1 0\n").unwrap();
        assert!(matches!(load_graph::<f64>(dir.path()), Err(GraphError::Parse { .. })));
    }
}
