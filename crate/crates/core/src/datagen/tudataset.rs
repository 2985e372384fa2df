//! Plain-text TUDataset layout: `{name}_A.txt` holds one-indexed `u, v` pairs over a global
//! node numbering, `{name}_graph_indicator.txt` assigns each node to a one-indexed graph,
//! `{name}_graph_labels.txt` has one label per graph and `{name}_node_labels.txt` (optional)
//! one categorical label per node.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph, Task};

fn file(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

/// Non-blank lines with their one-based line numbers.
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .collect())
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn int(path: &Path, line: usize, token: &str) -> Result<i64> {
    token
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("expected an integer, found `{token}`")))
}

fn read_ints(path: &Path) -> Result<Vec<(usize, i64)>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, l)| Ok((n, int(path, n, &l)?)))
        .collect()
}

/// Maps raw values onto dense indices in ascending value order.
fn densify(values: &[i64]) -> (Vec<usize>, usize) {
    let distinct: Vec<i64> = values.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let dense = values
        .iter()
        .map(|v| distinct.binary_search(v).expect("value present"))
        .collect();
    (dense, distinct.len())
}

/// Reads dataset `name` from `dir`. Graphs are undirected; duplicate and reversed edge
/// lines collapse into one edge, kept in first-seen order.
pub fn parse_tudataset(dir: &Path, name: &str) -> Result<Dataset> {
    let a_path = file(dir, name, "A");
    let ind_path = file(dir, name, "graph_indicator");
    let gl_path = file(dir, name, "graph_labels");
    let nl_path = file(dir, name, "node_labels");

    let indicator = read_ints(&ind_path)?;
    let graph_labels = read_ints(&gl_path)?;
    let graph_count = graph_labels.len();

    // graph_of[node] and each graph's first global node id
    let mut graph_of = Vec::with_capacity(indicator.len());
    let mut first_node = Vec::with_capacity(graph_count);
    for (node, &(line, g)) in indicator.iter().enumerate() {
        let expected_next = first_node.len() as i64 + 1;
        let current = first_node.len() as i64;
        if g == expected_next {
            first_node.push(node);
        } else if g != current || current == 0 {
            return Err(parse_err(
                &ind_path,
                line,
                format!("graph id {g} out of sequence after graph {current}"),
            ));
        }
        if g as usize > graph_count {
            return Err(parse_err(
                &ind_path,
                line,
                format!("graph id {g} exceeds the {graph_count} graph labels"),
            ));
        }
        graph_of.push(g as usize - 1);
    }
    if first_node.len() != graph_count {
        return Err(parse_err(
            &ind_path,
            indicator.last().map_or(1, |&(l, _)| l),
            format!("{} graphs indicated but {graph_count} graph labels", first_node.len()),
        ));
    }
    let total_nodes = graph_of.len();
    let node_count_of = |g: usize| {
        let end = first_node.get(g + 1).copied().unwrap_or(total_nodes);
        end - first_node[g]
    };

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); graph_count];
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    for (line, text) in read_lines(&a_path)? {
        let mut parts = text.split(',');
        let (Some(u), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(&a_path, line, "expected `u, v`"));
        };
        let (u, v) = (int(&a_path, line, u)?, int(&a_path, line, v)?);
        let in_range = |x: i64| x >= 1 && x as usize <= total_nodes;
        if !in_range(u) || !in_range(v) {
            return Err(parse_err(&a_path, line, format!("node id out of range 1..={total_nodes}")));
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        let g = graph_of[u];
        if graph_of[v] != g {
            return Err(parse_err(&a_path, line, "edge joins nodes of different graphs"));
        }
        let key = (u.min(v), u.max(v));
        if seen.insert(key) {
            edges[g].push((u - first_node[g], v - first_node[g]));
        }
    }

    let (features, feature_count) = if nl_path.exists() {
        let raw = read_ints(&nl_path)?;
        if raw.len() != total_nodes {
            return Err(parse_err(
                &nl_path,
                raw.last().map_or(1, |&(l, _)| l),
                format!("{} node labels for {total_nodes} nodes", raw.len()),
            ));
        }
        let values: Vec<i64> = raw.iter().map(|&(_, v)| v).collect();
        let (dense, k) = densify(&values);
        (dense.into_iter().map(|f| vec![f as u32]).collect::<Vec<_>>(), k)
    } else {
        (vec![Vec::new(); total_nodes], 0)
    };

    let label_values: Vec<i64> = graph_labels.iter().map(|&(_, v)| v).collect();
    let (labels, class_count) = densify(&label_values);

    let graphs = edges
        .into_iter()
        .enumerate()
        .map(|(g, e)| {
            let start = first_node[g];
            let n = node_count_of(g);
            Ok(Graph::new(n, e, false)?
                .with_features(features[start..start + n].to_vec())?
                .with_graph_label(labels[g]))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, Task::GraphClassification, class_count, feature_count, graphs)
}

/// Writes a graph-classification dataset in the layout [`parse_tudataset`] reads. Each
/// undirected edge is written in both directions, as the published files do.
pub fn write_tudataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    if dataset.task != Task::GraphClassification {
        return Err(Error::Argument("the TUDataset layout holds graph-classification data".into()));
    }
    fs::create_dir_all(dir)?;
    let (mut a, mut ind, mut gl, mut nl) = (String::new(), String::new(), String::new(), String::new());
    let mut offset = 0;
    for (g, graph) in dataset.graphs.iter().enumerate() {
        for &(u, v) in graph.edges() {
            writeln!(a, "{}, {}", u + offset + 1, v + offset + 1).unwrap();
            if !graph.is_directed() && u != v {
                writeln!(a, "{}, {}", v + offset + 1, u + offset + 1).unwrap();
            }
        }
        for f in graph.node_features() {
            writeln!(ind, "{}", g + 1).unwrap();
            if dataset.feature_count > 0 {
                let [label] = f.as_slice() else {
                    return Err(Error::Argument(format!(
                        "graph {g}: TUDataset node labels need exactly one feature per node"
                    )));
                };
                writeln!(nl, "{label}").unwrap();
            }
        }
        writeln!(gl, "{}", graph.graph_label().expect("validated graph label")).unwrap();
        offset += graph.node_count();
    }
    let name = &dataset.name;
    fs::write(file(dir, name, "A"), a)?;
    fs::write(file(dir, name, "graph_indicator"), ind)?;
    fs::write(file(dir, name, "graph_labels"), gl)?;
    if dataset.feature_count > 0 {
        fs::write(file(dir, name, "node_labels"), nl)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, files: &[(&str, &str)]) {
        for (suffix, body) in files {
            fs::write(file(dir, "TOY", suffix), body).unwrap();
        }
    }

    #[test]
    fn three_node_fixture() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            &[
                ("A", "1, 2\n2, 1\n2, 3\n3, 2\n"),
                ("graph_indicator", "1\n1\n1\n"),
                ("graph_labels", "-1\n"),
            ],
        );
        let ds = parse_tudataset(dir.path(), "TOY").unwrap();
        assert_eq!(ds.graphs.len(), 1);
        assert_eq!(ds.feature_count, 0);
        let g = &ds.graphs[0];
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.graph_label(), Some(0));
    }

    #[test]
    fn labels_are_densified_in_value_order() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            &[
                ("A", "1, 2\n3, 4\n"),
                ("graph_indicator", "1\n1\n2\n2\n"),
                ("graph_labels", "1\n-1\n"),
                ("node_labels", "6\n0\n6\n2\n"),
            ],
        );
        let ds = parse_tudataset(dir.path(), "TOY").unwrap();
        assert_eq!(ds.class_count, 2);
        assert_eq!(ds.feature_count, 3);
        assert_eq!(ds.graphs[0].graph_label(), Some(1));
        assert_eq!(ds.graphs[1].graph_label(), Some(0));
        assert_eq!(ds.graphs[1].node_features(), &[vec![2], vec![1]]);
        assert_eq!(ds.graphs[1].edges(), &[(0, 1)]);
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path(), &[("A", "1, 2\n"), ("graph_indicator", "1\n1\n")]);
        match parse_tudataset(dir.path(), "TOY") {
            Err(Error::MissingFile(p)) => assert!(p.ends_with("TOY_graph_labels.txt")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_indicator_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            &[
                ("A", "1, 2\n"),
                ("graph_indicator", "1\n2\n1\n"),
                ("graph_labels", "0\n1\n"),
            ],
        );
        match parse_tudataset(dir.path(), "TOY") {
            Err(Error::Parse { line, file, .. }) => {
                assert_eq!(line, 3);
                assert!(file.ends_with("TOY_graph_indicator.txt"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cross_graph_edge_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(
            dir.path(),
            &[
                ("A", "1, 2\n2, 3\n"),
                ("graph_indicator", "1\n1\n2\n"),
                ("graph_labels", "0\n1\n"),
            ],
        );
        assert!(matches!(
            parse_tudataset(dir.path(), "TOY"),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
