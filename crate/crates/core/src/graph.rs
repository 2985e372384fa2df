//! Graph and dataset containers, units of supervision and cross-validation folds.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const FOLD_COUNT: usize = 10;
pub const VALIDATION_FRACTION: f64 = 0.1;

/// Compressed sparse rows: row `i` lists the column ids `indices[offsets[i]..offsets[i+1]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    rows: usize,
    cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Csr {
    /// Builds from `(row, col)` pairs. Each row's columns end up sorted ascending.
    pub fn from_pairs(rows: usize, cols: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
        pairs.sort_unstable();
        let mut offsets = vec![0usize; rows + 1];
        for &(r, c) in &pairs {
            debug_assert!(r < rows && c < cols);
            offsets[r + 1] += 1;
        }
        for i in 0..rows {
            offsets[i + 1] += offsets[i];
        }
        Csr {
            rows,
            cols,
            offsets,
            indices: pairs.into_iter().map(|(_, c)| c).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    NodeClassification,
    GraphClassification,
}

/// A graph with dense node ids `0..node_count`.
///
/// For directed graphs an edge `(u, v)` carries messages from `u` to `v`, so
/// [`Graph::neighbors`] of `v` are its in-neighbors. Undirected graphs store each edge
/// once and expose it in both directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRecord", into = "GraphRecord")]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    directed: bool,
    node_features: Vec<Vec<u32>>,
    node_labels: Option<Vec<Option<usize>>>,
    graph_label: Option<usize>,
    adjacency: Csr,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GraphRecord {
    node_count: usize,
    directed: bool,
    edges: Vec<(usize, usize)>,
    node_features: Vec<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_labels: Option<Vec<Option<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph_label: Option<usize>,
}

impl TryFrom<GraphRecord> for Graph {
    type Error = Error;

    fn try_from(r: GraphRecord) -> Result<Self> {
        let mut g = Graph::new(r.node_count, r.edges, r.directed)?.with_features(r.node_features)?;
        g.node_labels = r.node_labels;
        g.graph_label = r.graph_label;
        g.check_labels()?;
        Ok(g)
    }
}

impl From<Graph> for GraphRecord {
    fn from(g: Graph) -> Self {
        GraphRecord {
            node_count: g.node_count,
            directed: g.directed,
            edges: g.edges,
            node_features: g.node_features,
            node_labels: g.node_labels,
            graph_label: g.graph_label,
        }
    }
}

impl Graph {
    pub fn new(node_count: usize, edges: Vec<(usize, usize)>, directed: bool) -> Result<Self> {
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= node_count || v >= node_count) {
            return Err(Error::Argument(format!(
                "edge ({u}, {v}) out of range for {node_count} nodes"
            )));
        }
        let adjacency = if directed {
            Csr::from_pairs(node_count, node_count, edges.iter().map(|&(u, v)| (v, u)))
        } else {
            let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(edges.len() * 2);
            for &(u, v) in &edges {
                pairs.push((u, v));
                if u != v {
                    pairs.push((v, u));
                }
            }
            Csr::from_pairs(node_count, node_count, pairs)
        };
        Ok(Graph {
            node_count,
            edges,
            directed,
            node_features: vec![Vec::new(); node_count],
            node_labels: None,
            graph_label: None,
            adjacency,
        })
    }

    pub fn with_features(mut self, features: Vec<Vec<u32>>) -> Result<Self> {
        if features.len() != self.node_count {
            return Err(Error::Argument(format!(
                "{} feature rows for {} nodes",
                features.len(),
                self.node_count
            )));
        }
        self.node_features = features;
        Ok(self)
    }

    pub fn with_node_labels(mut self, labels: Vec<Option<usize>>) -> Result<Self> {
        self.node_labels = Some(labels);
        self.check_labels()?;
        Ok(self)
    }

    pub fn with_graph_label(mut self, label: usize) -> Self {
        self.graph_label = Some(label);
        self
    }

    fn check_labels(&self) -> Result<()> {
        if let Some(l) = &self.node_labels {
            if l.len() != self.node_count {
                return Err(Error::Argument(format!(
                    "{} node labels for {} nodes",
                    l.len(),
                    self.node_count
                )));
            }
        }
        if self.node_labels.is_some() && self.graph_label.is_some() {
            return Err(Error::Argument(
                "a graph carries either node labels or a graph label, not both".into(),
            ));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn node_features(&self) -> &[Vec<u32>] {
        &self.node_features
    }

    pub fn node_labels(&self) -> Option<&[Option<usize>]> {
        self.node_labels.as_deref()
    }

    pub fn graph_label(&self) -> Option<usize> {
        self.graph_label
    }

    /// Message senders of `node`, sorted ascending.
    pub fn neighbors(&self, node: usize) -> Result<&[usize]> {
        if node >= self.node_count {
            return Err(Error::Argument(format!(
                "node {node} out of range for {} nodes",
                self.node_count
            )));
        }
        Ok(self.adjacency.row(node))
    }

    /// Unchecked variant of [`Graph::neighbors`] for hot loops.
    #[inline]
    pub fn senders(&self, node: usize) -> &[usize] {
        self.adjacency.row(node)
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.row(node).len()
    }

    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    /// Applies a node relabeling `perm[old] = new`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        assert_eq!(perm.len(), self.node_count);
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut features = vec![Vec::new(); self.node_count];
        for (old, f) in self.node_features.iter().enumerate() {
            features[perm[old]] = f.clone();
        }
        let mut g = Graph::new(self.node_count, edges, self.directed)?.with_features(features)?;
        if let Some(labels) = &self.node_labels {
            let mut new = vec![None; self.node_count];
            for (old, l) in labels.iter().enumerate() {
                new[perm[old]] = *l;
            }
            g.node_labels = Some(new);
        }
        g.graph_label = self.graph_label;
        Ok(g)
    }
}

/// One labeled item of supervision: a whole graph, or one node of a graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Unit {
    pub graph: usize,
    pub node: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub task: Task,
    pub class_count: usize,
    pub feature_count: usize,
    pub graphs: Vec<Graph>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        task: Task,
        class_count: usize,
        feature_count: usize,
        graphs: Vec<Graph>,
    ) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            task,
            class_count,
            feature_count,
            graphs,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 {
            return Err(Error::Argument("class_count must be positive".into()));
        }
        for (gi, g) in self.graphs.iter().enumerate() {
            for f in g.node_features.iter().flatten() {
                if *f as usize >= self.feature_count {
                    return Err(Error::Argument(format!(
                        "graph {gi}: feature index {f} >= feature_count {}",
                        self.feature_count
                    )));
                }
            }
            match self.task {
                Task::NodeClassification => {
                    let labels = g.node_labels.as_ref().ok_or_else(|| {
                        Error::Argument(format!("graph {gi}: node task without node labels"))
                    })?;
                    if let Some(l) = labels.iter().flatten().find(|&&l| l >= self.class_count) {
                        return Err(Error::Argument(format!("graph {gi}: label {l} out of range")));
                    }
                }
                Task::GraphClassification => match g.graph_label {
                    Some(l) if l < self.class_count => {}
                    Some(l) => {
                        return Err(Error::Argument(format!("graph {gi}: label {l} out of range")))
                    }
                    None => {
                        return Err(Error::Argument(format!(
                            "graph {gi}: graph task without graph label"
                        )))
                    }
                },
            }
        }
        Ok(())
    }

    /// Width of the model input: one column per categorical feature, or a single
    /// constant column for unattributed datasets.
    pub fn input_width(&self) -> usize {
        self.feature_count.max(1)
    }

    /// All labeled units in canonical order.
    pub fn units(&self) -> Vec<Unit> {
        match self.task {
            Task::GraphClassification => (0..self.graphs.len())
                .map(|graph| Unit { graph, node: None })
                .collect(),
            Task::NodeClassification => self
                .graphs
                .iter()
                .enumerate()
                .flat_map(|(graph, g)| {
                    g.node_labels
                        .iter()
                        .flatten()
                        .enumerate()
                        .filter(|(_, l)| l.is_some())
                        .map(move |(node, _)| Unit {
                            graph,
                            node: Some(node),
                        })
                })
                .collect(),
        }
    }

    pub fn label(&self, unit: Unit) -> usize {
        let g = &self.graphs[unit.graph];
        match unit.node {
            Some(v) => g.node_labels.as_ref().and_then(|l| l[v]).expect("unlabeled unit"),
            None => g.graph_label.expect("unlabeled unit"),
        }
    }

    pub fn total_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::node_count).sum()
    }

    /// Edge count as usually tabulated: undirected edges count twice.
    pub fn tabulated_edges(&self) -> usize {
        self.graphs
            .iter()
            .map(|g| if g.directed { g.edges.len() } else { 2 * g.edges.len() })
            .sum()
    }
}

/// Index sets into [`Dataset::units`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified 10-fold split. Each unit lands in exactly one test set; the validation
/// set is 10% of the remaining units.
pub fn make_folds(dataset: &Dataset, seed: u64) -> Result<Vec<FoldSplit>> {
    let units = dataset.units();
    if units.len() < FOLD_COUNT {
        return Err(Error::Config(format!(
            "{} labeled units, need at least {FOLD_COUNT} for {FOLD_COUNT}-fold cross validation",
            units.len()
        )));
    }
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.shuffle(&mut rng::substream(seed, "split", 0));
    // stable sort keeps the shuffled order within each class
    order.sort_by_key(|&i| dataset.label(units[i]));

    let mut assignment = vec![0usize; units.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % FOLD_COUNT;
    }

    (0..FOLD_COUNT)
        .map(|k| {
            let test: Vec<usize> = (0..units.len()).filter(|&i| assignment[i] == k).collect();
            let rest: Vec<usize> = (0..units.len()).filter(|&i| assignment[i] != k).collect();
            let (mut validation, mut train) =
                split_off_fraction(&rest, VALIDATION_FRACTION, seed, "validation", k as u64);
            validation.sort_unstable();
            train.sort_unstable();
            Ok(FoldSplit {
                fold_index: k,
                train,
                validation,
                test,
            })
        })
        .collect()
}

/// Shuffles `ids` deterministically and returns `(held_out, remainder)` where
/// `held_out` has `round(fraction * len)` elements (at least one when `ids` has two or more).
pub fn split_off_fraction(
    ids: &[usize],
    fraction: f64,
    seed: u64,
    stream: &str,
    index: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut rng::substream(seed, stream, index));
    let mut k = (fraction * ids.len() as f64).round() as usize;
    if ids.len() >= 2 {
        k = k.clamp(1, ids.len() - 1);
    }
    let rest = shuffled.split_off(k.min(shuffled.len()));
    (shuffled, rest)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    fn path3() -> Graph {
        Graph::new(3, vec![(0, 1), (1, 2)], false).unwrap()
    }

    #[test]
    fn path_graph_neighbors() {
        let g = path3();
        assert_eq!(g.neighbors(1).unwrap(), &[0, 2]);
        assert_eq!(g.neighbors(0).unwrap(), &[1]);
        assert!(matches!(g.neighbors(3), Err(Error::Argument(_))));
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let g = Graph::new(4, vec![(0, 1)], false).unwrap();
        assert!(g.neighbors(3).unwrap().is_empty());
    }

    #[test]
    fn directed_neighbors_are_senders() {
        let g = Graph::new(3, vec![(0, 2), (1, 2), (2, 0)], true).unwrap();
        assert_eq!(g.neighbors(2).unwrap(), &[0, 1]);
        assert_eq!(g.neighbors(0).unwrap(), &[2]);
        assert!(g.neighbors(1).unwrap().is_empty());
    }

    #[test]
    fn rejects_out_of_range_edges() {
        assert!(Graph::new(2, vec![(0, 2)], false).is_err());
    }

    fn graph_dataset(n: usize) -> Dataset {
        let graphs = (0..n)
            .map(|i| path3().with_graph_label(i % 2))
            .collect();
        Dataset::new("toy", Task::GraphClassification, 2, 0, graphs).unwrap()
    }

    #[test]
    fn thousand_units_give_hundred_per_test_fold() {
        let folds = make_folds(&graph_dataset(1000), 3).unwrap();
        assert_eq!(folds.len(), 10);
        for f in &folds {
            assert_eq!(f.test.len(), 100);
            assert_eq!(f.validation.len(), 90);
            assert_eq!(f.train.len(), 810);
        }
    }

    #[test]
    fn too_few_units_is_a_config_error() {
        assert!(matches!(make_folds(&graph_dataset(9), 0), Err(Error::Config(_))));
    }

    #[test]
    fn folds_are_deterministic() {
        let ds = graph_dataset(57);
        assert_eq!(make_folds(&ds, 11).unwrap(), make_folds(&ds, 11).unwrap());
        assert_ne!(make_folds(&ds, 11).unwrap(), make_folds(&ds, 12).unwrap());
    }

    #[test]
    fn graph_json_round_trip() {
        let g = Graph::new(4, vec![(0, 1), (2, 3)], true)
            .unwrap()
            .with_features(vec![vec![0], vec![1], vec![], vec![0, 1]])
            .unwrap()
            .with_node_labels(vec![Some(0), None, Some(1), Some(0)])
            .unwrap();
        let s = serde_json::to_string(&g).unwrap();
        let back: Graph = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (1usize..20, any::<bool>()).prop_flat_map(|(n, directed)| {
            proptest::collection::vec((0..n, 0..n), 0..40).prop_map(move |mut edges| {
                edges.sort_unstable();
                edges.dedup();
                if !directed {
                    edges.retain(|&(u, v)| u < v);
                }
                Graph::new(n, edges, directed).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn adjacency_symmetric_iff_undirected(g in arb_graph()) {
            let mut symmetric = true;
            for v in 0..g.node_count() {
                for &u in g.senders(v) {
                    if !g.senders(u).contains(&v) {
                        symmetric = false;
                    }
                }
            }
            if !g.is_directed() {
                prop_assert!(symmetric);
            }
            let has_asymmetric_edge = g.edges().iter().any(|&(u, v)| !g.edges().contains(&(v, u)));
            if g.is_directed() && has_asymmetric_edge {
                prop_assert!(!symmetric);
            }
        }

        #[test]
        fn folds_partition_units(n in 10usize..200, seed in any::<u64>()) {
            let ds = graph_dataset(n);
            let folds = make_folds(&ds, seed).unwrap();
            let mut seen = vec![0usize; n];
            for f in &folds {
                let t: HashSet<_> = f.train.iter().collect();
                let v: HashSet<_> = f.validation.iter().collect();
                let s: HashSet<_> = f.test.iter().collect();
                prop_assert!(t.is_disjoint(&v) && t.is_disjoint(&s) && v.is_disjoint(&s));
                prop_assert_eq!(t.len() + v.len() + s.len(), n);
                for &i in &f.test { seen[i] += 1; }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }
}
