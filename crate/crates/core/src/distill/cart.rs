//! CART classification trees with Gini impurity and best-first growth.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input feature of a tree. Layer indices name the state layer the feature reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feature {
    /// Raw categorical input column.
    Input { index: usize },
    /// 1 iff the node is in `state` at `layer`.
    State { layer: usize, state: usize },
    /// Neighbor count (layer trees) or pooled node count (graph decoder) of `state`.
    Count { layer: usize, state: usize },
    /// 1 iff `Count(state) > Count(other)` at `layer`.
    Delta { layer: usize, state: usize, other: usize },
}

impl Feature {
    pub fn is_binary(&self) -> bool {
        !matches!(self, Feature::Count { .. })
    }

    pub fn layer(&self) -> Option<usize> {
        match *self {
            Feature::Input { .. } => None,
            Feature::State { layer, .. } | Feature::Count { layer, .. } | Feature::Delta { layer, .. } => Some(layer),
        }
    }

    /// States the feature inspects.
    pub fn states(&self) -> Vec<usize> {
        match *self {
            Feature::Input { .. } => Vec::new(),
            Feature::State { state, .. } | Feature::Count { state, .. } => vec![state],
            Feature::Delta { state, other, .. } => vec![state, other],
        }
    }
}

/// Lazy access to one sample's feature values.
pub trait Row {
    fn value(&self, feature: &Feature) -> u32;
}

/// Dense samples for fitting: `rows x layout.len()` values and one target per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub layout: Vec<Feature>,
    pub values: Vec<u32>,
    pub targets: Vec<usize>,
    pub output_count: usize,
}

impl Table {
    pub fn new(layout: Vec<Feature>, output_count: usize) -> Self {
        Table {
            layout,
            values: Vec::new(),
            targets: Vec::new(),
            output_count,
        }
    }

    pub fn width(&self) -> usize {
        self.layout.len()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn push_row(&mut self, row: &impl Row, target: usize) {
        for f in &self.layout {
            self.values.push(row.value(f));
        }
        self.targets.push(target);
    }

    #[inline]
    pub fn get(&self, r: usize, f: usize) -> u32 {
        self.values[r * self.layout.len() + f]
    }

    pub fn row(&self, r: usize) -> TableRow<'_> {
        TableRow { table: self, r }
    }
}

pub struct TableRow<'a> {
    table: &'a Table,
    r: usize,
}

impl Row for TableRow<'_> {
    fn value(&self, feature: &Feature) -> u32 {
        let f = self
            .table
            .layout
            .iter()
            .position(|x| x == feature)
            .expect("feature in table layout");
        self.table.get(self.r, f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    Leaf {
        output: usize,
    },
    /// Samples with `value(feature) > threshold` go to `if_true`.
    Split {
        feature: usize,
        threshold: u32,
        if_true: usize,
        if_false: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub kind: NodeKind,
    /// Fit-set target counts of the samples reaching this node.
    pub histogram: Vec<usize>,
}

impl TreeNode {
    pub fn samples(&self) -> usize {
        self.histogram.iter().sum()
    }

    pub fn majority(&self) -> usize {
        majority(&self.histogram)
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

/// Lowest index among the most frequent entries.
pub fn majority(histogram: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in histogram.iter().enumerate() {
        if c > histogram[best] {
            best = i;
        }
    }
    best
}

/// Arena of nodes; node 0 is the root. Pruned-away nodes stay in the arena but become
/// unreachable, so node ids are stable across pruning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub layout: Vec<Feature>,
    pub output_count: usize,
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    pub fn leaf(layout: Vec<Feature>, output_count: usize, output: usize, histogram: Vec<usize>) -> Self {
        DecisionTree {
            layout,
            output_count,
            nodes: vec![TreeNode {
                kind: NodeKind::Leaf { output },
                histogram,
            }],
        }
    }

    #[inline]
    fn step(&self, node: usize, row: &impl Row) -> Option<usize> {
        match self.nodes[node].kind {
            NodeKind::Leaf { .. } => None,
            NodeKind::Split {
                feature,
                threshold,
                if_true,
                if_false,
            } => Some(if row.value(&self.layout[feature]) > threshold {
                if_true
            } else {
                if_false
            }),
        }
    }

    pub fn leaf_for(&self, row: &impl Row) -> usize {
        let mut node = 0;
        while let Some(next) = self.step(node, row) {
            node = next;
        }
        node
    }

    pub fn predict(&self, row: &impl Row) -> usize {
        match self.nodes[self.leaf_for(row)].kind {
            NodeKind::Leaf { output } => output,
            NodeKind::Split { .. } => unreachable!("walk ends at a leaf"),
        }
    }

    /// Node ids from the root to the reached leaf.
    pub fn path(&self, row: &impl Row) -> Vec<usize> {
        let mut node = 0;
        let mut path = vec![0];
        while let Some(next) = self.step(node, row) {
            node = next;
            path.push(node);
        }
        path
    }

    /// Ids of nodes reachable from the root, in depth-first preorder.
    pub fn reachable(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(n) = stack.pop() {
            out.push(n);
            if let NodeKind::Split { if_true, if_false, .. } = self.nodes[n].kind {
                stack.push(if_false);
                stack.push(if_true);
            }
        }
        out
    }

    pub fn decision_nodes(&self) -> Vec<usize> {
        self.reachable()
            .into_iter()
            .filter(|&n| !self.nodes[n].is_leaf())
            .collect()
    }

    pub fn decision_count(&self) -> usize {
        self.decision_nodes().len()
    }

    pub fn leaf_count(&self) -> usize {
        self.decision_count() + 1
    }

    /// Replaces the subtree at `node` by a majority leaf of its histogram.
    pub fn collapse(&mut self, node: usize) {
        let output = self.nodes[node].majority();
        self.nodes[node].kind = NodeKind::Leaf { output };
    }

    /// Outputs of reachable leaves.
    pub fn emitted(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .reachable()
            .into_iter()
            .filter_map(|n| match self.nodes[n].kind {
                NodeKind::Leaf { output } => Some(output),
                NodeKind::Split { .. } => None,
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Features tested by reachable decision nodes.
    pub fn tested(&self) -> Vec<Feature> {
        let mut out: Vec<Feature> = self
            .decision_nodes()
            .into_iter()
            .map(|n| match self.nodes[n].kind {
                NodeKind::Split { feature, .. } => self.layout[feature],
                NodeKind::Leaf { .. } => unreachable!(),
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Checks every root-to-leaf path for contradictory tests: two different true state
    /// indicators of one layer, or an empty interval for a count or input feature.
    pub fn check_paths(&self) -> Result<()> {
        // per-feature closed interval of values still possible on the path
        fn walk(tree: &DecisionTree, node: usize, bounds: &mut Vec<(u32, u32)>) -> Result<()> {
            let NodeKind::Split {
                feature,
                threshold,
                if_true,
                if_false,
            } = tree.nodes[node].kind
            else {
                return Ok(());
            };
            let saved = bounds[feature];
            // true branch: value > threshold
            bounds[feature].0 = saved.0.max(threshold.saturating_add(1));
            check_bounds(tree, bounds, node)?;
            walk(tree, if_true, bounds)?;
            bounds[feature] = saved;
            bounds[feature].1 = saved.1.min(threshold);
            check_bounds(tree, bounds, node)?;
            walk(tree, if_false, bounds)?;
            bounds[feature] = saved;
            Ok(())
        }
        fn check_bounds(tree: &DecisionTree, bounds: &[(u32, u32)], node: usize) -> Result<()> {
            if bounds.iter().any(|&(lo, hi)| lo > hi) {
                return Err(Error::Argument(format!("empty value interval below node {node}")));
            }
            for (i, fi) in tree.layout.iter().enumerate() {
                for (j, fj) in tree.layout.iter().enumerate().skip(i + 1) {
                    if let (Feature::State { layer: a, state: s }, Feature::State { layer: b, state: t }) = (fi, fj) {
                        if a == b && s != t && bounds[i].0 >= 1 && bounds[j].0 >= 1 {
                            return Err(Error::Argument(format!(
                                "path below node {node} requires two states at layer {a}"
                            )));
                        }
                    }
                }
            }
            Ok(())
        }
        let mut bounds: Vec<(u32, u32)> = self
            .layout
            .iter()
            .map(|f| (0, if f.is_binary() { 1 } else { u32::MAX }))
            .collect();
        walk(self, 0, &mut bounds)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Feature::Input { index } => write!(f, "input[{index}]"),
            Feature::State { layer, state } => write!(f, "state@{layer} = {state}"),
            Feature::Count { layer, state } => write!(f, "count@{layer}({state})"),
            Feature::Delta { layer, state, other } => write!(f, "count@{layer}({state}) > count@{layer}({other})"),
        }
    }
}

impl DecisionTree {
    /// Text of the test at a decision node, true branch semantics.
    pub fn describe_split(&self, node: usize) -> Option<String> {
        match self.nodes[node].kind {
            NodeKind::Leaf { .. } => None,
            NodeKind::Split { feature, threshold, .. } => {
                let f = &self.layout[feature];
                Some(if f.is_binary() {
                    f.to_string()
                } else {
                    format!("{f} > {threshold}")
                })
            }
        }
    }
}

/// Indented rendering of the reachable tree, true branch first.
impl fmt::Display for DecisionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(t: &DecisionTree, n: usize, depth: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            let pad = "  ".repeat(depth);
            match t.nodes[n].kind {
                NodeKind::Leaf { output } => writeln!(f, "{pad}-> {output}  {:?}", t.nodes[n].histogram),
                NodeKind::Split { if_true, if_false, .. } => {
                    writeln!(f, "{pad}if {}:", t.describe_split(n).expect("split"))?;
                    go(t, if_true, depth + 1, f)?;
                    writeln!(f, "{pad}else:")?;
                    go(t, if_false, depth + 1, f)
                }
            }
        }
        go(self, 0, 0, f)
    }
}

fn weighted_gini_term(counts: &[usize], total: usize) -> f64 {
    // sum(c^2) / n; the impurity decrease of a split is left + right - parent of this
    if total == 0 {
        return 0.0;
    }
    counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / total as f64
}

fn histogram(table: &Table, samples: &[usize]) -> Vec<usize> {
    let mut h = vec![0; table.output_count];
    for &s in samples {
        h[table.targets[s]] += 1;
    }
    h
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: u32,
}

const GAIN_EPS: f64 = 1e-12;

/// Best split of `samples`: largest Gini decrease, ties to the lowest feature index and
/// then the lowest threshold.
fn best_split(table: &Table, samples: &[usize], parent: &[usize]) -> Option<Candidate> {
    let n = samples.len();
    let parent_term = weighted_gini_term(parent, n);
    let k = table.output_count;
    let mut best: Option<Candidate> = None;
    let mut pairs: Vec<(u32, usize)> = Vec::with_capacity(n);
    let mut left = vec![0usize; k];
    for f in 0..table.width() {
        pairs.clear();
        pairs.extend(samples.iter().map(|&s| (table.get(s, f), table.targets[s])));
        pairs.sort_unstable();
        if pairs[0].0 == pairs[n - 1].0 {
            continue;
        }
        left.iter_mut().for_each(|c| *c = 0);
        let mut right = parent.to_vec();
        let mut i = 0;
        while i < n {
            let v = pairs[i].0;
            while i < n && pairs[i].0 == v {
                left[pairs[i].1] += 1;
                right[pairs[i].1] -= 1;
                i += 1;
            }
            if i == n {
                break;
            }
            let next = pairs[i].0;
            let gain = weighted_gini_term(&left, i) + weighted_gini_term(&right, n - i) - parent_term;
            let threshold = if table.layout[f].is_binary() {
                0
            } else {
                // floor of the midpoint between adjacent observed values
                v + (next - v) / 2
            };
            if gain > GAIN_EPS && best.is_none_or(|b| gain > b.gain + GAIN_EPS) {
                best = Some(Candidate {
                    gain,
                    feature: f,
                    threshold,
                });
            }
        }
    }
    best
}

/// Fits a tree with at most `leaf_cap` leaves, always expanding the leaf whose best split
/// decreases impurity the most (ties to the lowest node id).
pub fn fit_tree(table: &Table, leaf_cap: usize) -> Result<DecisionTree> {
    if table.is_empty() {
        return Err(Error::Argument("cannot fit a tree to an empty table".into()));
    }
    if leaf_cap == 0 {
        return Err(Error::Argument("leaf cap must be positive".into()));
    }
    let all: Vec<usize> = (0..table.len()).collect();
    let root_hist = histogram(table, &all);
    let mut tree = DecisionTree::leaf(table.layout.clone(), table.output_count, majority(&root_hist), root_hist);
    // open leaves: (node id, samples, best split)
    let mut open: Vec<(usize, Vec<usize>, Option<Candidate>)> = Vec::new();
    let c = best_split(table, &all, &tree.nodes[0].histogram);
    open.push((0, all, c));
    let mut leaves = 1;
    while leaves < leaf_cap {
        let pick = open
            .iter()
            .enumerate()
            .filter_map(|(i, (id, _, c))| c.map(|c| (i, *id, c.gain)))
            .fold(None, |best: Option<(usize, usize, f64)>, cur| match best {
                Some(b) if b.2 > cur.2 + GAIN_EPS || ((b.2 - cur.2).abs() <= GAIN_EPS && b.1 < cur.1) => Some(b),
                _ => Some(cur),
            });
        let Some((i, node, _)) = pick else { break };
        let (_, samples, cand) = open.swap_remove(i);
        let cand = cand.expect("picked candidates have splits");
        let (t, f): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&s| table.get(s, cand.feature) > cand.threshold);
        let mut child = |samples: Vec<usize>, tree: &mut DecisionTree| {
            let h = histogram(table, &samples);
            let id = tree.nodes.len();
            tree.nodes.push(TreeNode {
                kind: NodeKind::Leaf { output: majority(&h) },
                histogram: h,
            });
            let c = best_split(table, &samples, &tree.nodes[id].histogram);
            open.push((id, samples, c));
            id
        };
        let if_true = child(t, &mut tree);
        let if_false = child(f, &mut tree);
        tree.nodes[node].kind = NodeKind::Split {
            feature: cand.feature,
            threshold: cand.threshold,
            if_true,
            if_false,
        };
        leaves += 1;
    }
    Ok(tree)
}
