//! Path-dependent TreeShap with vector-valued leaves.
//!
//! A leaf's score for target `t` is the fraction of target-`t` samples in its fit
//! histogram; node covers are histogram totals.

use crate::distill::{DecisionTree, Feature, NodeKind, Row};
use crate::error::{Error, Result};

/// Shapley values `phi[f * outputs + t]` and the expected score `base[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Attribution {
    pub outputs: usize,
    pub base: Vec<f64>,
    pub phi: Vec<f64>,
}

impl Attribution {
    #[inline]
    pub fn get(&self, feature: usize, target: usize) -> f64 {
        self.phi[feature * self.outputs + target]
    }

    /// Attributions of every feature for `target`.
    pub fn for_target(&self, target: usize) -> Vec<f64> {
        (0..self.phi.len() / self.outputs).map(|f| self.get(f, target)).collect()
    }
}

/// Score vector of a node from its histogram.
pub fn node_scores(tree: &DecisionTree, node: usize) -> Vec<f64> {
    let h = &tree.nodes[node].histogram;
    let total: usize = h.iter().sum();
    h.iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect()
}

/// Scores of the leaf `row` reaches.
pub fn tree_output(tree: &DecisionTree, row: &impl Row) -> Vec<f64> {
    node_scores(tree, tree.leaf_for(row))
}

fn cover(tree: &DecisionTree, node: usize) -> f64 {
    tree.nodes[node].samples() as f64
}

/// Cover-weighted mean leaf score: the model output with no feature known.
pub fn expected_value(tree: &DecisionTree) -> Vec<f64> {
    fn go(tree: &DecisionTree, n: usize) -> Vec<f64> {
        match tree.nodes[n].kind {
            NodeKind::Leaf { .. } => node_scores(tree, n),
            NodeKind::Split { if_true, if_false, .. } => {
                let (a, b) = (go(tree, if_true), go(tree, if_false));
                let (wa, wb, w) = (cover(tree, if_true), cover(tree, if_false), cover(tree, n));
                a.iter().zip(&b).map(|(x, y)| (wa * x + wb * y) / w).collect()
            }
        }
    }
    go(tree, 0)
}

#[derive(Clone, Copy, Debug)]
struct PathElement {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElement>, zero: f64, one: f64, feature: Option<usize>) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero,
        one,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    });
    for i in (0..depth).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / (depth + 1) as f64;
        path[i].weight = zero * path[i].weight * (depth - i) as f64 / (depth + 1) as f64;
    }
}

fn unwind(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let PathElement { zero, one, .. } = path[index];
    let mut next = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next * (depth + 1) as f64 / ((i + 1) as f64 * one);
            next = tmp - path[i].weight * zero * (depth - i) as f64 / (depth + 1) as f64;
        } else {
            path[i].weight = path[i].weight * (depth + 1) as f64 / (zero * (depth - i) as f64);
        }
    }
    // weights stay in place; only the feature data shifts down
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
    path.pop();
}

/// Total permutation weight of the path with element `index` removed.
fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let PathElement { zero, one, .. } = path[index];
    let mut next = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next * (depth + 1) as f64 / ((i + 1) as f64 * one);
            total += tmp;
            next = path[i].weight - tmp * zero * ((depth - i) as f64 / (depth + 1) as f64);
        } else if zero != 0.0 {
            total += (path[i].weight / zero) / ((depth - i) as f64 / (depth + 1) as f64);
        }
    }
    total
}

struct Walk<'a, R: Row> {
    tree: &'a DecisionTree,
    row: &'a R,
    phi: Vec<f64>,
}

impl<R: Row> Walk<'_, R> {
    fn recurse(&mut self, node: usize, parent: &[PathElement], zero: f64, one: f64, feature: Option<usize>) {
        let mut path = parent.to_vec();
        extend(&mut path, zero, one, feature);
        let t = self.tree;
        match t.nodes[node].kind {
            NodeKind::Leaf { .. } => {
                let scores = node_scores(t, node);
                let k = t.output_count;
                for i in 1..path.len() {
                    let w = unwound_sum(&path, i);
                    let el = path[i];
                    let f = el.feature.expect("only the root element has no feature");
                    let scale = w * (el.one - el.zero);
                    for (j, s) in scores.iter().enumerate() {
                        self.phi[f * k + j] += scale * s;
                    }
                }
            }
            NodeKind::Split {
                feature: split,
                threshold,
                if_true,
                if_false,
            } => {
                let goes_true = self.row.value(&t.layout[split]) > threshold;
                let (hot, cold) = if goes_true { (if_true, if_false) } else { (if_false, if_true) };
                let w = cover(t, node);
                let (hot_zero, cold_zero) = (cover(t, hot) / w, cover(t, cold) / w);
                let (mut in_zero, mut in_one) = (1.0, 1.0);
                // undo an earlier split on the same feature so it is redone here
                if let Some(k) = path.iter().position(|e| e.feature == Some(split)) {
                    in_zero = path[k].zero;
                    in_one = path[k].one;
                    unwind(&mut path, k);
                }
                self.recurse(hot, &path, hot_zero * in_zero, in_one, Some(split));
                self.recurse(cold, &path, cold_zero * in_zero, 0.0, Some(split));
            }
        }
    }
}

/// Exact Shapley values of every feature for every output under the tree-conditional
/// value function.
pub fn tree_shap(tree: &DecisionTree, row: &impl Row) -> Attribution {
    let k = tree.output_count;
    let mut walk = Walk {
        tree,
        row,
        phi: vec![0.0; tree.layout.len() * k],
    };
    walk.recurse(0, &[], 1.0, 1.0, None);
    Attribution {
        outputs: k,
        base: expected_value(tree),
        phi: walk.phi,
    }
}

/// A sample given as one value per layout entry.
pub struct DenseRow<'a> {
    layout: &'a [Feature],
    values: &'a [u32],
}

impl<'a> DenseRow<'a> {
    pub fn new(layout: &'a [Feature], values: &'a [u32]) -> Result<Self> {
        if layout.len() != values.len() {
            return Err(Error::Shape(format!(
                "sample has {} values, tree expects {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(DenseRow { layout, values })
    }
}

impl Row for DenseRow<'_> {
    fn value(&self, feature: &Feature) -> u32 {
        let i = self
            .layout
            .iter()
            .position(|f| f == feature)
            .expect("feature in layout");
        self.values[i]
    }
}

/// [`tree_shap`] on a dense sample, checking its arity.
pub fn tree_shap_dense(tree: &DecisionTree, values: &[u32]) -> Result<Attribution> {
    Ok(tree_shap(tree, &DenseRow::new(&tree.layout, values)?))
}
