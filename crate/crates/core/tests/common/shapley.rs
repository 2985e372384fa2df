//! Exhaustive Shapley oracle under the tree-conditional value function, and a random
//! tree generator for exercising it.

use dtgnn::distill::{DecisionTree, Feature, NodeKind, TreeNode};
use dtgnn::rng::Rng;
use rand::Rng as _;

/// Expected leaf score for `target` when only the features in `known` are observed.
fn conditional(tree: &DecisionTree, node: usize, x: &[u32], known: u32, target: usize) -> f64 {
    let n = &tree.nodes[node];
    match n.kind {
        NodeKind::Leaf { .. } => n.histogram[target] as f64 / n.samples() as f64,
        NodeKind::Split {
            feature,
            threshold,
            if_true,
            if_false,
        } => {
            if known & (1 << feature) != 0 {
                let next = if x[feature] > threshold { if_true } else { if_false };
                conditional(tree, next, x, known, target)
            } else {
                let wt = tree.nodes[if_true].samples() as f64;
                let wf = tree.nodes[if_false].samples() as f64;
                (wt * conditional(tree, if_true, x, known, target) + wf * conditional(tree, if_false, x, known, target))
                    / n.samples() as f64
            }
        }
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `phi[f][t]` by enumerating every feature subset, and the empty-set value per target.
pub fn brute_force(tree: &DecisionTree, x: &[u32]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let m = tree.layout.len();
    assert!(m <= 16, "exhaustive oracle is exponential");
    let k = tree.output_count;
    let base: Vec<f64> = (0..k).map(|t| conditional(tree, 0, x, 0, t)).collect();
    let mut phi = vec![vec![0.0; k]; m];
    for (i, row) in phi.iter_mut().enumerate() {
        for subset in 0u32..(1 << m) {
            if subset & (1 << i) != 0 {
                continue;
            }
            let size = subset.count_ones() as usize;
            let w = factorial(size) * factorial(m - size - 1) / factorial(m);
            for (t, p) in row.iter_mut().enumerate() {
                let with = conditional(tree, 0, x, subset | (1 << i), t);
                let without = conditional(tree, 0, x, subset, t);
                *p += w * (with - without);
            }
        }
    }
    (phi, base)
}

/// Random tree over at most `max_features` mixed-kind features with consistent
/// histograms (every internal histogram is the sum of its children's).
pub fn random_tree(rng: &mut Rng, max_features: usize, outputs: usize) -> DecisionTree {
    let m = rng.random_range(1..=max_features);
    let layout: Vec<Feature> = (0..m)
        .map(|i| match rng.random_range(0..3) {
            0 => Feature::State { layer: 0, state: i },
            1 => Feature::Count { layer: 0, state: i },
            _ => Feature::Delta { layer: 0, state: i, other: i + 1 },
        })
        .collect();
    let mut tree = DecisionTree {
        layout,
        output_count: outputs,
        nodes: Vec::new(),
    };
    let max_depth = rng.random_range(0..=6);
    grow(&mut tree, rng, 0, max_depth);
    tree
}

fn grow(tree: &mut DecisionTree, rng: &mut Rng, depth: usize, max_depth: usize) -> usize {
    let id = tree.nodes.len();
    tree.nodes.push(TreeNode {
        kind: NodeKind::Leaf { output: 0 },
        histogram: vec![0; tree.output_count],
    });
    if depth < max_depth && rng.random_bool(0.75) {
        let feature = rng.random_range(0..tree.layout.len());
        let threshold = if tree.layout[feature].is_binary() { 0 } else { rng.random_range(0..4) };
        let if_true = grow(tree, rng, depth + 1, max_depth);
        let if_false = grow(tree, rng, depth + 1, max_depth);
        let histogram: Vec<usize> = (0..tree.output_count)
            .map(|t| tree.nodes[if_true].histogram[t] + tree.nodes[if_false].histogram[t])
            .collect();
        tree.nodes[id] = TreeNode {
            kind: NodeKind::Split {
                feature,
                threshold,
                if_true,
                if_false,
            },
            histogram,
        };
    } else {
        let mut h: Vec<usize> = (0..tree.output_count).map(|_| rng.random_range(0..6)).collect();
        if h.iter().all(|&c| c == 0) {
            h[0] = 1;
        }
        let output = dtgnn::distill::majority(&h);
        tree.nodes[id] = TreeNode {
            kind: NodeKind::Leaf { output },
            histogram: h,
        };
    }
    id
}

/// A sample with binary values for binary features and small counts otherwise.
pub fn random_sample(rng: &mut Rng, tree: &DecisionTree) -> Vec<u32> {
    tree.layout
        .iter()
        .map(|f| if f.is_binary() { rng.random_range(0..2) } else { rng.random_range(0..6) })
        .collect()
}
