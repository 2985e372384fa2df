//! Node-importance explanations for DT+GNN predictions.
//!
//! TreeShap attributes each tree decision to its input features. Those attributions
//! weight the explanations of the previous layer: a node's own explanation for state
//! features (σ), the mean explanation of the neighbors in a state for count features
//! (μ), and the difference of two neighbor groups for delta features (δ). The graph
//! decoder treats every node of the graph as a neighbor.

pub mod propagate;
pub mod treeshap;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use propagate::ExplanationMatrix;
pub use treeshap::{expected_value, node_scores, tree_output, tree_shap, tree_shap_dense, Attribution, DenseRow};

use crate::distill::{pooled_counts, DecisionTree, DtModel, Feature, LayerRow, NodeStatesRow, PooledRow};
use crate::error::{Error, Result};
use crate::gnn::{aggregate_messages, Batch};
use crate::graph::{Csr, Dataset, Task};
use propagate::{combine, delta, group_by_state, group_sums, mu, sigma};

/// TreeShap attributions of one layer tree for one node, split by feature block.
/// Each matrix is row-major over targets: `state[t * S + s]`, `message[t * S + s]`,
/// `delta[t * (S² − S) + delta_offset(s, s')]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeImportance {
    pub state: Vec<f64>,
    pub message: Vec<f64>,
    pub delta: Vec<f64>,
    pub base: Vec<f64>,
}

/// Splits a layer tree's attribution for one sample into `I_S`, `I_M` and `I_Δ` rows.
pub fn node_importance(tree: &DecisionTree, row: &LayerRow<'_>) -> NodeImportance {
    let a = tree_shap(tree, row);
    let s = row.counts.len();
    let d = s * s - s;
    let t = tree.output_count;
    let mut out = NodeImportance {
        state: vec![0.0; t * s],
        message: vec![0.0; t * s],
        delta: vec![0.0; t * d],
        base: a.base.clone(),
    };
    for target in 0..t {
        for f in 0..s {
            out.state[target * s + f] = a.get(f, target);
            out.message[target * s + f] = a.get(s + f, target);
        }
        for f in 0..d {
            out.delta[target * d + f] = a.get(2 * s + f, target);
        }
    }
    out
}

/// `e^l_(v,t)` for every target `t` from the importances of `v`, its layer-`(l-1)`
/// state, its senders and `e^(l-1)`.
pub fn explain_node(
    imp: &NodeImportance,
    state: usize,
    senders: &[usize],
    prev: &[usize],
    e_prev: &ExplanationMatrix,
    v: usize,
) -> Vec<f64> {
    let states = e_prev.states;
    let len = e_prev.len;
    let d = states * states - states;
    let targets = imp.state.len() / states;
    let groups = group_by_state(senders, prev, states);
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let sums = group_sums(&groups, e_prev);
    let mut data = Vec::with_capacity(targets * len);
    for t in 0..targets {
        let (mut sg, mut mm, mut dl) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        sigma(&imp.state[t * states..(t + 1) * states], state, e_prev, v, &mut sg);
        mu(&imp.message[t * states..(t + 1) * states], &sizes, &sums, &mut mm);
        delta(&imp.delta[t * d..(t + 1) * d], &sizes, &sums, &mut dl);
        data.extend(combine(&sg, &mm, &dl));
    }
    data
}

/// Explanations `e^l` for `nodes`, given `e^(l-1)` of those nodes and their senders.
/// `tree` is the layer-`l` tree and `prev` the layer-`(l-1)` states.
pub fn explain_layer(
    tree: &DecisionTree,
    adjacency: &Csr,
    prev: &[usize],
    e_prev: &ExplanationMatrix,
    nodes: &[usize],
) -> ExplanationMatrix {
    let messages = aggregate_messages(adjacency, prev, e_prev.states);
    let mut out = ExplanationMatrix::empty(e_prev.node_count(), e_prev.len, e_prev.states);
    for &v in nodes {
        let row = LayerRow {
            state: prev[v],
            counts: messages.row(v),
        };
        let imp = node_importance(tree, &row);
        out.set(v, explain_node(&imp, prev[v], adjacency.row(v), prev, e_prev, v));
    }
    out
}

/// Hop distance along sender edges from any source, up to `limit`.
fn distances(adjacency: &Csr, sources: &[usize], limit: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adjacency.rows()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if dist[s].is_none() {
            dist[s] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes have a distance");
        if du == limit {
            continue;
        }
        for &w in adjacency.row(u) {
            if dist[w].is_none() {
                dist[w] = Some(du + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// What a prediction is explained for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    Node { node: usize },
    Graph,
}

/// Importance of every node of a one-graph `batch` for `target` being classified as `class`.
/// `states` are the model's layer states on that batch.
pub fn explain_batch(dt: &DtModel, batch: &Batch, states: &[Vec<usize>], target: Target, class: usize) -> Result<Vec<f64>> {
    let cfg = &dt.config;
    if class >= cfg.class_count {
        return Err(Error::Argument(format!("class {class} out of range 0..{}", cfg.class_count)));
    }
    if batch.graphs.len() != 1 {
        return Err(Error::Argument("explanations need a batch of exactly one graph".into()));
    }
    let n = batch.node_count();
    let s = cfg.states;
    let layers = dt.layers.len();
    let sources: Vec<usize> = match (cfg.task, target) {
        (Task::NodeClassification, Target::Node { node }) if node < n => vec![node],
        (Task::NodeClassification, Target::Node { node }) => {
            return Err(Error::Argument(format!("node {node} out of range 0..{n}")))
        }
        (Task::GraphClassification, Target::Graph) => (0..n).collect(),
        _ => return Err(Error::Argument("target kind does not match the task".into())),
    };
    let dist = distances(&batch.adjacency, &sources, layers);
    let within = |k: usize| -> Vec<usize> { (0..n).filter(|&v| dist[v].is_some_and(|d| d <= k)).collect() };

    // per layer, what the decoder reads: the target's own vectors, or pooled group sums
    let mut own: Vec<Vec<Vec<f64>>> = Vec::with_capacity(layers + 1);
    let mut pooled: Vec<(Vec<usize>, Vec<Vec<f64>>)> = Vec::with_capacity(layers + 1);
    let mut keep = |e: &ExplanationMatrix, l: usize| match target {
        Target::Node { node } => own.push((0..s).map(|st| e.get(node, st).to_vec()).collect()),
        Target::Graph => {
            let groups = group_by_state(&(0..n).collect::<Vec<_>>(), &states[l], s);
            pooled.push((groups.iter().map(Vec::len).collect(), group_sums(&groups, e)));
        }
    };

    let mut e = ExplanationMatrix::base(n, s, &within(layers));
    keep(&e, 0);
    for l in 1..=layers {
        e = explain_layer(&dt.layers[l - 1], &batch.adjacency, &states[l - 1], &e, &within(layers - l));
        keep(&e, l);
    }

    let mut sg = vec![0.0; n];
    let mut mm = vec![0.0; n];
    let mut dl = vec![0.0; n];
    match target {
        Target::Node { node } => {
            let per_node: Vec<usize> = states.iter().map(|layer| layer[node]).collect();
            let a = tree_shap(&dt.decoder, &NodeStatesRow(&per_node));
            for (f, feature) in dt.decoder.layout.iter().enumerate() {
                let Feature::State { layer, state } = *feature else {
                    unreachable!("node decoders read state features")
                };
                let imp = a.get(f, class);
                if imp != 0.0 {
                    let c = imp * propagate::sign(per_node[layer], state);
                    for (o, x) in sg.iter_mut().zip(&own[layer][state]) {
                        *o += c * x;
                    }
                }
            }
        }
        Target::Graph => {
            let counts = pooled_counts(batch, states, s);
            let a = tree_shap(&dt.decoder, &PooledRow { counts: &counts, states: s });
            let d = s * s - s;
            for (l, (sizes, sums)) in pooled.iter().enumerate() {
                let count_imp: Vec<f64> = (0..s).map(|st| a.get(l * s + st, class)).collect();
                mu(&count_imp, sizes, sums, &mut mm);
            }
            let base = (layers + 1) * s;
            for (l, (sizes, sums)) in pooled.iter().enumerate() {
                let delta_imp: Vec<f64> = (0..d).map(|k| a.get(base + l * d + k, class)).collect();
                delta(&delta_imp, sizes, sums, &mut dl);
            }
        }
    }
    Ok(combine(&sg, &mm, &dl))
}

/// Importance of every node of graph `graph` for the model classifying `target` as `class`.
pub fn explain_prediction(dt: &DtModel, dataset: &Dataset, graph: usize, target: Target, class: usize) -> Result<Vec<f64>> {
    if graph >= dataset.graphs.len() {
        return Err(Error::Argument(format!("graph {graph} out of range")));
    }
    let batch = Batch::from_graphs(dataset, &[graph]);
    let trace = dt.forward(&batch, false);
    explain_batch(dt, &batch, &trace.states, target, class)
}

/// Indices of the `k` largest entries, largest first, ties to the lower index.
pub fn top_k(importance: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..importance.len()).collect();
    idx.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
