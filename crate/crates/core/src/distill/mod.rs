//! Distillation of a trained [`DiffModel`] into a model made only of decision trees.
//!
//! Every tree reads its sample through a [`Row`] accessor instead of a materialized
//! feature vector, so a prediction costs only the features on its path. Tables are
//! materialized once, for fitting.

mod cart;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use cart::{fit_tree, majority, DecisionTree, Feature, NodeKind, Row, Table, TableRow, TreeNode};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gnn::{aggregate_messages, Batch, DiffModel, MessageCounts, ModelConfig};
use crate::graph::{Dataset, Task, Unit};

/// Leaf cap used by the benchmarks.
pub const DEFAULT_LEAF_CAP: usize = 100;

/// Index of a `Delta { state, other }` feature within the delta block of one layer.
#[inline]
pub fn delta_offset(state: usize, other: usize, states: usize) -> usize {
    debug_assert!(state != other);
    state * (states - 1) + if other < state { other } else { other - 1 }
}

fn delta_features(layer: usize, states: usize) -> impl Iterator<Item = Feature> {
    (0..states).flat_map(move |state| {
        (0..states)
            .filter(move |&other| other != state)
            .map(move |other| Feature::Delta { layer, state, other })
    })
}

/// Feature layouts of the three block kinds.
pub mod layout {
    use super::*;

    pub fn encoder(input_width: usize) -> Vec<Feature> {
        (0..input_width).map(|index| Feature::Input { index }).collect()
    }

    /// `[State | Count | Delta]` over the states of layer `input_layer`.
    pub fn layer(input_layer: usize, states: usize) -> Vec<Feature> {
        let l = input_layer;
        (0..states)
            .map(|state| Feature::State { layer: l, state })
            .chain((0..states).map(|state| Feature::Count { layer: l, state }))
            .chain(delta_features(l, states))
            .collect()
    }

    /// Node tasks: state indicators of every layer. Graph tasks: pooled counts of every
    /// layer, then pooled-count deltas of every layer.
    pub fn decoder(task: Task, layers: usize, states: usize) -> Vec<Feature> {
        match task {
            Task::NodeClassification => (0..=layers)
                .flat_map(|layer| (0..states).map(move |state| Feature::State { layer, state }))
                .collect(),
            Task::GraphClassification => (0..=layers)
                .flat_map(|layer| (0..states).map(move |state| Feature::Count { layer, state }))
                .chain((0..=layers).flat_map(move |layer| delta_features(layer, states)))
                .collect(),
        }
    }
}

/// Encoder sample: one row of the categorical input matrix.
pub struct InputRow<'a>(pub &'a [f64]);

impl Row for InputRow<'_> {
    fn value(&self, f: &Feature) -> u32 {
        match *f {
            Feature::Input { index } => u32::from(self.0[index] > 0.5),
            _ => panic!("encoder rows only carry input features"),
        }
    }
}

/// Layer-tree sample: a node's current state and its neighbor state counts.
pub struct LayerRow<'a> {
    pub state: usize,
    pub counts: &'a [u32],
}

impl Row for LayerRow<'_> {
    fn value(&self, f: &Feature) -> u32 {
        match *f {
            Feature::State { state, .. } => u32::from(self.state == state),
            Feature::Count { state, .. } => self.counts[state],
            Feature::Delta { state, other, .. } => u32::from(self.counts[state] > self.counts[other]),
            Feature::Input { .. } => panic!("layer rows carry no input features"),
        }
    }
}

/// Node-task decoder sample: the node's state at every layer.
pub struct NodeStatesRow<'a>(pub &'a [usize]);

impl Row for NodeStatesRow<'_> {
    fn value(&self, f: &Feature) -> u32 {
        match *f {
            Feature::State { layer, state } => u32::from(self.0[layer] == state),
            _ => panic!("node decoder rows only carry state features"),
        }
    }
}

/// Graph-task decoder sample: per-layer pooled state counts, row-major `(L+1) x S`.
pub struct PooledRow<'a> {
    pub counts: &'a [u32],
    pub states: usize,
}

impl Row for PooledRow<'_> {
    fn value(&self, f: &Feature) -> u32 {
        let c = |layer: usize, state: usize| self.counts[layer * self.states + state];
        match *f {
            Feature::Count { layer, state } => c(layer, state),
            Feature::Delta { layer, state, other } => u32::from(c(layer, state) > c(layer, other)),
            _ => panic!("graph decoder rows only carry count features"),
        }
    }
}

/// Pooled per-graph state counts for every layer, one `(L+1) x S` block per graph.
pub fn pooled_counts(batch: &Batch, states: &[Vec<usize>], state_count: usize) -> Vec<u32> {
    let width = states.len() * state_count;
    let mut out = vec![0u32; batch.graphs.len() * width];
    for g in 0..batch.graphs.len() {
        let block = &mut out[g * width..(g + 1) * width];
        for (l, layer) in states.iter().enumerate() {
            for &v in batch.pooling.row(g) {
                block[l * state_count + layer[v]] += 1;
            }
        }
    }
    out
}

/// Decoder sample rows of a batch: nodes for node tasks, graphs for graph tasks.
pub fn decoder_row_count(task: Task, batch: &Batch) -> usize {
    match task {
        Task::NodeClassification => batch.node_count(),
        Task::GraphClassification => batch.graphs.len(),
    }
}

/// Training tables of every block, encoder first and decoder last.
#[derive(Clone, Debug, PartialEq)]
pub struct Traces {
    pub tables: Vec<Table>,
}

/// Runs `model` in evaluation mode over the graphs touched by `units` and records each
/// block's input features and argmax output. Encoder and layer tables hold every node
/// of those graphs; the decoder table holds exactly the rows of `units`.
pub fn record_traces(model: &DiffModel, dataset: &Dataset, units: &[Unit]) -> Result<Traces> {
    let cfg = &model.config;
    cfg.check_dataset(dataset)?;
    let batch = Batch::from_units(dataset, units);
    let trace = model.forward_eval(&batch)?;
    let s = cfg.states;

    let mut tables = Vec::with_capacity(cfg.layers + 2);
    let mut enc = Table::new(layout::encoder(cfg.input_width), s);
    for v in 0..batch.node_count() {
        enc.push_row(&InputRow(batch.inputs.row(v)), trace.states[0][v]);
    }
    tables.push(enc);

    for l in 1..=cfg.layers {
        let prev = &trace.states[l - 1];
        let messages = aggregate_messages(&batch.adjacency, prev, s);
        let mut t = Table::new(layout::layer(l - 1, s), s);
        for v in 0..batch.node_count() {
            t.push_row(
                &LayerRow {
                    state: prev[v],
                    counts: messages.row(v),
                },
                trace.states[l][v],
            );
        }
        tables.push(t);
    }

    let predictions = trace.predictions();
    let mut dec = Table::new(layout::decoder(cfg.task, cfg.layers, s), cfg.class_count);
    match cfg.task {
        Task::NodeClassification => {
            let mut per_node = vec![0usize; cfg.layers + 1];
            for (v, t) in batch.targets.iter().enumerate() {
                if t.is_some() {
                    for (l, layer) in trace.states.iter().enumerate() {
                        per_node[l] = layer[v];
                    }
                    dec.push_row(&NodeStatesRow(&per_node), predictions[v]);
                }
            }
        }
        Task::GraphClassification => {
            let pooled = pooled_counts(&batch, &trace.states, s);
            let width = (cfg.layers + 1) * s;
            for g in 0..batch.graphs.len() {
                if batch.targets[g].is_some() {
                    let row = PooledRow {
                        counts: &pooled[g * width..(g + 1) * width],
                        states: s,
                    };
                    dec.push_row(&row, predictions[g]);
                }
            }
        }
    }
    tables.push(dec);
    Ok(Traces { tables })
}

/// States each block can emit and test, per layer boundary.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateUsage {
    /// `emitted[l]`: states produced at layer `l` by the encoder (l = 0) or layer tree `l`.
    pub emitted: Vec<BTreeSet<usize>>,
    /// `tested[l]`: states of layer `l` inspected by any split.
    pub tested: Vec<BTreeSet<usize>>,
}

/// The DT+GNN: message passing with every update replaced by a decision tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtModel {
    pub config: ModelConfig,
    pub encoder: DecisionTree,
    pub layers: Vec<DecisionTree>,
    pub decoder: DecisionTree,
}

/// Output of [`DtModel::forward`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtTrace {
    /// `states[l][v]` for layer boundaries `0..=L`.
    pub states: Vec<Vec<usize>>,
    /// One prediction per decoder row (node or graph).
    pub predictions: Vec<usize>,
    /// `paths[b][row]`: node ids visited in block `b` (encoder, layers, decoder).
    pub paths: Option<Vec<Vec<Vec<usize>>>>,
}

impl DtModel {
    pub fn block_count(&self) -> usize {
        self.layers.len() + 2
    }

    pub fn blocks(&self) -> impl Iterator<Item = &DecisionTree> {
        std::iter::once(&self.encoder)
            .chain(self.layers.iter())
            .chain(std::iter::once(&self.decoder))
    }

    pub fn block(&self, b: usize) -> &DecisionTree {
        match b {
            0 => &self.encoder,
            b if b <= self.layers.len() => &self.layers[b - 1],
            b if b == self.layers.len() + 1 => &self.decoder,
            _ => panic!("block {b} out of range"),
        }
    }

    pub fn block_mut(&mut self, b: usize) -> &mut DecisionTree {
        let l = self.layers.len();
        match b {
            0 => &mut self.encoder,
            b if b <= l => &mut self.layers[b - 1],
            b if b == l + 1 => &mut self.decoder,
            _ => panic!("block {b} out of range"),
        }
    }

    /// Total number of reachable decision nodes over all trees.
    pub fn size(&self) -> usize {
        self.blocks().map(|t| t.decision_count()).sum()
    }

    pub fn encode(&self, batch: &Batch) -> Vec<usize> {
        (0..batch.node_count())
            .map(|v| self.encoder.predict(&InputRow(batch.inputs.row(v))))
            .collect()
    }

    /// Next-layer states from layer `l`'s tree (1-based).
    pub fn step(&self, l: usize, batch: &Batch, prev: &[usize]) -> Vec<usize> {
        let messages = aggregate_messages(&batch.adjacency, prev, self.config.states);
        layer_predict(&self.layers[l - 1], prev, &messages)
    }

    pub fn decode(&self, batch: &Batch, states: &[Vec<usize>]) -> Vec<usize> {
        let s = self.config.states;
        match self.config.task {
            Task::NodeClassification => {
                let mut per_node = vec![0usize; states.len()];
                (0..batch.node_count())
                    .map(|v| {
                        for (l, layer) in states.iter().enumerate() {
                            per_node[l] = layer[v];
                        }
                        self.decoder.predict(&NodeStatesRow(&per_node))
                    })
                    .collect()
            }
            Task::GraphClassification => {
                let pooled = pooled_counts(batch, states, s);
                let width = states.len() * s;
                (0..batch.graphs.len())
                    .map(|g| {
                        self.decoder.predict(&PooledRow {
                            counts: &pooled[g * width..(g + 1) * width],
                            states: s,
                        })
                    })
                    .collect()
            }
        }
    }

    /// All layer states, reusing `prefix[..block]` and recomputing from `block` on.
    pub fn states_from(&self, batch: &Batch, prefix: &[Vec<usize>], block: usize) -> Vec<Vec<usize>> {
        let mut states: Vec<Vec<usize>> = if block == 0 {
            vec![self.encode(batch)]
        } else {
            prefix[..block.min(prefix.len())].to_vec()
        };
        for l in states.len()..=self.layers.len() {
            let next = self.step(l, batch, &states[l - 1]);
            states.push(next);
        }
        states
    }

    /// Deterministic forward; with `with_paths` also the decision path of every row.
    pub fn forward(&self, batch: &Batch, with_paths: bool) -> DtTrace {
        let s = self.config.states;
        let mut paths: Vec<Vec<Vec<usize>>> = Vec::new();
        let mut states = vec![self.encode(batch)];
        if with_paths {
            paths.push(
                (0..batch.node_count())
                    .map(|v| self.encoder.path(&InputRow(batch.inputs.row(v))))
                    .collect(),
            );
        }
        for l in 1..=self.layers.len() {
            let prev = states.last().expect("encoder states");
            let messages = aggregate_messages(&batch.adjacency, prev, s);
            if with_paths {
                let tree = &self.layers[l - 1];
                paths.push(
                    (0..prev.len())
                        .map(|v| {
                            tree.path(&LayerRow {
                                state: prev[v],
                                counts: messages.row(v),
                            })
                        })
                        .collect(),
                );
            }
            let next = layer_predict(&self.layers[l - 1], prev, &messages);
            states.push(next);
        }
        let predictions = self.decode(batch, &states);
        if with_paths {
            paths.push(self.decoder_paths(batch, &states));
        }
        DtTrace {
            states,
            predictions,
            paths: with_paths.then_some(paths),
        }
    }

    fn decoder_paths(&self, batch: &Batch, states: &[Vec<usize>]) -> Vec<Vec<usize>> {
        let s = self.config.states;
        match self.config.task {
            Task::NodeClassification => (0..batch.node_count())
                .map(|v| {
                    let per_node: Vec<usize> = states.iter().map(|layer| layer[v]).collect();
                    self.decoder.path(&NodeStatesRow(&per_node))
                })
                .collect(),
            Task::GraphClassification => {
                let pooled = pooled_counts(batch, states, s);
                let width = states.len() * s;
                (0..batch.graphs.len())
                    .map(|g| {
                        self.decoder.path(&PooledRow {
                            counts: &pooled[g * width..(g + 1) * width],
                            states: s,
                        })
                    })
                    .collect()
            }
        }
    }

    /// Correctly predicted targeted rows, and the number of targeted rows.
    pub fn correct_count(&self, batch: &Batch) -> (usize, usize) {
        let predictions = self.forward(batch, false).predictions;
        count_correct(&predictions, &batch.targets)
    }

    pub fn accuracy(&self, batch: &Batch) -> f64 {
        let (c, n) = self.correct_count(batch);
        if n == 0 {
            0.0
        } else {
            c as f64 / n as f64
        }
    }

    pub fn state_usage(&self) -> StateUsage {
        let l = self.layers.len();
        let mut usage = StateUsage {
            emitted: vec![BTreeSet::new(); l + 1],
            tested: vec![BTreeSet::new(); l + 1],
        };
        usage.emitted[0].extend(self.encoder.emitted());
        for (i, tree) in self.layers.iter().enumerate() {
            usage.emitted[i + 1].extend(tree.emitted());
        }
        for tree in self.blocks() {
            for f in tree.tested() {
                if let Some(layer) = f.layer() {
                    usage.tested[layer].extend(f.states());
                }
            }
        }
        usage
    }

    /// Layer boundaries whose states influence the prediction.
    pub fn needed_layers(&self) -> BTreeSet<usize> {
        let mut needed: BTreeSet<usize> = self.decoder.tested().iter().filter_map(Feature::layer).collect();
        for l in (1..=self.layers.len()).rev() {
            // a layer tree without splits emits a constant and ignores its input
            if needed.contains(&l) && self.layers[l - 1].decision_count() > 0 {
                needed.insert(l - 1);
            }
        }
        needed
    }

    /// `(L', S')`: the deepest layer boundary the decoder depends on, and the largest
    /// number of used states at any needed boundary (at least 2).
    pub fn detect_used_capacity(&self) -> (usize, usize) {
        let needed = self.needed_layers();
        let layers = needed.iter().next_back().copied().unwrap_or(0);
        let usage = self.state_usage();
        let states = (0..=layers)
            .map(|l| usage.emitted[l].union(&usage.tested[l]).count())
            .max()
            .unwrap_or(0)
            .max(2);
        (layers, states)
    }

    /// Checks the arity chain between trees and the path consistency of each tree.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        let expect = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("tree arity mismatch: {what}")))
            }
        };
        expect(self.layers.len() == c.layers, "layer count")?;
        expect(self.encoder.layout == layout::encoder(c.input_width), "encoder layout")?;
        expect(self.encoder.output_count == c.states, "encoder outputs")?;
        for (i, t) in self.layers.iter().enumerate() {
            expect(t.layout == layout::layer(i, c.states), "layer layout")?;
            expect(t.output_count == c.states, "layer outputs")?;
        }
        expect(self.decoder.layout == layout::decoder(c.task, c.layers, c.states), "decoder layout")?;
        expect(self.decoder.output_count == c.class_count, "decoder outputs")?;
        for t in self.blocks() {
            for node in &t.nodes {
                match node.kind {
                    NodeKind::Leaf { output } => expect(output < t.output_count, "leaf output")?,
                    NodeKind::Split {
                        feature,
                        if_true,
                        if_false,
                        ..
                    } => expect(
                        feature < t.layout.len() && if_true < t.nodes.len() && if_false < t.nodes.len(),
                        "split reference",
                    )?,
                }
            }
            t.check_paths()?;
        }
        Ok(())
    }
}

pub fn layer_predict(tree: &DecisionTree, prev: &[usize], messages: &MessageCounts) -> Vec<usize> {
    (0..prev.len())
        .map(|v| {
            tree.predict(&LayerRow {
                state: prev[v],
                counts: messages.row(v),
            })
        })
        .collect()
}

pub fn count_correct(predictions: &[usize], targets: &[Option<usize>]) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for (p, t) in predictions.iter().zip(targets) {
        if let Some(t) = t {
            total += 1;
            correct += usize::from(p == t);
        }
    }
    (correct, total)
}

/// Agreement of each tree with the block it replaced, on that block's table.
pub fn fidelity(model: &DtModel, traces: &Traces) -> Vec<f64> {
    model
        .blocks()
        .zip(&traces.tables)
        .map(|(tree, table)| {
            if table.is_empty() {
                return 1.0;
            }
            let agree = (0..table.len())
                .filter(|&r| tree.predict(&table.row(r)) == table.targets[r])
                .count();
            agree as f64 / table.len() as f64
        })
        .collect()
}

/// Fits one tree per block, in parallel over blocks when `exec` allows.
pub fn fit_traces(config: &ModelConfig, traces: &Traces, leaf_cap: usize, exec: Exec) -> Result<DtModel> {
    if traces.tables.len() != config.layers + 2 {
        return Err(Error::Argument("one table per block is required".into()));
    }
    let mut trees = exec
        .map(&traces.tables, |t| fit_tree(t, leaf_cap))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let decoder = trees.pop().expect("decoder table");
    let encoder = trees.remove(0);
    Ok(DtModel {
        config: config.clone(),
        encoder,
        layers: trees,
        decoder,
    })
}

/// Records traces of `model` on `units` and replaces every MLP with a tree.
pub fn distill(model: &DiffModel, dataset: &Dataset, units: &[Unit], leaf_cap: usize, exec: Exec) -> Result<(DtModel, Traces)> {
    let traces = record_traces(model, dataset, units)?;
    let dt = fit_traces(&model.config, &traces, leaf_cap, exec)?;
    Ok((dt, traces))
}
