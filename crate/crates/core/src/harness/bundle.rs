//! Self-contained model bundles: every pruning level's trees, traces of representative
//! graphs under each level, and precomputed explanations.
//!
//! A bundle is plain JSON. [`ModelBundle::validate`] recomputes every stored trace from
//! the stored trees, so a bundle that validates shows exactly what its trees do.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read, write_atomic, Experiment, Report};
use crate::distill::{DtModel, NodeKind};
use crate::error::{Error, Result};
use crate::explain::{explain_batch, Target};
use crate::gnn::{Batch, ModelConfig};
use crate::graph::{Dataset, Graph, Task, Unit};
use crate::prune::Accuracies;

/// Bumped on every incompatible change of the bundle layout.
pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub name: String,
    pub task: Task,
    pub class_count: usize,
    pub feature_count: usize,
    pub graph_count: usize,
    pub node_count: usize,
}

impl DatasetMeta {
    pub fn of(dataset: &Dataset) -> Self {
        DatasetMeta {
            name: dataset.name.clone(),
            task: dataset.task,
            class_count: dataset.class_count,
            feature_count: dataset.feature_count,
            graph_count: dataset.graphs.len(),
            node_count: dataset.total_nodes(),
        }
    }
}

/// One step of the pruning schedule; level 0 is the lossless model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleLevel {
    pub percent: usize,
    pub size: usize,
    pub accuracy: Accuracies,
    pub model: DtModel,
}

/// A labeled unit chosen for display, with its level-0 prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Representative {
    pub unit: Unit,
    pub label: usize,
    pub prediction: usize,
}

impl Representative {
    pub fn correct(&self) -> bool {
        self.label == self.prediction
    }

    pub fn target(&self) -> Target {
        match self.unit.node {
            Some(node) => Target::Node { node },
            None => Target::Graph,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Explanation {
    pub target: Target,
    /// The class explained: the prediction at this level.
    pub class: usize,
    /// One importance per node of the graph.
    pub importance: Vec<f64>,
}

/// Behavior of one pruning level on one bundled graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphLevel {
    /// `states[l][v]` for layer boundaries `0..=L`.
    pub states: Vec<Vec<usize>>,
    /// One prediction per node (node tasks) or a single one (graph tasks).
    pub predictions: Vec<usize>,
    /// `paths[b][row]`: tree nodes visited in block `b` (encoder, layers, decoder).
    pub paths: Vec<Vec<Vec<usize>>>,
    /// One per target of the graph, in target order.
    pub explanations: Vec<Explanation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleGraph {
    pub index: usize,
    pub graph: Graph,
    pub targets: Vec<Representative>,
    /// One per bundle level, in level order.
    pub levels: Vec<GraphLevel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub schema_version: u32,
    pub dataset: DatasetMeta,
    pub fold: usize,
    pub model_config: ModelConfig,
    pub levels: Vec<BundleLevel>,
    pub graphs: Vec<BundleGraph>,
    /// Accuracy and size summary over all folds of the run.
    pub summary: Report,
}

/// Chooses display units from `pool` by `model`'s predictions: the smallest correctly
/// classified unit of every class, the smallest misclassified one, then further units
/// round-robin over classes until `min` are chosen or the pool is used up. Size is the
/// node count of the unit's graph; ties go to the earlier unit.
pub fn select_representatives(dataset: &Dataset, model: &DtModel, pool: &[Unit], min: usize) -> Vec<Representative> {
    if pool.is_empty() {
        return Vec::new();
    }
    let batch = Batch::from_units(dataset, pool);
    let predictions = model.forward(&batch, false).predictions;
    let mut cands: Vec<Representative> = pool
        .iter()
        .map(|&unit| Representative {
            unit,
            label: dataset.label(unit),
            prediction: predictions[batch.row_of(unit).expect("unit in its own batch")],
        })
        .collect();
    cands.sort_by_key(|r| (dataset.graphs[r.unit.graph].node_count(), r.unit));
    let mut taken = vec![false; cands.len()];
    let mut chosen = Vec::new();
    fn take(i: usize, cands: &[Representative], taken: &mut [bool], chosen: &mut Vec<Representative>) {
        if !taken[i] {
            taken[i] = true;
            chosen.push(cands[i]);
        }
    }
    for c in 0..dataset.class_count {
        if let Some(i) = cands.iter().position(|r| r.label == c && r.correct()) {
            take(i, &cands, &mut taken, &mut chosen);
        }
    }
    if let Some(i) = cands.iter().position(|r| !r.correct()) {
        take(i, &cands, &mut taken, &mut chosen);
    }
    while chosen.len() < min {
        let before = chosen.len();
        for c in 0..dataset.class_count {
            if chosen.len() >= min {
                break;
            }
            if let Some(i) = (0..cands.len()).find(|&i| !taken[i] && cands[i].label == c) {
                take(i, &cands, &mut taken, &mut chosen);
            }
        }
        if chosen.len() == before {
            break;
        }
    }
    chosen
}

fn graph_level(dataset: &Dataset, model: &DtModel, graph: usize, targets: &[Representative]) -> Result<GraphLevel> {
    let batch = Batch::from_graphs(dataset, &[graph]);
    let trace = model.forward(&batch, true);
    let explanations = targets
        .iter()
        .map(|r| {
            let target = r.target();
            let class = match target {
                Target::Node { node } => trace.predictions[node],
                Target::Graph => trace.predictions[0],
            };
            let importance = explain_batch(model, &batch, &trace.states, target, class)?;
            Ok(Explanation {
                target,
                class,
                importance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GraphLevel {
        states: trace.states,
        predictions: trace.predictions,
        paths: trace.paths.expect("paths requested"),
        explanations,
    })
}

/// Builds the bundle of `fold`, drawing representatives from its test units first and
/// from the remaining units when the test units are fewer than `min_targets`.
pub fn export_bundle(exp: &Experiment, fold: usize, min_targets: usize) -> Result<ModelBundle> {
    let f = exp
        .folds
        .iter()
        .find(|f| f.fold == fold)
        .ok_or_else(|| Error::Argument(format!("fold {fold} was not run")))?;
    let pruned = f
        .pruned
        .as_ref()
        .ok_or_else(|| Error::Config(format!("fold {fold} has no prune stage output yet")))?;
    let summary = exp.report()?;
    let ds = &exp.dataset;
    let levels: Vec<BundleLevel> = pruned
        .schedule
        .levels
        .iter()
        .map(|l| BundleLevel {
            percent: l.percent,
            size: l.size,
            accuracy: l.accuracy,
            model: l.model.clone(),
        })
        .collect();
    let lossless = &levels[0].model;

    let units = ds.units();
    let test: Vec<Unit> = f.split.test.iter().map(|&i| units[i]).collect();
    let mut targets = select_representatives(ds, lossless, &test, min_targets);
    if targets.len() < min_targets {
        let rest: Vec<Unit> = units.iter().copied().filter(|u| !test.contains(u)).collect();
        targets.extend(select_representatives(ds, lossless, &rest, min_targets - targets.len()));
    }

    let mut order: Vec<usize> = Vec::new();
    for r in &targets {
        if !order.contains(&r.unit.graph) {
            order.push(r.unit.graph);
        }
    }
    let graphs = order
        .into_iter()
        .map(|g| {
            let mine: Vec<Representative> = targets.iter().copied().filter(|r| r.unit.graph == g).collect();
            let per_level = levels
                .iter()
                .map(|l| graph_level(ds, &l.model, g, &mine))
                .collect::<Result<Vec<_>>>()?;
            Ok(BundleGraph {
                index: g,
                graph: ds.graphs[g].clone(),
                targets: mine,
                levels: per_level,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let bundle = ModelBundle {
        schema_version: BUNDLE_SCHEMA_VERSION,
        dataset: DatasetMeta::of(ds),
        fold,
        model_config: f.model_config.clone(),
        levels,
        graphs,
        summary,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

/// A root-to-leaf walk through `tree`'s child links.
fn check_path(tree: &crate::distill::DecisionTree, path: &[usize]) -> bool {
    let Some((&last, _)) = path.split_last() else { return false };
    if path[0] != 0 || last >= tree.nodes.len() || !tree.nodes[last].is_leaf() {
        return false;
    }
    path.windows(2).all(|w| match tree.nodes.get(w[0]).map(|n| &n.kind) {
        Some(NodeKind::Split { if_true, if_false, .. }) => w[1] == *if_true || w[1] == *if_false,
        _ => false,
    })
}

impl ModelBundle {
    /// Checks the schema version, the level sequence and every stored trace, path and
    /// explanation against a recomputation from the stored trees.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != BUNDLE_SCHEMA_VERSION {
            return Err(schema(format!(
                "schema version {} is not the supported version {BUNDLE_SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.levels.is_empty() {
            return Err(schema("no pruning levels"));
        }
        let cfg = &self.model_config;
        for (i, l) in self.levels.iter().enumerate() {
            l.model.validate().map_err(|e| schema(format!("level {i}: {e}")))?;
            if l.model.config != *cfg {
                return Err(schema(format!("level {i} has a different model config")));
            }
            if l.model.size() != l.size {
                return Err(schema(format!("level {i} claims size {} but has {}", l.size, l.model.size())));
            }
            let a = l.accuracy;
            if ![a.train, a.validation, a.test].iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x)) {
                return Err(schema(format!("level {i} accuracies out of range")));
            }
            if i > 0 && (l.size >= self.levels[i - 1].size || l.percent <= self.levels[i - 1].percent) {
                return Err(schema(format!("level {i} does not shrink the model")));
            }
        }
        if self.graphs.is_empty() {
            return Err(schema("no graphs"));
        }
        if self.dataset.task != cfg.task || self.dataset.class_count != cfg.class_count {
            return Err(schema("dataset metadata disagrees with the model config"));
        }
        // a dataset holding exactly the bundled graphs at their original indices
        let mut graphs: Vec<Graph> = Vec::new();
        let mut local = Vec::new();
        for g in &self.graphs {
            if g.index >= self.dataset.graph_count {
                return Err(schema(format!("graph index {} out of range", g.index)));
            }
            local.push(graphs.len());
            graphs.push(g.graph.clone());
        }
        let ds = Dataset::new(self.dataset.name.clone(), self.dataset.task, self.dataset.class_count, self.dataset.feature_count, graphs)
            .map_err(|e| schema(format!("bundled graphs: {e}")))?;
        for (g, &li) in self.graphs.iter().zip(&local) {
            if g.levels.len() != self.levels.len() {
                return Err(schema(format!("graph {} has {} levels, expected {}", g.index, g.levels.len(), self.levels.len())));
            }
            if g.targets.is_empty() {
                return Err(schema(format!("graph {} has no targets", g.index)));
            }
            for r in &g.targets {
                let unit = Unit { graph: li, node: r.unit.node };
                let ok = r.unit.graph == g.index
                    && ds.units().contains(&unit)
                    && ds.label(unit) == r.label
                    && r.prediction < cfg.class_count;
                if !ok {
                    return Err(schema(format!("graph {} has an invalid target {:?}", g.index, r.unit)));
                }
            }
            for (i, (gl, level)) in g.levels.iter().zip(&self.levels).enumerate() {
                let expected = graph_level(&ds, &level.model, li, &g.targets)
                    .map_err(|e| schema(format!("graph {} level {i}: {e}", g.index)))?;
                for (b, paths) in gl.paths.iter().enumerate() {
                    let tree = level.model.blocks().nth(b).ok_or_else(|| schema("paths for a missing block"))?;
                    if !paths.iter().all(|p| check_path(tree, p)) {
                        return Err(schema(format!("graph {} level {i} block {b}: path is not a root-to-leaf walk", g.index)));
                    }
                }
                if gl.explanations.iter().any(|e| !e.importance.iter().all(|x| x.is_finite())) {
                    return Err(schema(format!("graph {} level {i}: non-finite importance", g.index)));
                }
                if *gl != expected {
                    return Err(schema(format!("graph {} level {i}: trace differs from its trees", g.index)));
                }
                if i == 0 && g.targets.iter().zip(&gl.explanations).any(|(r, e)| e.class != r.prediction) {
                    return Err(schema(format!("graph {}: level-0 prediction mismatch", g.index)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    /// Parses and validates a bundle.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == BUNDLE_SCHEMA_VERSION as u64 => {}
            Some(v) => return Err(schema(format!("schema version {v} is not the supported version {BUNDLE_SCHEMA_VERSION}"))),
            None => return Err(schema("missing schema_version")),
        }
        let bundle: ModelBundle = serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read(path)?)
    }
}
