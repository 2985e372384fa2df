//! Reduced-error pruning judged on the accuracy of the whole DT+GNN, and a greedy lossy
//! schedule on top of it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distill::{count_correct, DtModel};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gnn::Batch;
use crate::graph::{Dataset, Unit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneCriterion {
    /// Training accuracy must not drop.
    TrainOnly,
    /// Validation accuracy must not drop.
    ValidationOnly,
    /// Validation accuracy must not drop, and training accuracy must not fall below
    /// validation accuracy (nor drop further if it already was below).
    Combined,
}

impl PruneCriterion {
    pub const ALL: [PruneCriterion; 3] = [Self::TrainOnly, Self::ValidationOnly, Self::Combined];

    pub fn name(self) -> &'static str {
        match self {
            Self::TrainOnly => "train",
            Self::ValidationOnly => "val",
            Self::Combined => "combined",
        }
    }

    pub fn accepts(self, current: Score, candidate: Score) -> bool {
        match self {
            Self::TrainOnly => candidate.fit >= current.fit,
            Self::ValidationOnly => candidate.validation >= current.validation,
            Self::Combined => {
                candidate.validation >= current.validation
                    && (candidate.train_at_least_validation() || candidate.fit >= current.fit)
            }
        }
    }
}

impl fmt::Display for PruneCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PruneCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown pruning criterion `{s}` (train, val, combined)")))
    }
}

/// Correct counts on the fit and validation rows, with the row totals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub fit: usize,
    pub fit_total: usize,
    pub validation: usize,
    pub validation_total: usize,
}

impl Score {
    /// `fit / fit_total >= validation / validation_total`, compared exactly.
    pub fn train_at_least_validation(&self) -> bool {
        self.fit * self.validation_total >= self.validation * self.fit_total
    }

    pub fn fit_accuracy(&self) -> f64 {
        ratio(self.fit, self.fit_total)
    }

    pub fn validation_accuracy(&self) -> f64 {
        ratio(self.validation, self.validation_total)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// The fit and validation rows, evaluated in one batch.
pub struct PruneSet {
    pub batch: Batch,
    pub fit_targets: Vec<Option<usize>>,
    pub validation_targets: Vec<Option<usize>>,
}

impl PruneSet {
    pub fn new(dataset: &Dataset, fit: &[Unit], validation: &[Unit]) -> Self {
        let all: Vec<Unit> = fit.iter().chain(validation).copied().collect();
        let batch = Batch::from_units(dataset, &all);
        PruneSet {
            fit_targets: batch.targets_for(dataset, fit),
            validation_targets: batch.targets_for(dataset, validation),
            batch,
        }
    }

    pub fn score_predictions(&self, predictions: &[usize]) -> Score {
        let (fit, fit_total) = count_correct(predictions, &self.fit_targets);
        let (validation, validation_total) = count_correct(predictions, &self.validation_targets);
        Score {
            fit,
            fit_total,
            validation,
            validation_total,
        }
    }

    pub fn score(&self, model: &DtModel) -> Score {
        self.score_predictions(&model.forward(&self.batch, false).predictions)
    }

    /// Samples routed through every node of every tree: all nodes of the batch for the
    /// encoder and layer trees, the fit and validation rows for the decoder.
    pub fn node_loads(&self, model: &DtModel) -> Vec<Vec<usize>> {
        let trace = model.forward(&self.batch, true);
        let paths = trace.paths.expect("paths requested");
        let last = paths.len() - 1;
        paths
            .iter()
            .enumerate()
            .map(|(b, rows)| {
                let mut load = vec![0usize; model.block(b).nodes.len()];
                for (r, path) in rows.iter().enumerate() {
                    if b == last && self.fit_targets[r].is_none() && self.validation_targets[r].is_none() {
                        continue;
                    }
                    for &n in path {
                        load[n] += 1;
                    }
                }
                load
            })
            .collect()
    }
}

/// Decision node `node` of block `block` (0 encoder, 1..=L layers, L+1 decoder).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub block: usize,
    pub node: usize,
}

fn decision_nodes(model: &DtModel) -> Vec<NodeRef> {
    model
        .blocks()
        .enumerate()
        .flat_map(|(block, t)| t.decision_nodes().into_iter().map(move |node| NodeRef { block, node }))
        .collect()
}

/// Sum of decision nodes over all trees.
pub fn model_size(model: &DtModel) -> usize {
    model.size()
}

struct Cached {
    model: DtModel,
    states: Vec<Vec<usize>>,
    score: Score,
}

impl Cached {
    fn new(model: DtModel, set: &PruneSet) -> Self {
        let states = model.states_from(&set.batch, &[], 0);
        let score = set.score_predictions(&model.decode(&set.batch, &states));
        Cached { model, states, score }
    }

    /// Model, states and score after replacing `at` by its majority leaf. Only blocks
    /// from `at.block` on are recomputed.
    fn collapsed(&self, at: NodeRef, set: &PruneSet) -> Cached {
        let mut model = self.model.clone();
        model.block_mut(at.block).collapse(at.node);
        let states = model.states_from(&set.batch, &self.states, at.block);
        let score = set.score_predictions(&model.decode(&set.batch, &states));
        Cached { model, states, score }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub model: DtModel,
    pub accepted: usize,
    pub sweeps: usize,
    pub before: Score,
    pub after: Score,
}

/// Sweeps all decision nodes, fewest routed samples first, replacing each by its majority
/// leaf whenever `criterion` accepts the end-to-end result, until a sweep changes nothing.
pub fn lossless_prune(model: &DtModel, set: &PruneSet, criterion: PruneCriterion) -> PruneOutcome {
    let mut cur = Cached::new(model.clone(), set);
    let before = cur.score;
    let mut accepted = 0;
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let loads = set.node_loads(&cur.model);
        let mut order = decision_nodes(&cur.model);
        order.sort_by_key(|r| (loads[r.block][r.node], *r));
        let mut changed = false;
        for at in order {
            // a collapsed ancestor may have removed this node already
            if !cur.model.block(at.block).decision_nodes().contains(&at.node) {
                continue;
            }
            let cand = cur.collapsed(at, set);
            if criterion.accepts(cur.score, cand.score) {
                cur = cand;
                accepted += 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    PruneOutcome {
        after: cur.score,
        model: cur.model,
        accepted,
        sweeps,
        before,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleLevel {
    /// Share of the lossless model's decision nodes targeted for removal, in percent.
    pub percent: usize,
    pub size: usize,
    pub accuracy: Accuracies,
    pub model: DtModel,
}

/// Snapshots of greedy lossy pruning; sizes strictly decrease and level 0 is the input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub levels: Vec<ScheduleLevel>,
}

impl PruneSchedule {
    /// Smallest snapshot whose test accuracy is within `tolerance` of level 0.
    pub fn smallest_within(&self, tolerance: f64) -> &ScheduleLevel {
        let base = self.levels[0].accuracy.test;
        self.levels
            .iter()
            .rev()
            .find(|l| l.accuracy.test >= base - tolerance)
            .unwrap_or(&self.levels[0])
    }
}

/// Greedy lossy pruning from `model`: each step removes the decision node whose majority
/// leaf keeps the most validation rows correct (ties: fewest routed samples, then lowest
/// block and node id), re-evaluating every candidate after each removal. A snapshot is
/// taken at each `100/levels` percent of the starting size.
pub fn lossy_prune_schedule(model: &DtModel, set: &PruneSet, test: &Batch, levels: usize, exec: Exec) -> Result<PruneSchedule> {
    if levels == 0 {
        return Err(Error::Argument("lossy levels must be positive".into()));
    }
    let total = model.size();
    let snapshot = |c: &Cached, percent: usize| {
        let (tc, tn) = c.model.correct_count(test);
        ScheduleLevel {
            percent,
            size: c.model.size(),
            accuracy: Accuracies {
                train: c.score.fit_accuracy(),
                validation: c.score.validation_accuracy(),
                test: ratio(tc, tn),
            },
            model: c.model.clone(),
        }
    };
    let mut cur = Cached::new(model.clone(), set);
    let mut out = vec![snapshot(&cur, 0)];
    for k in 1..=levels {
        // round half up
        let removed = (2 * k * total + levels) / (2 * levels);
        let target = total - removed.min(total);
        while cur.model.size() > target {
            let loads = set.node_loads(&cur.model);
            let cands = decision_nodes(&cur.model);
            let scored = exec.map(&cands, |&at| cur.collapsed(at, set));
            let best = (0..cands.len())
                .min_by_key(|&i| {
                    let at = cands[i];
                    (
                        std::cmp::Reverse(scored[i].score.validation),
                        loads[at.block][at.node],
                        at,
                    )
                })
                .expect("a decision node remains while size > target");
            cur = scored.into_iter().nth(best).expect("in range");
        }
        if cur.model.size() < out.last().expect("level 0").size {
            out.push(snapshot(&cur, k * 100 / levels));
        }
    }
    Ok(PruneSchedule { levels: out })
}

/// Majority-class rate of the targeted rows, the accuracy of a fully collapsed model.
pub fn majority_rate(targets: &[Option<usize>], class_count: usize) -> f64 {
    let mut h = vec![0usize; class_count];
    for t in targets.iter().flatten() {
        h[*t] += 1;
    }
    ratio(h.iter().copied().max().unwrap_or(0), h.iter().sum())
}
