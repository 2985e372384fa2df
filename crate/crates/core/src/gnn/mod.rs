//! The differentiable categorical-state GNN.
//!
//! An encoder MLP maps input features to one of `S` states, `L` layers each update a
//! node's state from `[own state one-hot | neighbor state counts]`, and a decoder MLP
//! reads every layer's states (node tasks) or per-layer state counts (graph tasks).
//! Training samples states with a hard straight-through Gumbel-Softmax; evaluation
//! takes the plain argmax.

mod train;

use serde::{Deserialize, Serialize};

pub use train::{train, EpochRecord, TrainedModel};

use crate::autodiff::{
    argmax, sample_gumbel, AdamConfig, BatchStats, Checkpoint, Mlp, MlpVars, Tape, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::graph::{Csr, Dataset, Task, Unit};
use crate::rng::{self, Rng};

/// Layer and state counts found by tree inspection for each benchmark, `(L, S)`.
pub fn inspected_capacity(dataset: &str) -> Option<(usize, usize)> {
    let key = dataset.to_ascii_lowercase().replace('_', "-");
    Some(match key.as_str() {
        "infection" => (5, 6),
        "negative-evidence" => (1, 3),
        "ba-shapes" => (5, 5),
        "tree-cycles" => (5, 5),
        "tree-grid" => (5, 5),
        "ba-2motifs" => (4, 6),
        "mutag" => (4, 6),
        "mutagenicity" => (3, 8),
        "bbbp" => (3, 5),
        "proteins" => (3, 5),
        "imdb-binary" | "imdb-b" => (3, 5),
        "reddit-binary" | "reddit-b" => (3, 5),
        "collab" => (3, 8),
        _ => return None,
    })
}

/// Capacity used before any shrinking.
pub const INITIAL_LAYERS: usize = 5;
pub const INITIAL_STATES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub states: usize,
    pub hidden: usize,
    pub input_width: usize,
    pub class_count: usize,
    pub task: Task,
    pub epochs: usize,
    pub patience: usize,
    pub temperature: f64,
    pub adam: AdamConfig,
    /// Graph tasks with more graphs than this train on shuffled minibatches.
    pub full_batch_limit: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Protocol defaults with the inspected capacity for known benchmarks and the
    /// initial capacity otherwise.
    pub fn for_dataset(dataset: &Dataset, seed: u64) -> Self {
        let (layers, states) = inspected_capacity(&dataset.name).unwrap_or((INITIAL_LAYERS, INITIAL_STATES));
        ModelConfig {
            layers,
            states,
            hidden: 16,
            input_width: dataset.input_width(),
            class_count: dataset.class_count,
            task: dataset.task,
            epochs: 1500,
            patience: 100,
            temperature: 1.0,
            adam: AdamConfig::default(),
            full_batch_limit: 2000,
            batch_size: 128,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.states < 2 {
            return Err(Error::Config(format!("need at least 2 states, got {}", self.states)));
        }
        if self.hidden == 0 || self.input_width == 0 || self.class_count == 0 {
            return Err(Error::Config("hidden, input and class widths must be positive".into()));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if dataset.task != self.task
            || dataset.input_width() != self.input_width
            || dataset.class_count != self.class_count
        {
            return Err(Error::Config(format!(
                "model config does not match dataset `{}`",
                dataset.name
            )));
        }
        Ok(())
    }

    /// Width of the decoder input: `S` per layer boundary `0..=L`.
    pub fn decoder_width(&self) -> usize {
        (self.layers + 1) * self.states
    }
}

/// Per-node neighbor state counts, row-major `n x S`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageCounts {
    pub states: usize,
    pub counts: Vec<u32>,
}

impl MessageCounts {
    #[inline]
    pub fn row(&self, v: usize) -> &[u32] {
        &self.counts[v * self.states..(v + 1) * self.states]
    }

    pub fn node_count(&self) -> usize {
        self.counts.len() / self.states
    }
}

/// Entry `(v, s)` is the number of message senders of `v` in state `s`.
pub fn aggregate_messages(adjacency: &Csr, states: &[usize], state_count: usize) -> MessageCounts {
    let mut counts = vec![0u32; adjacency.rows() * state_count];
    for v in 0..adjacency.rows() {
        for &w in adjacency.row(v) {
            counts[v * state_count + states[w]] += 1;
        }
    }
    MessageCounts {
        states: state_count,
        counts,
    }
}

/// `[one-hot state | neighbor counts]` rows for a layer MLP.
pub fn layer_input(states: &[usize], messages: &MessageCounts) -> Tensor {
    let s = messages.states;
    let mut x = Tensor::zeros(states.len(), 2 * s);
    for (v, &st) in states.iter().enumerate() {
        let row = x.row_mut(v);
        row[st] = 1.0;
        for (o, &c) in row[s..].iter_mut().zip(messages.row(v)) {
            *o = f64::from(c);
        }
    }
    x
}

/// Evaluation-mode update for one layer: argmax of the layer MLP.
pub fn layer_forward(mlp: &Mlp, states: &[usize], messages: &MessageCounts) -> Result<Vec<usize>> {
    let out = mlp.forward_eval(&layer_input(states, messages))?;
    Ok((0..out.rows()).map(|r| out.argmax_row(r)).collect())
}

/// Disjoint union of some dataset graphs, with supervision targets for selected units.
pub struct Batch {
    pub graphs: Vec<usize>,
    /// First node row of each graph in the union, plus the total node count at the end.
    pub offsets: Vec<usize>,
    pub adjacency: Csr,
    /// Row `g` lists the node rows of the `g`th graph.
    pub pooling: Csr,
    pub inputs: Tensor,
    /// Per node row (node tasks) or per graph row (graph tasks).
    pub targets: Vec<Option<usize>>,
}

impl Batch {
    /// All graphs touched by `units`; targets are set exactly for `units`.
    pub fn from_units(dataset: &Dataset, units: &[Unit]) -> Batch {
        let mut graphs: Vec<usize> = units.iter().map(|u| u.graph).collect();
        graphs.sort_unstable();
        graphs.dedup();
        let mut batch = Batch::from_graphs(dataset, &graphs);
        let row_of_graph = |g: usize| graphs.binary_search(&g).expect("graph in batch");
        for &u in units {
            let gi = row_of_graph(u.graph);
            let row = match u.node {
                Some(v) => batch.offsets[gi] + v,
                None => gi,
            };
            batch.targets[row] = Some(dataset.label(u));
        }
        batch
    }

    /// Graphs in the given order, without targets.
    pub fn from_graphs(dataset: &Dataset, graphs: &[usize]) -> Batch {
        let mut offsets = Vec::with_capacity(graphs.len() + 1);
        let mut total = 0;
        for &g in graphs {
            offsets.push(total);
            total += dataset.graphs[g].node_count();
        }
        offsets.push(total);
        let mut pairs = Vec::new();
        let mut pool = Vec::with_capacity(total);
        let width = dataset.input_width();
        let mut inputs = Tensor::zeros(total, width);
        for (gi, &g) in graphs.iter().enumerate() {
            let graph = &dataset.graphs[g];
            let off = offsets[gi];
            for v in 0..graph.node_count() {
                pairs.extend(graph.senders(v).iter().map(|&w| (off + v, off + w)));
                pool.push((gi, off + v));
                let row = inputs.row_mut(off + v);
                if dataset.feature_count == 0 {
                    row[0] = 1.0;
                } else {
                    for &f in &graph.node_features()[v] {
                        row[f as usize] = 1.0;
                    }
                }
            }
        }
        let target_rows = match dataset.task {
            Task::NodeClassification => total,
            Task::GraphClassification => graphs.len(),
        };
        Batch {
            graphs: graphs.to_vec(),
            offsets,
            adjacency: Csr::from_pairs(total, total, pairs),
            pooling: Csr::from_pairs(graphs.len(), total, pool),
            inputs,
            targets: vec![None; target_rows],
        }
    }

    pub fn node_count(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Target row of `unit`, or `None` when its graph is not in the batch.
    pub fn row_of(&self, unit: Unit) -> Option<usize> {
        let gi = self.graphs.iter().position(|&g| g == unit.graph)?;
        Some(match unit.node {
            Some(v) => self.offsets[gi] + v,
            None => gi,
        })
    }

    /// Target vector with exactly `units` set to their labels.
    pub fn targets_for(&self, dataset: &Dataset, units: &[Unit]) -> Vec<Option<usize>> {
        let mut targets = vec![None; self.targets.len()];
        for &u in units {
            if let Some(r) = self.row_of(u) {
                targets[r] = Some(dataset.label(u));
            }
        }
        targets
    }
}

/// States of every node at every layer boundary `0..=L`, and the decoder output.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTrace {
    pub states: Vec<Vec<usize>>,
    pub decoder_input: Tensor,
    pub logits: Tensor,
}

impl EvalTrace {
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.logits.rows()).map(|r| self.logits.argmax_row(r)).collect()
    }
}

/// Training-mode forward results needed for the parameter update.
pub struct TrainForward {
    pub loss: Var,
    /// Hard one-hot states at layer boundaries `0..=L`.
    pub states: Vec<Var>,
    pub params: Vec<MlpVars>,
    pub stats: Vec<Option<BatchStats>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffModel {
    pub config: ModelConfig,
    pub encoder: Mlp,
    pub layers: Vec<Mlp>,
    pub decoder: Mlp,
}

impl DiffModel {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (s, h) = (config.states, config.hidden);
        let encoder = Mlp::new(config.input_width, h, s, rng);
        let layers = (0..config.layers).map(|_| Mlp::new(2 * s, h, s, rng)).collect();
        let decoder = Mlp::new(config.decoder_width(), h, config.class_count, rng);
        Ok(DiffModel {
            config,
            encoder,
            layers,
            decoder,
        })
    }

    /// Seeded from the `init` substream of the config seed.
    pub fn initialized(config: ModelConfig) -> Result<Self> {
        DiffModel::initialized_stream(config, 0)
    }

    pub fn initialized_stream(config: ModelConfig, index: u64) -> Result<Self> {
        let mut r = rng::substream(config.seed, "init", index);
        DiffModel::new(config, &mut r)
    }

    /// Encoder, layers, decoder.
    pub fn blocks(&self) -> impl Iterator<Item = &Mlp> {
        std::iter::once(&self.encoder)
            .chain(self.layers.iter())
            .chain(std::iter::once(&self.decoder))
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Mlp> {
        std::iter::once(&mut self.encoder)
            .chain(self.layers.iter_mut())
            .chain(std::iter::once(&mut self.decoder))
    }

    fn block_names(&self) -> Vec<String> {
        std::iter::once("encoder".to_string())
            .chain((1..=self.layers.len()).map(|l| format!("layer.{l}")))
            .chain(std::iter::once("decoder".to_string()))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        for (name, mlp) in self.block_names().into_iter().zip(self.blocks()) {
            for (p, t) in Mlp::PARAM_NAMES.iter().zip(mlp.params()) {
                c.insert(format!("{name}.{p}"), t.clone());
            }
            c.insert(format!("{name}.running_mean"), Tensor::row_vector(mlp.running_mean.clone()));
            c.insert(format!("{name}.running_var"), Tensor::row_vector(mlp.running_var.clone()));
        }
        c
    }

    pub fn from_checkpoint(config: ModelConfig, checkpoint: &Checkpoint) -> Result<Self> {
        let mut model = DiffModel::initialized(config)?;
        let names = model.block_names();
        for (name, mlp) in names.iter().zip(model.blocks_mut()) {
            for (p, t) in Mlp::PARAM_NAMES.iter().zip(mlp.params_mut()) {
                let src = checkpoint.get(&format!("{name}.{p}"))?;
                src.check_same_shape(t, &format!("{name}.{p}"))?;
                *t = src.clone();
            }
            mlp.running_mean = checkpoint.get(&format!("{name}.running_mean"))?.data().to_vec();
            mlp.running_var = checkpoint.get(&format!("{name}.running_var"))?.data().to_vec();
        }
        Ok(model)
    }

    /// Decoder input from per-layer states: one-hot per node, or pooled counts per graph.
    pub fn decoder_input(&self, batch: &Batch, states: &[Vec<usize>]) -> Tensor {
        let s = self.config.states;
        match self.config.task {
            Task::NodeClassification => {
                let mut x = Tensor::zeros(batch.node_count(), self.config.decoder_width());
                for (l, layer) in states.iter().enumerate() {
                    for (v, &st) in layer.iter().enumerate() {
                        x.set(v, l * s + st, 1.0);
                    }
                }
                x
            }
            Task::GraphClassification => {
                let mut x = Tensor::zeros(batch.graphs.len(), self.config.decoder_width());
                for (l, layer) in states.iter().enumerate() {
                    for g in 0..batch.graphs.len() {
                        for &v in batch.pooling.row(g) {
                            let c = l * s + layer[v];
                            x.set(g, c, x.get(g, c) + 1.0);
                        }
                    }
                }
                x
            }
        }
    }

    /// Deterministic forward with argmax states.
    pub fn forward_eval(&self, batch: &Batch) -> Result<EvalTrace> {
        let enc = self.encoder.forward_eval(&batch.inputs)?;
        let mut states = vec![(0..enc.rows()).map(|r| argmax(enc.row(r))).collect::<Vec<_>>()];
        for mlp in &self.layers {
            let prev = states.last().expect("encoder states");
            let messages = aggregate_messages(&batch.adjacency, prev, self.config.states);
            states.push(layer_forward(mlp, prev, &messages)?);
        }
        let decoder_input = self.decoder_input(batch, &states);
        let logits = self.decoder.forward_eval(&decoder_input)?;
        Ok(EvalTrace {
            states,
            decoder_input,
            logits,
        })
    }

    /// Training forward with Gumbel noise from `rng`, ending in the masked cross-entropy.
    pub fn forward_train<'g>(&self, tape: &mut Tape<'g>, batch: &'g Batch, rng: &mut Rng) -> Result<TrainForward> {
        let n = batch.node_count();
        let s = self.config.states;
        let tau = self.config.temperature;
        let mut params = Vec::with_capacity(self.layers.len() + 2);
        let mut stats = Vec::with_capacity(self.layers.len() + 2);

        let x = tape.leaf(batch.inputs.clone());
        let vars = self.encoder.bind(tape);
        let (logits, st) = self.encoder.forward_train(tape, &vars, x)?;
        params.push(vars);
        stats.push(st);
        let noise = sample_gumbel(n, s, rng);
        let mut state = tape.gumbel_softmax(logits, &noise, tau, true)?;
        let mut all_states = vec![state];

        for mlp in &self.layers {
            let messages = tape.sum_aggregate(state, &batch.adjacency)?;
            let input = tape.concat(&[state, messages])?;
            let vars = mlp.bind(tape);
            let (logits, st) = mlp.forward_train(tape, &vars, input)?;
            params.push(vars);
            stats.push(st);
            let noise = sample_gumbel(n, s, rng);
            state = tape.gumbel_softmax(logits, &noise, tau, true)?;
            all_states.push(state);
        }

        let mut dec_in = tape.concat(&all_states)?;
        if self.config.task == Task::GraphClassification {
            dec_in = tape.sum_aggregate(dec_in, &batch.pooling)?;
        }
        let vars = self.decoder.bind(tape);
        let (logits, st) = self.decoder.forward_train(tape, &vars, dec_in)?;
        params.push(vars);
        stats.push(st);
        let loss = tape.cross_entropy(logits, &batch.targets)?;
        Ok(TrainForward {
            loss,
            states: all_states,
            params,
            stats,
        })
    }
}

/// Mean cross-entropy of `logits` against the rows that have a target.
pub fn masked_cross_entropy(logits: &Tensor, targets: &[Option<usize>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, t) in targets.iter().enumerate() {
        if let Some(t) = *t {
            let row = logits.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Number of rows whose argmax equals the target, and the number of targeted rows.
pub fn correct_count(logits: &Tensor, targets: &[Option<usize>]) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for (r, t) in targets.iter().enumerate() {
        if let Some(t) = *t {
            total += 1;
            if logits.argmax_row(r) == t {
                correct += 1;
            }
        }
    }
    (correct, total)
}
