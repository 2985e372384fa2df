//! `dtgnn`: generate data, run cross-validated DT+GNN experiments stage by stage, and
//! export reports and inspector bundles.
//!
//! Stage commands share a run directory (`--out`) holding `experiment.json` and one
//! `fold-<k>.json` per fold; each command loads it, runs its stage and saves it back.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dtgnn::datagen::{write_tudataset, GeneratorConfig, Synthetic};
use dtgnn::explain::{explain_prediction, top_k, Target};
use dtgnn::graph::Task;
use dtgnn::harness::{
    export_bundle, run_experiment, shrink_and_retrain, write_atomic, write_json, Experiment, ExperimentConfig,
};
use dtgnn::prune::PruneCriterion;
use dtgnn::{Error, Exec, Result};

#[derive(Parser)]
#[command(name = "dtgnn", version, about = "Decision-tree graph neural networks")]
struct Cli {
    /// Run every loop sequentially.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PruneArg {
    None,
    Train,
    Val,
    Combined,
}

impl PruneArg {
    fn criterion(self) -> Option<PruneCriterion> {
        match self {
            PruneArg::None => None,
            PruneArg::Train => Some(PruneCriterion::TrainOnly),
            PruneArg::Val => Some(PruneCriterion::ValidationOnly),
            PruneArg::Combined => Some(PruneCriterion::Combined),
        }
    }
}

/// Experiment settings; flags override `--config`, which overrides the defaults.
#[derive(Args, Clone, Debug, Default)]
struct ExpArgs {
    /// TOML or JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of the 10 folds to run.
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_enum)]
    prune: Option<PruneArg>,
    #[arg(long)]
    lossy_levels: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    states: Option<usize>,
    /// Directory with TUDataset files for real-world datasets.
    #[arg(long, env = "DTGNN_TU_DIR")]
    data_dir: Option<PathBuf>,
}

impl ExpArgs {
    fn config(&self, out: &Path) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.dataset {
            c.dataset = d.clone();
        }
        c.seed = self.seed.unwrap_or(c.seed);
        c.folds = self.folds.unwrap_or(c.folds);
        if let Some(p) = self.prune {
            c.prune = p.criterion();
        }
        c.lossy_levels = self.lossy_levels.unwrap_or(c.lossy_levels);
        c.model.epochs = self.epochs.or(c.model.epochs);
        c.model.layers = self.layers.or(c.model.layers);
        c.model.states = self.states.or(c.model.states);
        if self.data_dir.is_some() {
            c.data_dir = self.data_dir.clone();
        }
        c.out = Some(out.to_path_buf());
        c.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as JSON (and TUDataset files for graph tasks).
    Datagen {
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// TOML or JSON generator config, instead of a named benchmark.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prepare a run directory and train the differentiable model on every fold.
    Train {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distill the trained models of a run into decision trees.
    Distill {
        #[arg(long)]
        out: PathBuf,
    },
    /// Prune the distilled trees of a run.
    Prune {
        #[arg(long, value_enum)]
        prune: Option<PruneArg>,
        #[arg(long)]
        lossy_levels: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write `report.json` and `report.txt` for a run and print the table.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the inspector bundle of one fold.
    Bundle {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Minimum number of bundled targets.
        #[arg(long, default_value_t = 5)]
        targets: usize,
    },
    /// Print node importances for one prediction of a pruned model.
    Explain {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        graph: usize,
        /// Target node (node tasks).
        #[arg(long)]
        node: Option<usize>,
        /// Pruning level of the schedule; 0 is the lossless model.
        #[arg(long, default_value_t = 0)]
        level: usize,
        /// Class to explain; defaults to the model's prediction.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// All stages, the report and the fold-0 bundle in one go.
    Run {
        #[command(flatten)]
        exp: ExpArgs,
        /// Also retrain with the capacity the trees used.
        #[arg(long)]
        shrink: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    dtgnn::exec::init_workers_from_env();
    let cli = Cli::parse();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match dispatch(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command, exec: Exec) -> Result<()> {
    match command {
        Command::Datagen { dataset, seed, config, out } => datagen(dataset, seed, config, &out),
        Command::Train { exp, out } => {
            let mut e = Experiment::prepare(&exp.config(&out)?)?;
            e.train(exec)?;
            e.save(&out)
        }
        Command::Distill { out } => {
            let mut e = Experiment::load(&out)?;
            e.distill(exec)?;
            e.save(&out)
        }
        Command::Prune { prune, lossy_levels, out } => {
            let mut e = Experiment::load(&out)?;
            if let Some(p) = prune {
                e.config.prune = p.criterion();
            }
            e.config.lossy_levels = lossy_levels.unwrap_or(e.config.lossy_levels);
            e.config.validate()?;
            e.prune(exec)?;
            e.save(&out)
        }
        Command::Report { out } => {
            let e = Experiment::load(&out)?;
            write_report(&e, &out)
        }
        Command::Bundle { out, fold, targets } => {
            let e = Experiment::load(&out)?;
            let path = out.join(format!("bundle-fold-{fold}.json"));
            export_bundle(&e, fold, targets)?.save(&path)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Explain {
            out,
            fold,
            graph,
            node,
            level,
            class,
            top,
        } => explain(&out, fold, graph, node, level, class, top),
        Command::Run { exp, shrink, out } => {
            let cfg = exp.config(&out)?;
            let (e, report) = run_experiment(&cfg, exec)?;
            e.save(&out)?;
            write_report(&e, &out)?;
            export_bundle(&e, e.folds[0].fold, 5)?.save(&out.join(format!("bundle-fold-{}.json", e.folds[0].fold)))?;
            if shrink {
                let (se, sr) = shrink_and_retrain(&cfg, &report, exec)?;
                let dir = out.join("shrunk");
                se.save(&dir)?;
                write_report(&se, &dir)?;
                write_json(&out.join("shrink.json"), &sr)?;
            }
            Ok(())
        }
    }
}

fn datagen(dataset: Option<String>, seed: u64, config: Option<PathBuf>, out: &Path) -> Result<()> {
    let ds = match (config, dataset) {
        (Some(p), _) => GeneratorConfig::from_file(&p)?.generate()?,
        (None, Some(name)) => {
            let s: Synthetic = name.parse()?;
            dtgnn::datagen::generate(s, seed)?
        }
        (None, None) => return Err(Error::Argument("pass --dataset or --config".into())),
    };
    write_json(&out.join(format!("{}.json", ds.name)), &ds)?;
    if ds.task == Task::GraphClassification {
        write_tudataset(&ds, out)?;
    }
    println!(
        "{}: {} graphs, {} nodes, {} classes",
        ds.name,
        ds.graphs.len(),
        ds.total_nodes(),
        ds.class_count
    );
    Ok(())
}

fn write_report(e: &Experiment, out: &Path) -> Result<()> {
    let report = e.report()?;
    write_json(&out.join("report.json"), &report)?;
    let text = report.to_string();
    write_atomic(&out.join("report.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn explain(out: &Path, fold: usize, graph: usize, node: Option<usize>, level: usize, class: Option<usize>, top: usize) -> Result<()> {
    let e = Experiment::load(out)?;
    let f = e
        .folds
        .iter()
        .find(|f| f.fold == fold)
        .ok_or_else(|| Error::Argument(format!("fold {fold} was not run")))?;
    let levels = &f
        .pruned
        .as_ref()
        .ok_or_else(|| Error::Config("run the prune stage first".into()))?
        .schedule
        .levels;
    let model = &levels
        .get(level)
        .ok_or_else(|| Error::Argument(format!("level {level} out of range 0..{}", levels.len())))?
        .model;
    if graph >= e.dataset.graphs.len() {
        return Err(Error::Argument(format!("graph {graph} out of range 0..{}", e.dataset.graphs.len())));
    }
    let target = match (e.dataset.task, node) {
        (Task::NodeClassification, Some(node)) => Target::Node { node },
        (Task::NodeClassification, None) => return Err(Error::Argument("node tasks need --node".into())),
        (Task::GraphClassification, _) => Target::Graph,
    };
    let batch = dtgnn::gnn::Batch::from_graphs(&e.dataset, &[graph]);
    let trace = model.forward(&batch, false);
    let predicted = match target {
        Target::Node { node } if node < batch.node_count() => trace.predictions[node],
        Target::Node { node } => return Err(Error::Argument(format!("node {node} out of range"))),
        Target::Graph => trace.predictions[0],
    };
    let class = class.unwrap_or(predicted);
    let importance = explain_prediction(model, &e.dataset, graph, target, class)?;
    println!("prediction {predicted}, explaining class {class}");
    for v in top_k(&importance, top) {
        println!("node {v:>6}  importance {:.6}", importance[v]);
    }
    Ok(())
}
