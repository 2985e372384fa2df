//! Cross-validated experiments: train, distill, prune, report and bundle.
//!
//! Each fold runs in stages whose outputs are kept in [`FoldArtifacts`]; every report
//! cell is computed from those artifacts, so a persisted run can be re-reported without
//! retraining.

mod bundle;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use bundle::{export_bundle, select_representatives, BundleGraph, BundleLevel, DatasetMeta, GraphLevel, ModelBundle, Representative, BUNDLE_SCHEMA_VERSION};
pub use report::{mean_std, CriterionSummary, FoldResult, MeanStd, Report, REPORT_SCHEMA_VERSION};

use crate::datagen::{self, parse_tudataset, Synthetic};
use crate::distill::{distill, fidelity, DtModel, DEFAULT_LEAF_CAP};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gnn::{correct_count, train, Batch, DiffModel, ModelConfig};
use crate::graph::{make_folds, Dataset, FoldSplit, Unit};
use crate::prune::{lossless_prune, lossy_prune_schedule, PruneCriterion, PruneSchedule, PruneSet, Score};

/// Environment variable naming the directory with TUDataset files.
pub const TU_DIR_ENV: &str = "DTGNN_TU_DIR";

/// Optional replacements for the protocol defaults of [`ModelConfig::for_dataset`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub layers: Option<usize>,
    pub states: Option<usize>,
    pub hidden: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub temperature: Option<f64>,
    pub learning_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: String,
    /// Root seed for data generation, splits, initialization and sampling.
    pub seed: u64,
    /// Folds to run, the first `folds` of the 10-fold split.
    pub folds: usize,
    pub model: ModelOverrides,
    /// `None` keeps the unpruned trees as the lossless model.
    pub prune: Option<PruneCriterion>,
    pub lossy_levels: usize,
    /// Largest accepted test-accuracy drop for the reported lossy model.
    pub lossy_tolerance: f64,
    pub leaf_cap: usize,
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: String::new(),
            seed: 0,
            folds: crate::graph::FOLD_COUNT,
            model: ModelOverrides::default(),
            prune: Some(PruneCriterion::Combined),
            lossy_levels: 10,
            lossy_tolerance: 0.02,
            leaf_cap: DEFAULT_LEAF_CAP,
            data_dir: None,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<String>, seed: u64) -> Self {
        ExperimentConfig {
            dataset: dataset.into(),
            seed,
            ..Default::default()
        }
    }

    /// Reads a TOML or JSON config, chosen by file extension.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = read(path)?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            Ok(serde_json::from_str(&text)?)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_empty() {
            return Err(Error::Config("no dataset given".into()));
        }
        if self.folds == 0 || self.folds > crate::graph::FOLD_COUNT {
            return Err(Error::Config(format!("folds must be in 1..={}", crate::graph::FOLD_COUNT)));
        }
        if self.lossy_levels == 0 || self.leaf_cap == 0 {
            return Err(Error::Config("lossy_levels and leaf_cap must be positive".into()));
        }
        if self.lossy_tolerance.is_nan() || self.lossy_tolerance < 0.0 {
            return Err(Error::Config("lossy_tolerance must be non-negative".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, dataset: &Dataset) -> Result<ModelConfig> {
        let mut c = ModelConfig::for_dataset(dataset, self.seed);
        let o = &self.model;
        c.layers = o.layers.unwrap_or(c.layers);
        c.states = o.states.unwrap_or(c.states);
        c.hidden = o.hidden.unwrap_or(c.hidden);
        c.epochs = o.epochs.unwrap_or(c.epochs);
        c.patience = o.patience.unwrap_or(c.patience);
        c.temperature = o.temperature.unwrap_or(c.temperature);
        c.adam.learning_rate = o.learning_rate.unwrap_or(c.adam.learning_rate);
        c.validate()?;
        Ok(c)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })
}

/// Synthetic benchmarks are generated from the seed; anything else is read as a
/// TUDataset from `data_dir` or the directory in [`TU_DIR_ENV`].
pub fn resolve_dataset(name: &str, seed: u64, data_dir: Option<&Path>) -> Result<Dataset> {
    if let Ok(s) = name.parse::<Synthetic>() {
        return datagen::generate(s, seed);
    }
    let dir = match data_dir {
        Some(d) => d.to_path_buf(),
        None => std::env::var_os(TU_DIR_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config(format!("`{name}` is not synthetic; pass a data directory or set {TU_DIR_ENV}")))?,
    };
    // the usual download layout nests each dataset in its own directory
    let nested = dir.join(name);
    if nested.join(format!("{name}_A.txt")).exists() {
        return parse_tudataset(&nested, name);
    }
    parse_tudataset(&dir, name)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Argument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read(path)?)?)
}

fn units_at(units: &[Unit], ids: &[usize]) -> Vec<Unit> {
    ids.iter().map(|&i| units[i]).collect()
}

/// Units of one fold.
pub struct FoldUnits {
    pub fit: Vec<Unit>,
    pub validation: Vec<Unit>,
    pub test: Vec<Unit>,
}

impl FoldUnits {
    pub fn new(dataset: &Dataset, split: &FoldSplit) -> Self {
        let units = dataset.units();
        FoldUnits {
            fit: units_at(&units, &split.train),
            validation: units_at(&units, &split.validation),
            test: units_at(&units, &split.test),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnArtifact {
    pub model: DiffModel,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillArtifact {
    pub model: DtModel,
    pub fidelity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionRun {
    pub criterion: PruneCriterion,
    pub model: DtModel,
    pub sweeps: usize,
    pub accepted: usize,
    pub before: Score,
    pub after: Score,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneArtifact {
    /// Lossless pruning under every criterion, for comparison.
    pub criteria: Vec<CriterionRun>,
    /// The lossless model of the configured criterion (the unpruned model without one).
    pub lossless: DtModel,
    pub schedule: PruneSchedule,
}

/// Everything one fold produced. Later stages are `None` until they ran.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldArtifacts {
    pub fold: usize,
    pub split: FoldSplit,
    pub model_config: ModelConfig,
    pub gnn: Option<GnnArtifact>,
    pub distilled: Option<DistillArtifact>,
    pub pruned: Option<PruneArtifact>,
}

impl FoldArtifacts {
    pub fn new(split: FoldSplit, model_config: ModelConfig) -> Self {
        FoldArtifacts {
            fold: split.fold_index,
            split,
            model_config,
            gnn: None,
            distilled: None,
            pruned: None,
        }
    }

    pub fn file_name(fold: usize) -> String {
        format!("fold-{fold}.json")
    }

    fn need<'a, T>(stage: &'a Option<T>, what: &'static str) -> Result<&'a T> {
        stage
            .as_ref()
            .ok_or_else(|| Error::Config(format!("fold has no {what} stage output yet")))
    }

    pub fn train(&mut self, dataset: &Dataset) -> Result<()> {
        let u = FoldUnits::new(dataset, &self.split);
        let t = train(dataset, &u.fit, &u.validation, &self.model_config, self.fold as u64).map_err(|e| e.in_stage("train"))?;
        self.gnn = Some(GnnArtifact {
            model: t.model,
            epochs_run: t.epochs_run,
            best_epoch: t.best_epoch,
        });
        Ok(())
    }

    pub fn distill(&mut self, dataset: &Dataset, leaf_cap: usize, exec: Exec) -> Result<()> {
        let gnn = Self::need(&self.gnn, "train")?;
        let u = FoldUnits::new(dataset, &self.split);
        let (model, traces) = distill(&gnn.model, dataset, &u.fit, leaf_cap, exec).map_err(|e| e.in_stage("distill"))?;
        let fidelity = fidelity(&model, &traces);
        self.distilled = Some(DistillArtifact { model, fidelity });
        Ok(())
    }

    pub fn prune(&mut self, dataset: &Dataset, criterion: Option<PruneCriterion>, lossy_levels: usize, exec: Exec) -> Result<()> {
        let dt = &Self::need(&self.distilled, "distill")?.model;
        let u = FoldUnits::new(dataset, &self.split);
        let set = PruneSet::new(dataset, &u.fit, &u.validation);
        let criteria: Vec<CriterionRun> = exec.map(&PruneCriterion::ALL, |&c| {
            let out = lossless_prune(dt, &set, c);
            CriterionRun {
                criterion: c,
                model: out.model,
                sweeps: out.sweeps,
                accepted: out.accepted,
                before: out.before,
                after: out.after,
            }
        });
        let lossless = match criterion {
            Some(c) => criteria.iter().find(|r| r.criterion == c).expect("every criterion ran").model.clone(),
            None => dt.clone(),
        };
        let test = Batch::from_units(dataset, &u.test);
        let schedule = lossy_prune_schedule(&lossless, &set, &test, lossy_levels, exec).map_err(|e| e.in_stage("prune"))?;
        self.pruned = Some(PruneArtifact {
            criteria,
            lossless,
            schedule,
        });
        Ok(())
    }

    /// Report row of this fold, computed from the stored models.
    pub fn result(&self, dataset: &Dataset, lossy_tolerance: f64) -> Result<FoldResult> {
        let gnn = Self::need(&self.gnn, "train")?;
        let dist = Self::need(&self.distilled, "distill")?;
        let pr = Self::need(&self.pruned, "prune")?;
        let u = FoldUnits::new(dataset, &self.split);
        let test = Batch::from_units(dataset, &u.test);
        let trace = gnn.model.forward_eval(&test)?;
        let (c, n) = correct_count(&trace.logits, &test.targets);
        let lossy = pr.schedule.smallest_within(lossy_tolerance);
        let criteria = pr
            .criteria
            .iter()
            .map(|r| {
                (
                    r.criterion.name().to_string(),
                    report::CriterionFold {
                        size: r.model.size(),
                        test_accuracy: r.model.accuracy(&test),
                        validation_before: r.before.validation_accuracy(),
                        validation_after: r.after.validation_accuracy(),
                    },
                )
            })
            .collect::<BTreeMap<_, _>>();
        Ok(FoldResult {
            fold: self.fold,
            epochs_run: gnn.epochs_run,
            best_epoch: gnn.best_epoch,
            gnn_accuracy: c as f64 / n.max(1) as f64,
            unpruned_accuracy: dist.model.accuracy(&test),
            unpruned_size: dist.model.size(),
            fidelity: dist.fidelity.clone(),
            lossless_accuracy: pr.lossless.accuracy(&test),
            lossless_size: pr.lossless.size(),
            lossy_accuracy: lossy.accuracy.test,
            lossy_size: lossy.size,
            lossy_percent: lossy.percent,
            criteria,
            used_capacity: pr.lossless.detect_used_capacity(),
        })
    }
}

/// A finished (or partially staged) experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub model_config: ModelConfig,
    pub folds: Vec<FoldArtifacts>,
}

impl Experiment {
    /// Dataset, model config and fold splits, with no stage run yet.
    pub fn prepare(config: &ExperimentConfig) -> Result<Experiment> {
        config.validate()?;
        let dataset = resolve_dataset(&config.dataset, config.seed, config.data_dir.as_deref()).map_err(|e| e.in_stage("datagen"))?;
        let model_config = config.model_config(&dataset)?;
        let folds = make_folds(&dataset, config.seed)?
            .into_iter()
            .take(config.folds)
            .map(|s| FoldArtifacts::new(s, model_config.clone()))
            .collect();
        Ok(Experiment {
            config: config.clone(),
            dataset,
            model_config,
            folds,
        })
    }

    /// Runs `stage` on every fold, in parallel over folds when `exec` allows.
    pub fn for_each_fold<F>(&mut self, exec: Exec, stage: F) -> Result<()>
    where
        F: Fn(&mut FoldArtifacts, &Dataset) -> Result<()> + Sync + Send,
    {
        let ds = &self.dataset;
        let done = exec.map(&self.folds, |f| {
            let mut f = f.clone();
            stage(&mut f, ds).map(|_| f)
        });
        self.folds = done.into_iter().collect::<Result<_>>()?;
        Ok(())
    }

    pub fn train(&mut self, exec: Exec) -> Result<()> {
        self.for_each_fold(exec, |f, ds| f.train(ds))
    }

    pub fn distill(&mut self, exec: Exec) -> Result<()> {
        let cap = self.config.leaf_cap;
        self.for_each_fold(exec, |f, ds| f.distill(ds, cap, Exec::Sequential))
    }

    pub fn prune(&mut self, exec: Exec) -> Result<()> {
        let (c, levels) = (self.config.prune, self.config.lossy_levels);
        self.for_each_fold(exec, |f, ds| f.prune(ds, c, levels, Exec::Sequential))
    }

    pub fn report(&self) -> Result<Report> {
        let folds = self
            .folds
            .iter()
            .map(|f| f.result(&self.dataset, self.config.lossy_tolerance))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("report"))?;
        Ok(Report::new(&self.config, &self.model_config, self.config.prune, folds))
    }

    /// Saves every fold's artifacts under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("experiment.json"), &self.config)?;
        for f in &self.folds {
            write_json(&dir.join(FoldArtifacts::file_name(f.fold)), f)?;
        }
        Ok(())
    }

    /// Loads a run saved by [`Experiment::save`], regenerating or re-reading the dataset.
    pub fn load(dir: &Path) -> Result<Experiment> {
        let config: ExperimentConfig = read_json(&dir.join("experiment.json"))?;
        let mut exp = Experiment::prepare(&config)?;
        for f in exp.folds.iter_mut() {
            let path = dir.join(FoldArtifacts::file_name(f.fold));
            if path.exists() {
                *f = read_json(&path)?;
            }
        }
        Ok(exp)
    }
}

/// Trains, distills and prunes every configured fold.
pub fn run_experiment(config: &ExperimentConfig, exec: Exec) -> Result<(Experiment, Report)> {
    let mut exp = Experiment::prepare(config)?;
    exp.train(exec)?;
    exp.distill(exec)?;
    exp.prune(exec)?;
    let report = exp.report()?;
    Ok((exp, report))
}

/// Majority vote over folds; ties go to the larger value.
pub fn vote(values: &[usize]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(v, _)| v)
}

/// `(L', S')` voted over the folds' lossless models.
pub fn voted_capacity(report: &Report) -> Option<(usize, usize)> {
    let layers: Vec<usize> = report.folds.iter().map(|f| f.used_capacity.0).collect();
    let states: Vec<usize> = report.folds.iter().map(|f| f.used_capacity.1).collect();
    Some((vote(&layers)?, vote(&states)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkReport {
    pub capacity: (usize, usize),
    pub full: Report,
    pub shrunk: Report,
}

/// Reruns the experiment with the capacity its trees actually used.
pub fn shrink_and_retrain(config: &ExperimentConfig, full: &Report, exec: Exec) -> Result<(Experiment, ShrinkReport)> {
    let (layers, states) = voted_capacity(full).ok_or_else(|| Error::Argument("report has no folds".into()))?;
    let mut cfg = config.clone();
    cfg.model.layers = Some(layers);
    cfg.model.states = Some(states);
    let (exp, shrunk) = run_experiment(&cfg, exec)?;
    Ok((
        exp,
        ShrinkReport {
            capacity: (layers, states),
            full: full.clone(),
            shrunk,
        },
    ))
}
