//! Per-fold results and their aggregation into mean ± standard deviation.
//!
//! Reports hold no timings or paths so that identical runs serialize identically.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::gnn::ModelConfig;
use crate::prune::PruneCriterion;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Population mean and standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// Mean and population standard deviation; zero for an empty slice.
pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionFold {
    pub size: usize,
    pub test_accuracy: f64,
    pub validation_before: f64,
    pub validation_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Test accuracy of the differentiable model.
    pub gnn_accuracy: f64,
    pub unpruned_accuracy: f64,
    pub unpruned_size: usize,
    /// Per-block training fidelity of the distilled trees.
    pub fidelity: Vec<f64>,
    pub lossless_accuracy: f64,
    pub lossless_size: usize,
    pub lossy_accuracy: f64,
    pub lossy_size: usize,
    pub lossy_percent: usize,
    /// Lossless pruning under each criterion, keyed by criterion name.
    pub criteria: BTreeMap<String, CriterionFold>,
    /// `(L', S')` read off the lossless trees.
    pub used_capacity: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionSummary {
    pub size: MeanStd,
    pub test_accuracy: MeanStd,
    /// Mean relative size reduction against the unpruned trees.
    pub size_reduction: f64,
    /// Folds whose validation accuracy dropped under this criterion.
    pub validation_drops: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub dataset: String,
    pub seed: u64,
    pub layers: usize,
    pub states: usize,
    pub prune: Option<PruneCriterion>,
    pub lossy_tolerance: f64,
    pub gnn_accuracy: MeanStd,
    pub unpruned_accuracy: MeanStd,
    pub unpruned_size: MeanStd,
    pub lossless_accuracy: MeanStd,
    pub lossless_size: MeanStd,
    pub lossy_accuracy: MeanStd,
    pub lossy_size: MeanStd,
    pub criteria: BTreeMap<String, CriterionSummary>,
    pub folds: Vec<FoldResult>,
}

fn column(folds: &[FoldResult], f: impl Fn(&FoldResult) -> f64) -> MeanStd {
    mean_std(&folds.iter().map(f).collect::<Vec<_>>())
}

/// `1 - pruned / unpruned`, zero when nothing was there to prune.
pub fn reduction(unpruned: usize, pruned: usize) -> f64 {
    if unpruned == 0 {
        0.0
    } else {
        1.0 - pruned as f64 / unpruned as f64
    }
}

impl Report {
    pub fn new(config: &ExperimentConfig, model: &ModelConfig, prune: Option<PruneCriterion>, folds: Vec<FoldResult>) -> Report {
        let names: Vec<String> = folds.first().map(|f| f.criteria.keys().cloned().collect()).unwrap_or_default();
        let criteria = names
            .into_iter()
            .map(|name| {
                let rows: Vec<(&FoldResult, &CriterionFold)> = folds.iter().map(|f| (f, &f.criteria[&name])).collect();
                let sizes: Vec<f64> = rows.iter().map(|(_, c)| c.size as f64).collect();
                let accs: Vec<f64> = rows.iter().map(|(_, c)| c.test_accuracy).collect();
                let red: Vec<f64> = rows.iter().map(|(f, c)| reduction(f.unpruned_size, c.size)).collect();
                let summary = CriterionSummary {
                    size: mean_std(&sizes),
                    test_accuracy: mean_std(&accs),
                    size_reduction: mean_std(&red).mean,
                    validation_drops: rows.iter().filter(|(_, c)| c.validation_after < c.validation_before).count(),
                };
                (name, summary)
            })
            .collect();
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            dataset: config.dataset.clone(),
            seed: config.seed,
            layers: model.layers,
            states: model.states,
            prune,
            lossy_tolerance: config.lossy_tolerance,
            gnn_accuracy: column(&folds, |f| f.gnn_accuracy),
            unpruned_accuracy: column(&folds, |f| f.unpruned_accuracy),
            unpruned_size: column(&folds, |f| f.unpruned_size as f64),
            lossless_accuracy: column(&folds, |f| f.lossless_accuracy),
            lossless_size: column(&folds, |f| f.lossless_size as f64),
            lossy_accuracy: column(&folds, |f| f.lossy_accuracy),
            lossy_size: column(&folds, |f| f.lossy_size as f64),
            criteria,
            folds,
        }
    }

    /// Mean relative size reduction of the lossless model against the unpruned one.
    pub fn lossless_reduction(&self) -> f64 {
        let r: Vec<f64> = self.folds.iter().map(|f| reduction(f.unpruned_size, f.lossless_size)).collect();
        mean_std(&r).mean
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prune = self.prune.map_or("none", |c| c.name());
        writeln!(f, "dataset {}  seed {}  L={} S={}  prune={}  folds={}", self.dataset, self.seed, self.layers, self.states, prune, self.folds.len())?;
        writeln!(f, "{:<22} {:>17} {:>17}", "model", "test accuracy", "size")?;
        writeln!(f, "{:<22} {:>17} {:>17}", "Diff-DT+GNN", self.gnn_accuracy.to_string(), "-")?;
        let rows = [
            ("DT+GNN unpruned", self.unpruned_accuracy, self.unpruned_size),
            ("DT+GNN lossless", self.lossless_accuracy, self.lossless_size),
            ("DT+GNN lossy", self.lossy_accuracy, self.lossy_size),
        ];
        for (name, acc, size) in rows {
            writeln!(f, "{:<22} {:>17} {:>17}", name, acc.to_string(), format!("{:.1} ± {:.1}", size.mean, size.std))?;
        }
        writeln!(f, "lossless reduction {:.1}%", 100.0 * self.lossless_reduction())?;
        for (name, c) in &self.criteria {
            writeln!(
                f,
                "criterion {:<9} size {:.1} ± {:.1}  accuracy {}  reduction {:.1}%  validation drops {}",
                name,
                c.size.mean,
                c.size.std,
                c.test_accuracy,
                100.0 * c.size_reduction,
                c.validation_drops
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        let m = mean_std(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
        assert_eq!(mean_std(&[]), MeanStd { mean: 0.0, std: 0.0 });
    }

    #[test]
    fn reduction_of_empty_model_is_zero() {
        assert_eq!(reduction(0, 0), 0.0);
        assert_eq!(reduction(8, 2), 0.75);
    }
}
