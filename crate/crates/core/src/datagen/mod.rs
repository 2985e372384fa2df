//! Synthetic explainability benchmarks and the TUDataset on-disk format.

mod synthetic;
mod tudataset;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use synthetic::{
    balanced_binary_tree, barabasi_albert, bfs_distances, generate_ba_2motifs, generate_ba_shapes,
    generate_infection, generate_negative_evidence, generate_tree_cycles, generate_tree_grid,
    Ba2MotifsParams, BaShapesParams, InfectionParams, NegativeEvidenceParams, TreeCyclesParams,
    TreeGridParams,
    BA_SHAPES_BOTTOM, BA_SHAPES_MIDDLE, BA_SHAPES_TOP, INFECTION_FAR_CLASS, NEGATIVE_MORE_BLUE,
    NEGATIVE_MORE_RED,
};
pub use tudataset::{parse_tudataset, write_tudataset};

use crate::error::{Error, Result};
use crate::graph::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Synthetic {
    Infection,
    NegativeEvidence,
    BaShapes,
    TreeCycles,
    TreeGrid,
    #[serde(rename = "ba-2motifs")]
    Ba2Motifs,
}

impl Synthetic {
    pub const ALL: [Synthetic; 6] = [
        Synthetic::Infection,
        Synthetic::NegativeEvidence,
        Synthetic::BaShapes,
        Synthetic::TreeCycles,
        Synthetic::TreeGrid,
        Synthetic::Ba2Motifs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Synthetic::Infection => "infection",
            Synthetic::NegativeEvidence => "negative-evidence",
            Synthetic::BaShapes => "ba-shapes",
            Synthetic::TreeCycles => "tree-cycles",
            Synthetic::TreeGrid => "tree-grid",
            Synthetic::Ba2Motifs => "ba-2motifs",
        }
    }
}

impl fmt::Display for Synthetic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Synthetic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        let found = match norm.as_str() {
            "negative" => Some(Synthetic::NegativeEvidence),
            "tree-cycle" => Some(Synthetic::TreeCycles),
            "ba-2-motifs" | "ba2motifs" => Some(Synthetic::Ba2Motifs),
            _ => Synthetic::ALL.into_iter().find(|d| d.name() == norm),
        };
        found.ok_or_else(|| Error::Argument(format!("unknown synthetic dataset `{s}`")))
    }
}

/// Generator parameters, one variant per benchmark. Missing fields take the defaults,
/// which are sized to the usual published statistics of each benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dataset", rename_all = "kebab-case")]
pub enum GeneratorConfig {
    Infection(InfectionParams),
    NegativeEvidence(NegativeEvidenceParams),
    BaShapes(BaShapesParams),
    TreeCycles(TreeCyclesParams),
    TreeGrid(TreeGridParams),
    #[serde(rename = "ba-2motifs")]
    Ba2Motifs(Ba2MotifsParams),
}

impl GeneratorConfig {
    pub fn default_for(dataset: Synthetic, seed: u64) -> Self {
        match dataset {
            Synthetic::Infection => GeneratorConfig::Infection(InfectionParams { seed, ..Default::default() }),
            Synthetic::NegativeEvidence => GeneratorConfig::NegativeEvidence(NegativeEvidenceParams {
                seed,
                ..Default::default()
            }),
            Synthetic::BaShapes => GeneratorConfig::BaShapes(BaShapesParams { seed, ..Default::default() }),
            Synthetic::TreeCycles => GeneratorConfig::TreeCycles(TreeCyclesParams { seed, ..Default::default() }),
            Synthetic::TreeGrid => GeneratorConfig::TreeGrid(TreeGridParams { seed, ..Default::default() }),
            Synthetic::Ba2Motifs => GeneratorConfig::Ba2Motifs(Ba2MotifsParams { seed, ..Default::default() }),
        }
    }

    /// Reads a JSON or TOML config, chosen by file extension.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => e.into(),
        })?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            Ok(serde_json::from_str(&text)?)
        }
    }

    pub fn dataset(&self) -> Synthetic {
        match self {
            GeneratorConfig::Infection(_) => Synthetic::Infection,
            GeneratorConfig::NegativeEvidence(_) => Synthetic::NegativeEvidence,
            GeneratorConfig::BaShapes(_) => Synthetic::BaShapes,
            GeneratorConfig::TreeCycles(_) => Synthetic::TreeCycles,
            GeneratorConfig::TreeGrid(_) => Synthetic::TreeGrid,
            GeneratorConfig::Ba2Motifs(_) => Synthetic::Ba2Motifs,
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        match self {
            GeneratorConfig::Infection(p) => generate_infection(p),
            GeneratorConfig::NegativeEvidence(p) => generate_negative_evidence(p),
            GeneratorConfig::BaShapes(p) => generate_ba_shapes(p),
            GeneratorConfig::TreeCycles(p) => generate_tree_cycles(p),
            GeneratorConfig::TreeGrid(p) => generate_tree_grid(p),
            GeneratorConfig::Ba2Motifs(p) => generate_ba_2motifs(p),
        }
    }
}

/// Generates the named synthetic benchmark with default sizes.
pub fn generate(dataset: Synthetic, seed: u64) -> Result<Dataset> {
    GeneratorConfig::default_for(dataset, seed).generate()
}
