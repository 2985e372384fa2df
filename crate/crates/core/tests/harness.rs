use std::sync::OnceLock;

use dtgnn::harness::{
    export_bundle, run_experiment, shrink_and_retrain, voted_capacity, Experiment, ExperimentConfig, ModelBundle, Report,
    BUNDLE_SCHEMA_VERSION,
};
use dtgnn::{Error, Exec};

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::new("negative-evidence", 3);
    c.folds = 2;
    c
}

fn run() -> &'static (Experiment, Report) {
    static RUN: OnceLock<(Experiment, Report)> = OnceLock::new();
    RUN.get_or_init(|| run_experiment(&small_config(), Exec::default()).unwrap())
}

fn bundle() -> &'static ModelBundle {
    static B: OnceLock<ModelBundle> = OnceLock::new();
    B.get_or_init(|| export_bundle(&run().0, 0, 5).unwrap())
}

#[test]
fn report_has_one_row_per_fold_and_every_stage() {
    let (_, report) = run();
    assert_eq!(report.folds.len(), 2);
    assert_eq!(report.criteria.len(), 3);
    for f in &report.folds {
        assert!(f.fidelity.iter().all(|&x| x == 1.0));
        assert!(f.lossless_size <= f.unpruned_size);
        assert!(f.lossy_size <= f.lossless_size);
    }
    let text = report.to_string();
    for row in ["Diff-DT+GNN", "DT+GNN unpruned", "DT+GNN lossless", "DT+GNN lossy"] {
        assert!(text.contains(row), "{text}");
    }
}

#[test]
fn reruns_are_byte_identical_in_both_modes() {
    let (exp, report) = run();
    let (exp2, report2) = run_experiment(&small_config(), Exec::Sequential).unwrap();
    assert_eq!(serde_json::to_string(report).unwrap(), serde_json::to_string(&report2).unwrap());
    let b2 = export_bundle(&exp2, 0, 5).unwrap();
    assert_eq!(bundle().to_json().unwrap(), b2.to_json().unwrap());
    assert_eq!(exp.folds, exp2.folds);
}

#[test]
fn report_is_reproducible_from_persisted_artifacts() {
    let (exp, report) = run();
    let dir = tempfile::tempdir().unwrap();
    exp.save(dir.path()).unwrap();
    let loaded = Experiment::load(dir.path()).unwrap();
    assert_eq!(&loaded.report().unwrap(), report);
}

#[test]
fn bundle_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bundle.json");
    bundle().save(&path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let loaded = ModelBundle::load(&path).unwrap();
    loaded.save(&path).unwrap();
    assert_eq!(first, std::fs::read(&path).unwrap());
}

#[test]
fn bundle_levels_mirror_the_schedule() {
    let (exp, _) = run();
    let schedule = &exp.folds[0].pruned.as_ref().unwrap().schedule;
    let b = bundle();
    assert_eq!(b.levels.len(), schedule.levels.len());
    for (bl, sl) in b.levels.iter().zip(&schedule.levels) {
        assert_eq!((bl.percent, bl.size, bl.accuracy), (sl.percent, sl.size, sl.accuracy));
        assert_eq!(bl.model, sl.model);
    }
    assert_eq!(b.levels[0].model, exp.folds[0].pruned.as_ref().unwrap().lossless);
}

#[test]
fn bundle_has_enough_targets_and_finite_explanations() {
    let b = bundle();
    let targets: usize = b.graphs.iter().map(|g| g.targets.len()).sum();
    assert!(targets >= 5);
    for g in &b.graphs {
        for level in &g.levels {
            assert_eq!(level.explanations.len(), g.targets.len());
            for e in &level.explanations {
                assert_eq!(e.importance.len(), g.graph.node_count());
                assert!(e.importance.iter().all(|x| x.is_finite()));
            }
        }
    }
}

fn expect_schema_error(b: &ModelBundle) {
    assert!(matches!(b.validate(), Err(Error::Schema(_))), "tampered bundle validated");
}

#[test]
fn tampered_bundles_are_rejected() {
    let good = bundle();
    good.validate().unwrap();

    let mut b = good.clone();
    b.schema_version = BUNDLE_SCHEMA_VERSION + 1;
    expect_schema_error(&b);

    let mut b = good.clone();
    let s = &mut b.graphs[0].levels[0].states[1][0];
    *s = (*s + 1) % b.model_config.states;
    expect_schema_error(&b);

    let mut b = good.clone();
    b.graphs[0].levels[0].explanations[0].importance[0] = f64::NAN;
    expect_schema_error(&b);

    let mut b = good.clone();
    b.graphs[0].levels[0].paths[0][0] = vec![0, 0];
    expect_schema_error(&b);

    let mut b = good.clone();
    b.levels[0].size += 1;
    expect_schema_error(&b);

    let mut b = good.clone();
    b.graphs[0].levels.pop();
    expect_schema_error(&b);
}

#[test]
fn foreign_schema_version_is_rejected_on_load() {
    let mut v: serde_json::Value = serde_json::from_str(&bundle().to_json().unwrap()).unwrap();
    v["schema_version"] = serde_json::json!(BUNDLE_SCHEMA_VERSION + 1);
    let text = serde_json::to_string(&v).unwrap();
    assert!(matches!(ModelBundle::from_json(&text), Err(Error::Schema(_))));
    assert!(ModelBundle::from_json("{}").is_err());
}

#[test]
fn graph_task_bundle_picks_small_graphs_of_every_class() {
    let mut c = ExperimentConfig::new("ba-2motifs", 0);
    c.folds = 1;
    c.model.epochs = Some(20);
    let (exp, _) = run_experiment(&c, Exec::default()).unwrap();
    let b = export_bundle(&exp, 0, 5).unwrap();
    assert!(b.graphs.len() >= 5);
    for g in &b.graphs {
        assert_eq!(g.targets.len(), 1);
        assert_eq!(g.levels[0].predictions.len(), 1);
        assert_eq!(g.targets[0].prediction, g.levels[0].predictions[0]);
    }
    let labels: std::collections::BTreeSet<usize> = b.graphs.iter().map(|g| g.targets[0].label).collect();
    assert_eq!(labels.len(), 2);
}

#[test]
fn negative_evidence_shrinks_to_one_layer_three_states() {
    let mut c = small_config();
    c.model.layers = Some(5);
    c.model.states = Some(10);
    let (_, full) = run_experiment(&c, Exec::default()).unwrap();
    let (_, shrink) = shrink_and_retrain(&c, &full, Exec::default()).unwrap();
    assert_eq!(voted_capacity(&full), Some((1, 3)));
    assert_eq!(shrink.capacity, (1, 3));
    assert_eq!((shrink.shrunk.layers, shrink.shrunk.states), (1, 3));
    assert!((shrink.shrunk.lossless_accuracy.mean - full.lossless_accuracy.mean).abs() <= 0.02);
}

#[test]
fn bundled_house_graph_path_ends_in_a_house_leaf() {
    // class 0 of BA-2Motifs is the house motif
    let mut c = ExperimentConfig::new("ba-2motifs", 0);
    c.folds = 1;
    let (exp, _) = run_experiment(&c, Exec::default()).unwrap();
    let b = export_bundle(&exp, 0, 5).unwrap();
    let house = b
        .graphs
        .iter()
        .find(|g| g.targets[0].label == 0 && g.targets[0].correct())
        .expect("a correctly classified house graph is bundled");
    let model = &b.levels[0].model;
    let decoder_paths = house.levels[0].paths.last().unwrap();
    let leaf = *decoder_paths[0].last().unwrap();
    assert!(model.decoder.nodes[leaf].is_leaf());
    assert_eq!(model.decoder.nodes[leaf].majority(), 0);

    let ds = dtgnn::datagen::generate(dtgnn::datagen::Synthetic::Ba2Motifs, 0).unwrap();
    let batch = dtgnn::gnn::Batch::from_graphs(&ds, &[house.index]);
    let trace = model.forward(&batch, true);
    assert_eq!(trace.paths.unwrap().last().unwrap()[0], decoder_paths[0]);
    assert_eq!(trace.predictions, vec![0]);
}
