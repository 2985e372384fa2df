//! Acceptance gate: one PASS/FAIL/SKIP line per headline criterion.
//!
//! Runs the six synthetic benchmarks with the default protocol (10 folds), plus MUTAG and
//! REDDIT-BINARY when `DTGNN_TU_DIR` points at their TUDataset files. A SKIP marks a
//! criterion whose data is missing. FAIL lines are reported without failing the test run
//! unless `DTGNN_ACCEPTANCE_STRICT=1`, in which case any FAIL exits non-zero.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::gradops::{check_op, OPS};
use common::propagation::{library, oracle, random_instance};
use common::shapley::{brute_force, random_sample, random_tree};
use dtgnn::autodiff::gradcheck::TOLERANCE;
use dtgnn::distill::{DtModel, Feature, NodeKind};
use dtgnn::explain::propagate::ExplanationMatrix;
use dtgnn::explain::{tree_output, tree_shap_dense, DenseRow};
use dtgnn::harness::{export_bundle, run_experiment, Experiment, ExperimentConfig, ModelBundle, Report, TU_DIR_ENV};
use dtgnn::rng;
use dtgnn::Exec;
use rand::Rng as _;

const SYNTHETIC: [&str; 6] = ["infection", "negative-evidence", "ba-shapes", "tree-cycles", "tree-grid", "ba-2motifs"];
const SEED: u64 = 0;
const RUNTIME_LIMIT: Duration = Duration::from_secs(15 * 60);

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Line {
    status: Status,
    name: &'static str,
    detail: String,
}

fn verdict(name: &'static str, ok: bool, detail: String) -> Line {
    Line {
        status: if ok { Status::Pass } else { Status::Fail },
        name,
        detail,
    }
}

struct Run {
    experiment: Experiment,
    report: Report,
    elapsed: Duration,
}

fn run(dataset: &str) -> dtgnn::Result<Run> {
    let start = Instant::now();
    let (experiment, report) = run_experiment(&ExperimentConfig::new(dataset, SEED), Exec::default())?;
    Ok(Run {
        experiment,
        report,
        elapsed: start.elapsed(),
    })
}

fn synthetic() -> &'static BTreeMap<&'static str, Run> {
    static RUNS: OnceLock<BTreeMap<&'static str, Run>> = OnceLock::new();
    RUNS.get_or_init(|| {
        SYNTHETIC
            .iter()
            .map(|&d| {
                let r = run(d).unwrap_or_else(|e| panic!("{d}: {e}"));
                println!("{}  ({:.0}s)\n", r.report, r.elapsed.as_secs_f64());
                (d, r)
            })
            .collect()
    })
}

/// `None` when the TUDataset directory is not configured or lacks the files.
fn real(dataset: &'static str) -> Option<&'static Result<Run, String>> {
    static MUTAG: OnceLock<Option<Result<Run, String>>> = OnceLock::new();
    static REDDIT: OnceLock<Option<Result<Run, String>>> = OnceLock::new();
    let cell = if dataset == "MUTAG" { &MUTAG } else { &REDDIT };
    cell.get_or_init(|| {
        let dir = std::path::PathBuf::from(std::env::var_os(TU_DIR_ENV)?);
        if !dir.join(format!("{dataset}_A.txt")).exists() && !dir.join(dataset).join(format!("{dataset}_A.txt")).exists() {
            return None;
        }
        let r = run(dataset).map_err(|e| e.to_string());
        if let Ok(r) = &r {
            println!("{}  ({:.0}s)\n", r.report, r.elapsed.as_secs_f64());
        }
        Some(r)
    })
    .as_ref()
}

fn synthetic_accuracy() -> Line {
    let runs = synthetic();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, r) in runs {
        let rep = &r.report;
        let cols = [rep.gnn_accuracy, rep.unpruned_accuracy, rep.lossless_accuracy];
        let good = match *name {
            "negative-evidence" => cols.iter().all(|c| c.mean >= 0.99 && c.std <= 0.01),
            "tree-cycles" | "ba-2motifs" | "infection" => cols.iter().all(|c| c.mean >= 0.99),
            _ => true,
        } && r.elapsed <= RUNTIME_LIMIT;
        ok &= good;
        parts.push(format!(
            "{name} {:.3}/{:.3}/{:.3} in {:.0}s",
            cols[0].mean,
            cols[1].mean,
            cols[2].mean,
            r.elapsed.as_secs_f64()
        ));
    }
    verdict("synthetic accuracy", ok, parts.join("; "))
}

fn real_world() -> Line {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, bound) in [("MUTAG", 0.80), ("REDDIT-BINARY", 0.82)] {
        match real(name) {
            None => {
                return Line {
                    status: Status::Skip,
                    name: "real-world spot checks",
                    detail: format!("{name} not found; set {TU_DIR_ENV} to a directory with the TUDataset files"),
                }
            }
            Some(Err(e)) => {
                ok = false;
                parts.push(format!("{name} failed: {e}"));
            }
            Some(Ok(r)) => {
                let m = r.report.lossless_accuracy.mean;
                ok &= m >= bound;
                parts.push(format!("{name} lossless {m:.3} (need {bound:.2})"));
            }
        }
    }
    verdict("real-world spot checks", ok, parts.join("; "))
}

fn pruning() -> Line {
    let runs = synthetic();
    let ne = &runs["negative-evidence"].report;
    let ne_max = ne.folds.iter().map(|f| f.criteria["combined"].size).max().unwrap_or(usize::MAX);
    let reductions: Vec<f64> = runs.values().map(|r| r.report.criteria["combined"].size_reduction).collect();
    let mean_reduction = reductions.iter().sum::<f64>() / reductions.len() as f64;
    let mut drops = 0;
    let mut all: Vec<&Report> = runs.values().map(|r| &r.report).collect();
    for name in ["MUTAG", "REDDIT-BINARY"] {
        if let Some(Ok(r)) = real(name) {
            all.push(&r.report);
        }
    }
    for rep in &all {
        drops += rep.criteria["combined"].validation_drops;
    }
    let per: Vec<String> = runs
        .iter()
        .map(|(n, r)| format!("{n} {:.0}%", 100.0 * r.report.criteria["combined"].size_reduction))
        .collect();
    verdict(
        "pruning effectiveness",
        ne_max <= 8 && mean_reduction >= 0.5 && drops == 0,
        format!(
            "negative-evidence max combined size {ne_max} (need <= 8); mean reduction {:.1}% (need >= 50%: {}); combined validation drops {drops}",
            100.0 * mean_reduction,
            per.join(", ")
        ),
    )
}

fn tree_shap() -> Line {
    let mut worst_phi: f64 = 0.0;
    let mut worst_local: f64 = 0.0;
    for case in 0..200 {
        let mut r = rng::substream(21, "acceptance/treeshap", case);
        let outputs = r.random_range(2..5);
        let tree = random_tree(&mut r, 10, outputs);
        let x = random_sample(&mut r, &tree);
        let fast = tree_shap_dense(&tree, &x).expect("arity");
        let (phi, base) = brute_force(&tree, &x);
        let out = tree_output(&tree, &DenseRow::new(&tree.layout, &x).expect("arity"));
        for t in 0..outputs {
            worst_phi = worst_phi.max((fast.base[t] - base[t]).abs());
            for (f, p) in phi.iter().enumerate() {
                worst_phi = worst_phi.max((fast.get(f, t) - p[t]).abs());
            }
            let total = fast.base[t] + fast.for_target(t).iter().sum::<f64>();
            worst_local = worst_local.max((total - out[t]).abs());
        }
    }
    verdict(
        "TreeShap correctness",
        worst_phi < 1e-9 && worst_local < 1e-9,
        format!("200 trees: max |phi - oracle| {worst_phi:.1e}, max local-accuracy gap {worst_local:.1e}"),
    )
}

fn bundles() -> &'static Vec<(String, ModelBundle)> {
    static B: OnceLock<Vec<(String, ModelBundle)>> = OnceLock::new();
    B.get_or_init(|| {
        synthetic()
            .iter()
            .map(|(n, r)| (n.to_string(), export_bundle(&r.experiment, 0, 5).unwrap_or_else(|e| panic!("{n}: {e}"))))
            .collect()
    })
}

fn propagation() -> Line {
    let mut mismatches = 0;
    for case in 0..100 {
        let mut r = rng::substream(23, "acceptance/propagation", case);
        let inst = random_instance(&mut r);
        for v in 0..inst.e.len() {
            if library(&inst, v, 1.0) != oracle(&inst, v).concat() {
                mismatches += 1;
            }
        }
    }
    let e = ExplanationMatrix::base(5, 3, &[0, 1, 2, 3, 4]);
    let one_hot = (0..5).all(|v| (0..3).all(|t| e.get(v, t).iter().enumerate().all(|(i, &x)| x == if i == v { 1.0 } else { 0.0 })));
    let mut entries = 0usize;
    let mut non_finite = 0usize;
    for (_, b) in bundles() {
        for g in &b.graphs {
            for l in &g.levels {
                for ex in &l.explanations {
                    entries += ex.importance.len();
                    non_finite += ex.importance.iter().filter(|x| !x.is_finite()).count();
                }
            }
        }
    }
    verdict(
        "propagation formulas",
        mismatches == 0 && one_hot && non_finite == 0 && entries > 0,
        format!("100 instances, {mismatches} oracle mismatches; one-hot base {one_hot}; {non_finite} non-finite of {entries} bundled importances"),
    )
}

fn autodiff() -> Line {
    let mut worst = (0.0f64, "");
    for op in OPS {
        for case in 0..50 {
            let err = check_op(op, 31, case);
            if !worst.0.is_nan() && (err.is_nan() || err >= worst.0) {
                worst = (err, op);
            }
        }
    }
    verdict(
        "autodiff gradient checks",
        worst.0 < TOLERANCE,
        format!("{} ops x 50 shapes, worst relative error {:.1e} ({})", OPS.len(), worst.0, worst.1),
    )
}

/// The decoder is one reachable split on a neighbor-state count whose two leaves predict
/// different classes.
fn single_count_rule(model: &DtModel) -> Option<String> {
    let d = &model.decoder;
    let splits = d.decision_nodes();
    let [root] = splits.as_slice() else { return None };
    let NodeKind::Split {
        feature,
        if_true,
        if_false,
        ..
    } = d.nodes[*root].kind
    else {
        return None;
    };
    let count = matches!(d.layout[feature], Feature::Count { .. });
    let (a, b) = (&d.nodes[if_true], &d.nodes[if_false]);
    (count && a.is_leaf() && b.is_leaf() && a.majority() != b.majority()).then(|| d.describe_split(*root).unwrap_or_default())
}

fn qualitative() -> Line {
    let ba = &synthetic()["ba-2motifs"];
    let mut rules = Vec::new();
    let mut hits = 0;
    for f in &ba.experiment.folds {
        let lossless = &f.pruned.as_ref().expect("pruned").lossless;
        if let Some(rule) = single_count_rule(lossless) {
            hits += 1;
            rules.push(rule);
        }
    }
    let mut ok = hits >= 7;
    let mut detail = format!("BA-2Motifs single count rule on {hits}/10 folds (e.g. {})", rules.first().map_or("none", String::as_str));
    match real("MUTAG") {
        None => {
            return Line {
                status: if ok { Status::Skip } else { Status::Fail },
                name: "qualitative rules",
                detail: format!("{detail}; MUTAG part not run: set {TU_DIR_ENV}"),
            }
        }
        Some(Err(e)) => {
            ok = false;
            detail.push_str(&format!("; MUTAG failed: {e}"));
        }
        Some(Ok(m)) => {
            let mut mh = 0;
            for f in &m.experiment.folds {
                let p = f.pruned.as_ref().expect("pruned");
                if single_count_rule(&p.lossless).is_some() && p.schedule.levels[0].accuracy.train >= 0.85 {
                    mh += 1;
                }
            }
            ok &= mh >= 7;
            detail.push_str(&format!("; MUTAG count rule with train accuracy >= 0.85 on {mh}/10 folds"));
        }
    }
    verdict("qualitative rules", ok, detail)
}

fn determinism() -> Line {
    let first = &synthetic()["negative-evidence"];
    let (again, report) = run_experiment(&ExperimentConfig::new("negative-evidence", SEED), Exec::Sequential).expect("rerun");
    let same_report = serde_json::to_string(&first.report).ok() == serde_json::to_string(&report).ok();
    let b1 = bundles().iter().find(|(n, _)| n == "negative-evidence").map(|(_, b)| b.to_json().expect("json"));
    let b2 = export_bundle(&again, 0, 5).and_then(|b| b.to_json()).ok();
    let same_bundle = b1.is_some() && b1 == b2;
    verdict(
        "determinism",
        same_report && same_bundle,
        format!("negative-evidence rerun (sequential): report identical {same_report}, bundle identical {same_bundle}"),
    )
}

fn main() -> ExitCode {
    dtgnn::exec::init_workers_from_env();
    let checks: [fn() -> Line; 8] = [
        synthetic_accuracy,
        real_world,
        pruning,
        tree_shap,
        propagation,
        autodiff,
        qualitative,
        determinism,
    ];
    let mut failed = 0;
    let lines: Vec<Line> = checks.iter().map(|c| c()).collect();
    println!("acceptance summary");
    for l in &lines {
        let tag = match l.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!("{tag} {}: {}", l.name, l.detail);
    }
    println!("{failed} of {} criteria failed", lines.len());
    let strict = std::env::var("DTGNN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
