//! Straight-line reimplementation of one explanation step, written directly from the
//! σ/μ/δ formulas with plain nested loops. It performs the same floating-point
//! operations in the same order as the library, so results must match exactly.

use dtgnn::explain::propagate::ExplanationMatrix;
use dtgnn::explain::{explain_node, NodeImportance};
use dtgnn::rng::Rng;
use rand::Rng as _;

/// A random instance: senders of every node, states at layer `l`, `e^l` for every node
/// as `e[w][s][i]`, and per-node importances `is[v][t][s]`, `im[v][t][s]`,
/// `id[v][t][pair]` with pairs enumerated as `(s, s')`, `s' != s`, ascending.
pub struct Instance {
    pub senders: Vec<Vec<usize>>,
    pub states: Vec<usize>,
    pub state_count: usize,
    pub e: Vec<Vec<Vec<f64>>>,
    pub is: Vec<Vec<Vec<f64>>>,
    pub im: Vec<Vec<Vec<f64>>>,
    pub id: Vec<Vec<Vec<f64>>>,
}

/// `e^{l+1}[t][i]` for node `v`.
pub fn oracle(inst: &Instance, v: usize) -> Vec<Vec<f64>> {
    let n = inst.e.len();
    let sc = inst.state_count;
    let targets = inst.is[v].len();
    let mut out = vec![vec![0.0; n]; targets];
    for t in 0..targets {
        for i in 0..n {
            let mut sigma = 0.0;
            for s in 0..sc {
                let sign = if inst.states[v] == s { 1.0 } else { -1.0 };
                sigma += (inst.is[v][t][s] * sign) * inst.e[v][s][i];
            }

            let mut mu = 0.0;
            for s in 0..sc {
                let mut total = 0.0;
                let mut size = 0usize;
                for &w in &inst.senders[v] {
                    if inst.states[w] == s {
                        total += inst.e[w][s][i];
                        size += 1;
                    }
                }
                if size > 0 {
                    mu += inst.im[v][t][s] * (total / size as f64);
                }
            }

            let mut delta = 0.0;
            let mut pair = 0;
            for s in 0..sc {
                for o in 0..sc {
                    if o == s {
                        continue;
                    }
                    let (mut a, mut na, mut b, mut nb) = (0.0, 0usize, 0.0, 0usize);
                    for &w in &inst.senders[v] {
                        if inst.states[w] == s {
                            a += inst.e[w][s][i];
                            na += 1;
                        }
                    }
                    for &w in &inst.senders[v] {
                        if inst.states[w] == o {
                            b += inst.e[w][o][i];
                            nb += 1;
                        }
                    }
                    if na + nb > 0 {
                        let ind = if na > nb { 1.0 } else { -1.0 };
                        delta += (inst.id[v][t][pair] * ind) * ((a - b) / (na + nb) as f64);
                    }
                    pair += 1;
                }
            }
            out[t][i] = (sigma + mu) + delta;
        }
    }
    out
}

fn random_importance(r: &mut Rng) -> f64 {
    if r.random_bool(0.5) {
        0.0
    } else {
        r.random_range(-1.0..1.0)
    }
}

/// Up to 7 nodes, 2 to 4 states, half of all importances zero.
pub fn random_instance(r: &mut Rng) -> Instance {
    let n = r.random_range(1..8);
    let sc = r.random_range(2..5);
    let mut senders = vec![Vec::new(); n];
    for u in 0..n {
        for w in u + 1..n {
            if r.random_bool(0.4) {
                senders[u].push(w);
                senders[w].push(u);
            }
        }
    }
    for s in &mut senders {
        s.sort_unstable();
    }
    let states = (0..n).map(|_| r.random_range(0..sc)).collect();
    let e = (0..n)
        .map(|_| (0..sc).map(|_| (0..n).map(|_| r.random_range(-2.0..2.0)).collect()).collect())
        .collect();
    let mut imp = |w: usize| -> Vec<Vec<Vec<f64>>> {
        (0..n)
            .map(|_| (0..sc).map(|_| (0..w).map(|_| random_importance(r)).collect()).collect())
            .collect()
    };
    let is = imp(sc);
    let im = imp(sc);
    let id = imp(sc * sc - sc);
    Instance {
        senders,
        states,
        state_count: sc,
        e,
        is,
        im,
        id,
    }
}

/// The library's explanation step on `inst`, with every `e` entry scaled by `scale`.
pub fn library(inst: &Instance, v: usize, scale: f64) -> Vec<f64> {
    let n = inst.e.len();
    let sc = inst.state_count;
    let mut e = ExplanationMatrix::empty(n, n, sc);
    for w in 0..n {
        e.set(w, inst.e[w].iter().flatten().map(|x| x * scale).collect());
    }
    let imp = NodeImportance {
        state: inst.is[v].concat(),
        message: inst.im[v].concat(),
        delta: inst.id[v].concat(),
        base: vec![0.0; sc],
    };
    explain_node(&imp, inst.states[v], &inst.senders[v], &inst.states, &e, v)
}
