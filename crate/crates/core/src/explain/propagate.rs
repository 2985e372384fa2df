//! The σ, μ and δ terms that carry explanations from layer `l` to layer `l + 1`.
//!
//! Floating-point order is part of the contract: every vector element is accumulated
//! from 0.0 over states (or state pairs) in ascending layout order, group sums add
//! members in ascending node order, and the layer explanation is `(σ + μ) + δ`.

use crate::distill::delta_offset;

/// Explanation vectors `e_(v,s)` of length `len` for the nodes computed so far.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplanationMatrix {
    pub len: usize,
    pub states: usize,
    entries: Vec<Option<Vec<f64>>>,
}

impl ExplanationMatrix {
    pub fn empty(nodes: usize, len: usize, states: usize) -> Self {
        ExplanationMatrix {
            len,
            states,
            entries: vec![None; nodes],
        }
    }

    /// Base case: `e_(v,t)` is the one-hot vector of `v` for every `t`.
    pub fn base(nodes: usize, states: usize, computed: &[usize]) -> Self {
        let mut e = Self::empty(nodes, nodes, states);
        for &v in computed {
            let mut data = vec![0.0; states * nodes];
            for t in 0..states {
                data[t * nodes + v] = 1.0;
            }
            e.entries[v] = Some(data);
        }
        e
    }

    pub fn node_count(&self) -> usize {
        self.entries.len()
    }

    pub fn is_computed(&self, v: usize) -> bool {
        self.entries[v].is_some()
    }

    /// `e_(v,s)`. Panics when `v` was not computed.
    pub fn get(&self, v: usize, s: usize) -> &[f64] {
        let data = self.entries[v].as_ref().expect("explanation computed for node");
        &data[s * self.len..(s + 1) * self.len]
    }

    /// Stores the `states x len` vectors of `v`.
    pub fn set(&mut self, v: usize, data: Vec<f64>) {
        assert_eq!(data.len(), self.states * self.len, "explanation block size");
        self.entries[v] = Some(data);
    }

    pub fn computed(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().enumerate().filter_map(|(v, e)| e.as_ref().map(|_| v))
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().flatten().all(|d| d.iter().all(|x| x.is_finite()))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        for d in out.entries.iter_mut().flatten() {
            d.iter_mut().for_each(|x| *x *= c);
        }
        out
    }
}

/// `+1` if the node is in state `s`, `-1` otherwise.
#[inline]
pub fn sign(state: usize, s: usize) -> f64 {
    if state == s {
        1.0
    } else {
        -1.0
    }
}

/// `+1` if `count(s) > count(s')`, `-1` otherwise (ties included).
#[inline]
pub fn indicator(count_s: usize, count_other: usize) -> f64 {
    if count_s > count_other {
        1.0
    } else {
        -1.0
    }
}

/// Nodes of `members` grouped by their state, keeping the given order inside a group.
pub fn group_by_state(members: &[usize], states: &[usize], state_count: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); state_count];
    for &w in members {
        groups[states[w]].push(w);
    }
    groups
}

/// `G_s = Σ_{w ∈ groups[s]} e_(w,s)` for every state.
pub fn group_sums(groups: &[Vec<usize>], e: &ExplanationMatrix) -> Vec<Vec<f64>> {
    groups
        .iter()
        .enumerate()
        .map(|(s, members)| {
            let mut sum = vec![0.0; e.len];
            for &w in members {
                for (acc, x) in sum.iter_mut().zip(e.get(w, s)) {
                    *acc += x;
                }
            }
            sum
        })
        .collect()
}

#[inline]
fn axpy(out: &mut [f64], c: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += c * v;
    }
}

/// `σ += Σ_s (I_S[s] · sign(s)) · e_(v,s)`.
pub fn sigma(importance: &[f64], state: usize, e: &ExplanationMatrix, v: usize, out: &mut [f64]) {
    for (s, &imp) in importance.iter().enumerate() {
        if imp != 0.0 {
            axpy(out, imp * sign(state, s), e.get(v, s));
        }
    }
}

/// `μ += Σ_s I_M[s] · (G_s / |N_s|)`; empty groups add nothing.
pub fn mu(importance: &[f64], sizes: &[usize], sums: &[Vec<f64>], out: &mut [f64]) {
    for (s, &imp) in importance.iter().enumerate() {
        if imp != 0.0 && sizes[s] > 0 {
            let n = sizes[s] as f64;
            for (o, g) in out.iter_mut().zip(&sums[s]) {
                *o += imp * (g / n);
            }
        }
    }
}

/// `δ += Σ_{s≠s'} (I_Δ[s,s'] · 𝟙(s,s')) · ((G_s − G_s') / (|N_s| + |N_s'|))`; pairs of
/// empty groups add nothing.
pub fn delta(importance: &[f64], sizes: &[usize], sums: &[Vec<f64>], out: &mut [f64]) {
    let states = sizes.len();
    for s in 0..states {
        for other in (0..states).filter(|&o| o != s) {
            let imp = importance[delta_offset(s, other, states)];
            let denom = sizes[s] + sizes[other];
            if imp == 0.0 || denom == 0 {
                continue;
            }
            let c = imp * indicator(sizes[s], sizes[other]);
            let d = denom as f64;
            for ((o, a), b) in out.iter_mut().zip(&sums[s]).zip(&sums[other]) {
                *o += c * ((a - b) / d);
            }
        }
    }
}

/// `(σ + μ) + δ`, elementwise.
pub fn combine(sigma: &[f64], mu: &[f64], delta: &[f64]) -> Vec<f64> {
    sigma
        .iter()
        .zip(mu)
        .zip(delta)
        .map(|((s, m), d)| (s + m) + d)
        .collect()
}
