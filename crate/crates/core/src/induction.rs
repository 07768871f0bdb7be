//! Scoring inactive pairwise candidates.
//!
//! Grafting scores every candidate by its exact contrastive gradient
//! `Σ_i q1(A)q1(B) − q0(A)q0(B)`. The contrastive approximation rewrites that
//! gradient in terms of per-state *errors* (`q1 − q0`) and *signals*
//! (deviation from the across-instance mean) and only accumulates terms whose
//! error and signal magnitudes pass the thresholds.

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::mean_field::{BeliefTable, Marginals};
use crate::model::{enumerate_candidates, CandidatePolicy, Feature, Model, State};
use crate::objective::Contrast;

/// Gating thresholds on `|err|` and `|ε0 + ε1| / 2`.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub err: f64,
    pub sig: f64,
}

impl Thresholds {
    pub fn new(err: f64, sig: f64) -> crate::Result<Self> {
        if !(err >= 0.0 && sig >= 0.0) {
            return Err(crate::Error::Config(format!(
                "thresholds must be non-negative, got err={err} sig={sig}"
            )));
        }
        Ok(Self { err, sig })
    }

    pub fn both(t: f64) -> crate::Result<Self> {
        Self::new(t, t)
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { err: 0.2, sig: 0.2 }
    }
}

/// Errors and signals of every candidate state in every instance.
///
/// Stored state-major: entry `(s, i)` lives at `s * instances + i`.
#[derive(Clone, Debug)]
pub struct SignalErrorTable {
    states: Vec<State>,
    instances: usize,
    err: Vec<f64>,
    eps0: Vec<f64>,
    eps1: Vec<f64>,
    mean0: Vec<f64>,
    mean1: Vec<f64>,
}

impl SignalErrorTable {
    pub fn build(q0: &BeliefTable, q1: &BeliefTable, policy: CandidatePolicy) -> Self {
        let m = q0.instances();
        assert_eq!(m, q1.instances());
        assert!(m >= 1, "need at least one instance");
        let states: Vec<State> = enumerate_candidates(q0.schema(), policy).states().collect();
        let n = states.len();
        let mut err = Vec::with_capacity(n * m);
        let mut eps0 = Vec::with_capacity(n * m);
        let mut eps1 = Vec::with_capacity(n * m);
        let mut mean0 = Vec::with_capacity(n);
        let mut mean1 = Vec::with_capacity(n);
        for &s in &states {
            let r0 = q0.row(s);
            let r1 = q1.row(s);
            let e0 = r0.iter().sum::<f64>() / m as f64;
            let e1 = r1.iter().sum::<f64>() / m as f64;
            mean0.push(e0);
            mean1.push(e1);
            for (a, b) in r0.iter().zip(r1) {
                err.push(b - a);
                eps0.push(a - e0);
                eps1.push(b - e1);
            }
        }
        Self {
            states,
            instances: m,
            err,
            eps0,
            eps1,
            mean0,
            mean1,
        }
    }

    /// Convenience constructor from per-instance marginals.
    pub fn from_marginals(q0s: &[Marginals], q1s: &[Marginals], model: &Model) -> Self {
        let t0 = BeliefTable::new(model.schema(), q0s);
        let t1 = BeliefTable::new(model.schema(), q1s);
        Self::build(&t0, &t1, model.policy())
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn instances(&self) -> usize {
        self.instances
    }

    pub fn err(&self, state: usize, instance: usize) -> f64 {
        self.err[state * self.instances + instance]
    }

    pub fn eps0(&self, state: usize, instance: usize) -> f64 {
        self.eps0[state * self.instances + instance]
    }

    pub fn eps1(&self, state: usize, instance: usize) -> f64 {
        self.eps1[state * self.instances + instance]
    }

    /// The gated signal `(ε0 + ε1) / 2`.
    pub fn signal(&self, state: usize, instance: usize) -> f64 {
        (self.eps0(state, instance) + self.eps1(state, instance)) / 2.0
    }

    pub fn mean0(&self, state: usize) -> f64 {
        self.mean0[state]
    }

    pub fn mean1(&self, state: usize) -> f64 {
        self.mean1[state]
    }

    /// `Σ_i err(s^i)`.
    pub fn error_sum(&self, state: usize) -> f64 {
        self.err[state * self.instances..(state + 1) * self.instances]
            .iter()
            .sum()
    }

    /// Every error value, state-major.
    pub fn errors(&self) -> &[f64] {
        &self.err
    }

    /// Every gated signal value, state-major.
    pub fn signals(&self) -> Vec<f64> {
        self.eps0
            .iter()
            .zip(&self.eps1)
            .map(|(a, b)| (a + b) / 2.0)
            .collect()
    }

    /// Terms dropped by the approximation for the pair of candidate states
    /// `a`, `b`: `Ē_b Σ_i err(a^i) + Ē_a Σ_i err(b^i)` with `Ē = (E0 + E1) / 2`.
    ///
    /// At zero thresholds the approximation plus this correction is the exact
    /// grafting score.
    pub fn mean_correction(&self, a: usize, b: usize) -> f64 {
        let mid = |s: usize| (self.mean0[s] + self.mean1[s]) / 2.0;
        mid(b) * self.error_sum(a) + mid(a) * self.error_sum(b)
    }
}

/// Sparse map from canonical candidate feature to its (approximate) gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreMap {
    map: FxHashMap<Feature, f64>,
}

impl ScoreMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `score`, dropping exact zeros.
    pub fn insert(&mut self, f: Feature, score: f64) {
        if score != 0.0 {
            self.map.insert(f, score);
        } else {
            self.map.remove(&f);
        }
    }

    pub fn get(&self, f: &Feature) -> f64 {
        self.map.get(f).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Feature, f64)> {
        self.map.iter().map(|(f, v)| (f, *v))
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&Feature) -> bool) {
        self.map.retain(|f, _| keep(f));
    }
}

/// Scores plus the number of `(pair, instance)` products evaluated.
#[derive(Clone, Debug, Default)]
pub struct Scored {
    pub scores: ScoreMap,
    pub accumulations: u64,
}

/// Terms of the per-instance pair gradient written with errors and signals.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct PairDecomposition {
    /// `err_A ε0_B + err_B ε0_A`.
    pub cross: f64,
    /// `err_A err_B`.
    pub err_err: f64,
    /// `err_A E0_B + err_B E0_A`.
    pub mean: f64,
    /// `(ε1_A + ε0_A)/2 · err_B + (ε1_B + ε0_B)/2 · err_A`.
    pub symmetric: f64,
    /// `cross + err_err + mean`.
    pub sum: f64,
    /// `symmetric + mean`.
    pub symmetric_sum: f64,
    /// `q1_A q1_B − q0_A q0_B`.
    pub direct: f64,
}

/// Splits `q1A·q1B − q0A·q0B` into signal, error and mean terms.
///
/// The first-step signals use the supplied means; the second-step signals
/// use the same means for `q1` (the converged-unary case, `E1 = E0`), which
/// makes both decompositions exact.
pub fn decompose_pair_gradient(q0a: f64, q0b: f64, q1a: f64, q1b: f64, e0a: f64, e0b: f64) -> PairDecomposition {
    let err_a = q1a - q0a;
    let err_b = q1b - q0b;
    let eps0_a = q0a - e0a;
    let eps0_b = q0b - e0b;
    let eps1_a = q1a - e0a;
    let eps1_b = q1b - e0b;
    let cross = err_a * eps0_b + err_b * eps0_a;
    let err_err = err_a * err_b;
    let mean = err_a * e0b + err_b * e0a;
    let symmetric = (eps1_a + eps0_a) / 2.0 * err_b + (eps1_b + eps0_b) / 2.0 * err_a;
    PairDecomposition {
        cross,
        err_err,
        mean,
        symmetric,
        sum: cross + err_err + mean,
        symmetric_sum: symmetric + mean,
        direct: q1a * q1b - q0a * q0b,
    }
}

/// Candidate pairwise features not yet in `model`, in canonical order.
pub fn inactive_pairs(model: &Model) -> Vec<Feature> {
    enumerate_candidates(model.schema(), model.policy())
        .pairs()
        .filter(|f| !model.contains(f))
        .collect()
}

/// Exact gradient of every candidate: `Σ_i ⟨f⟩_{q1^i} − ⟨f⟩_{q0^i}`.
pub fn grafting_scores(contrast: &Contrast, candidates: &[Feature]) -> Scored {
    let values: Vec<f64> = candidates
        .par_iter()
        .map(|f| contrast.expectation_gap(f))
        .collect();
    let mut scores = ScoreMap::new();
    for (f, v) in candidates.iter().zip(values) {
        scores.insert(f.clone(), v);
    }
    Scored {
        scores,
        accumulations: (candidates.len() * contrast.instances()) as u64,
    }
}

/// Per-instance gating sets: `(S_sig, S_err)` as lists of `(state, value)`.
fn gating_sets(table: &SignalErrorTable, th: Thresholds) -> Vec<(Vec<(u32, f64)>, Vec<(u32, f64)>)> {
    (0..table.instances)
        .map(|i| {
            let mut sig = Vec::new();
            let mut err = Vec::new();
            for s in 0..table.states.len() {
                let e = table.err(s, i);
                if e.abs() > th.err {
                    err.push((s as u32, e));
                }
                let g = table.signal(s, i);
                if g.abs() > th.sig {
                    sig.push((s as u32, g));
                }
            }
            (sig, err)
        })
        .collect()
}

/// Sizes of `S_sig(i)` and `S_err(i)` for every instance.
pub fn gating_sizes(table: &SignalErrorTable, th: Thresholds) -> Vec<(usize, usize)> {
    gating_sets(table, th)
        .iter()
        .map(|(s, e)| (s.len(), e.len()))
        .collect()
}

/// Sparse contrastive approximation of the candidate gradients.
///
/// For every instance and every ordered pair `A ∈ S_sig(i)`, `B ∈ S_err(i)`
/// on distinct variables, `(ε0(A)+ε1(A))/2 · err(B)` is added to the
/// canonical key of `{A, B}`. Scores for active features are included; the
/// caller filters them.
pub fn cfi_scores(table: &SignalErrorTable, th: Thresholds) -> Scored {
    let n = table.states.len();
    let sets = gating_sets(table, th);
    // Instances in which each state passes the signal gate, ascending.
    let mut sig_by_state: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (i, (sig, _)) in sets.iter().enumerate() {
        for &(s, v) in sig {
            sig_by_state[s as usize].push((i as u32, v));
        }
    }
    let vars: Vec<u32> = table.states.iter().map(|s| s.var).collect();

    let rows: Vec<(Vec<(u32, f64)>, u64)> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![0.0f64; n], vec![false; n], Vec::<u32>::new()),
            |(acc, seen, touched), a| {
                let mut count = 0u64;
                for &(i, sig_a) in &sig_by_state[a] {
                    for &(b, err_b) in &sets[i as usize].1 {
                        if vars[b as usize] == vars[a] {
                            continue;
                        }
                        let b = b as usize;
                        if !seen[b] {
                            seen[b] = true;
                            touched.push(b as u32);
                        }
                        acc[b] += sig_a * err_b;
                        count += 1;
                    }
                }
                touched.sort_unstable();
                let row: Vec<(u32, f64)> = touched
                    .iter()
                    .map(|&b| {
                        let v = acc[b as usize];
                        acc[b as usize] = 0.0;
                        seen[b as usize] = false;
                        (b, v)
                    })
                    .collect();
                touched.clear();
                (row, count)
            },
        )
        .collect();

    let mut folded: FxHashMap<(u32, u32), f64> = FxHashMap::default();
    let mut accumulations = 0u64;
    for (a, (row, count)) in rows.into_iter().enumerate() {
        accumulations += count;
        for (b, v) in row {
            let key = if (a as u32) < b { (a as u32, b) } else { (b, a as u32) };
            *folded.entry(key).or_insert(0.0) += v;
        }
    }
    let mut scores = ScoreMap::new();
    for ((a, b), v) in folded {
        let f = crate::model::canonical_pair(table.states[a as usize], table.states[b as usize])
            .expect("distinct variables");
        scores.insert(f, v);
    }
    Scored {
        scores,
        accumulations,
    }
}

/// Up to `j` features with `|score| > gate`, largest magnitude first; ties go
/// to the canonically smaller feature.
pub fn select_top(scores: &ScoreMap, j: usize, gate: f64) -> Vec<Feature> {
    let mut ranked: Vec<(&Feature, f64)> = scores.iter().filter(|(_, v)| v.abs() > gate).collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(j).map(|(f, _)| f.clone()).collect()
}

/// Per-instance gradient of a higher-order indicator, in both forms.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct HigherOrderGradient {
    /// `Π q1 − Π q0`.
    pub direct: f64,
    /// `Π (q0 + err) − Π q0`.
    pub expanded: f64,
}

pub fn higher_order_gradient(states: &[State], q0: &Marginals, q1: &Marginals) -> HigherOrderGradient {
    let p1: f64 = states.iter().map(|&s| q1.get(s)).product();
    let p0: f64 = states.iter().map(|&s| q0.get(s)).product();
    let expanded_prod: f64 = states
        .iter()
        .map(|&s| q0.get(s) + (q1.get(s) - q0.get(s)))
        .product();
    let out = HigherOrderGradient {
        direct: p1 - p0,
        expanded: expanded_prod - p0,
    };
    debug_assert!((out.direct - out.expanded).abs() <= 1e-12);
    out
}
