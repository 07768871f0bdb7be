//! Fully factorized mean-field inference.
//!
//! `q0` is the fixed point of sequential coordinate updates with the
//! observed variables clamped; `q1` is one further sweep over every variable
//! starting from `q0` with nothing clamped.

use std::sync::Arc;

use crate::model::{Feature, Instance, Model, State, VariableSchema};

/// Per-variable probability vectors of a fully factorized distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    offsets: Arc<[usize]>,
    probs: Vec<f64>,
    clamped: Vec<bool>,
}

impl Marginals {
    /// Uniform over every variable, nothing clamped.
    pub fn uniform(schema: &VariableSchema) -> Self {
        let mut probs = Vec::with_capacity(schema.total_states());
        for &c in schema.cardinalities() {
            probs.extend(std::iter::repeat_n(1.0 / c as f64, c));
        }
        Self {
            offsets: schema.offsets().clone(),
            probs,
            clamped: vec![false; schema.len()],
        }
    }

    /// Every variable clamped to the given assignment.
    pub fn point_mass(schema: &VariableSchema, values: &[usize]) -> Self {
        let mut m = Self::uniform(schema);
        for (k, &v) in values.iter().enumerate() {
            m.clamp(k, v);
        }
        m
    }

    /// Builds marginals from explicit per-variable vectors (unclamped).
    pub fn from_vectors(schema: &VariableSchema, vectors: &[Vec<f64>]) -> Self {
        let mut m = Self::uniform(schema);
        for (k, v) in vectors.iter().enumerate() {
            m.var_mut(k).copy_from_slice(v);
        }
        m
    }

    pub fn num_vars(&self) -> usize {
        self.clamped.len()
    }

    pub fn cardinality(&self, var: usize) -> usize {
        self.offsets[var + 1] - self.offsets[var]
    }

    pub fn var(&self, var: usize) -> &[f64] {
        &self.probs[self.offsets[var]..self.offsets[var + 1]]
    }

    pub fn var_mut(&mut self, var: usize) -> &mut [f64] {
        &mut self.probs[self.offsets[var]..self.offsets[var + 1]]
    }

    /// `μ(X_var = val)`.
    pub fn get(&self, s: State) -> f64 {
        self.probs[self.offsets[s.var as usize] + s.val as usize]
    }

    /// Flat, variable-major probability vector.
    pub fn flat(&self) -> &[f64] {
        &self.probs
    }

    pub fn is_clamped(&self, var: usize) -> bool {
        self.clamped[var]
    }

    pub fn clamp(&mut self, var: usize, value: usize) {
        let slot = self.var_mut(var);
        slot.fill(0.0);
        slot[value] = 1.0;
        self.clamped[var] = true;
    }

    pub fn unclamp_all(&mut self) {
        self.clamped.fill(false);
    }

    /// Largest absolute per-entry difference.
    pub fn max_abs_diff(&self, other: &Marginals) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `⟨f⟩_q`: product of the marginals of the feature's states.
pub fn expect_feature(f: &Feature, beliefs: &Marginals) -> f64 {
    f.states().iter().map(|&s| beliefs.get(s)).product()
}

/// Entropy in nats; clamped variables contribute nothing.
pub fn entropy(beliefs: &Marginals) -> f64 {
    (0..beliefs.num_vars())
        .filter(|&k| !beliefs.is_clamped(k))
        .map(|k| {
            -beliefs
                .var(k)
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .sum()
}

/// `F(q) = −Σ_r θ_r ⟨f_r⟩_q − H(q)`.
pub fn free_energy(model: &Model, beliefs: &Marginals) -> f64 {
    let energy: f64 = model
        .features()
        .iter()
        .zip(model.weights())
        .map(|(f, w)| w * expect_feature(f, beliefs))
        .sum();
    -energy - entropy(beliefs)
}

#[derive(Copy, Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanFieldConfig {
    pub max_sweeps: usize,
    pub tol: f64,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 100,
            tol: 1e-6,
        }
    }
}

/// Outcome of [`MeanField::converge`].
#[derive(Clone, Debug)]
pub struct Fit {
    pub marginals: Marginals,
    pub sweeps: usize,
    pub converged: bool,
}

#[derive(Copy, Clone, Debug)]
struct Incidence {
    feature: u32,
    others_start: u32,
    others_len: u32,
}

/// Feature incidence lists of a model, indexed by flat state.
#[derive(Debug)]
struct Neighborhood {
    start: Vec<usize>,
    entries: Vec<Incidence>,
    others: Vec<u32>,
}

impl Neighborhood {
    fn new(model: &Model) -> Self {
        let schema = model.schema();
        let n_states = schema.total_states();
        let mut counts = vec![0usize; n_states + 1];
        for f in model.features() {
            for &s in f.states() {
                counts[schema.flat(s) + 1] += 1;
            }
        }
        for i in 0..n_states {
            counts[i + 1] += counts[i];
        }
        let start = counts.clone();
        let mut fill = counts;
        let mut entries = vec![
            Incidence {
                feature: 0,
                others_start: 0,
                others_len: 0
            };
            start[n_states]
        ];
        let mut others = Vec::new();
        for (r, f) in model.features().iter().enumerate() {
            for &s in f.states() {
                let flat = schema.flat(s);
                let others_start = others.len() as u32;
                others.extend(
                    f.states()
                        .iter()
                        .filter(|o| o.var != s.var)
                        .map(|&o| schema.flat(o) as u32),
                );
                entries[fill[flat]] = Incidence {
                    feature: r as u32,
                    others_start,
                    others_len: f.arity() as u32 - 1,
                };
                fill[flat] += 1;
            }
        }
        Self {
            start,
            entries,
            others,
        }
    }
}

/// Mean-field inference engine bound to one model.
///
/// Building it indexes the model's features by state; the engine is then
/// read-only and can be shared across threads.
#[derive(Debug)]
pub struct MeanField<'m> {
    model: &'m Model,
    nb: Neighborhood,
}

impl<'m> MeanField<'m> {
    pub fn new(model: &'m Model) -> Self {
        Self {
            model,
            nb: Neighborhood::new(model),
        }
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    /// The coordinate update for variable `k`, written into `out`.
    ///
    /// `out[x] ∝ exp(Σ_{f_r ∋ (k,x)} θ_r Π_{other states of f_r} μ)`, evaluated
    /// with max-subtraction so large weights cannot overflow.
    pub fn update_into(&self, beliefs: &Marginals, k: usize, out: &mut [f64]) {
        let schema = self.model.schema();
        let weights = self.model.weights();
        let base = schema.offset(k);
        let probs = beliefs.flat();
        for (x, slot) in out.iter_mut().enumerate() {
            let flat = base + x;
            let mut acc = 0.0;
            for inc in &self.nb.entries[self.nb.start[flat]..self.nb.start[flat + 1]] {
                let lo = inc.others_start as usize;
                let others = &self.nb.others[lo..lo + inc.others_len as usize];
                let mut prod = weights[inc.feature as usize];
                for &o in others {
                    prod *= probs[o as usize];
                }
                acc += prod;
            }
            *slot = acc;
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in out.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in out.iter_mut() {
            *v /= z;
        }
    }

    /// The coordinate update for variable `k`.
    pub fn update_variable(&self, beliefs: &Marginals, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; beliefs.cardinality(k)];
        self.update_into(beliefs, k, &mut out);
        out
    }

    /// Updates `k` in place and returns the largest change of its vector.
    fn apply(&self, beliefs: &mut Marginals, k: usize, scratch: &mut Vec<f64>) -> f64 {
        scratch.resize(beliefs.cardinality(k), 0.0);
        self.update_into(beliefs, k, scratch);
        let slot = beliefs.var_mut(k);
        let mut delta = 0.0f64;
        for (old, new) in slot.iter_mut().zip(scratch.iter()) {
            delta = delta.max((*old - *new).abs());
            *old = *new;
        }
        delta
    }

    /// Largest change any single update of a free variable would make, without applying it.
    pub fn residual(&self, beliefs: &Marginals) -> f64 {
        let mut scratch = Vec::new();
        (0..beliefs.num_vars())
            .filter(|&k| !beliefs.is_clamped(k))
            .map(|k| {
                scratch.resize(beliefs.cardinality(k), 0.0);
                self.update_into(beliefs, k, &mut scratch);
                beliefs
                    .var(k)
                    .iter()
                    .zip(&scratch)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// `q0`: observed variables clamped to their values, hidden variables
    /// started uniform and swept in ascending order until no update would move
    /// any of them by `tol` or more.
    ///
    /// Running out of sweeps is not an error; the last iterate is returned with
    /// `converged == false`.
    pub fn converge(&self, instance: &Instance, cfg: MeanFieldConfig) -> Fit {
        let schema = self.model.schema();
        let mut q = Marginals::uniform(schema);
        for (k, (&v, &h)) in instance.values.iter().zip(&instance.hidden).enumerate() {
            if !h {
                q.clamp(k, v);
            }
        }
        let hidden: Vec<usize> = (0..schema.len()).filter(|&k| instance.hidden[k]).collect();
        if hidden.is_empty() {
            return Fit {
                marginals: q,
                sweeps: 0,
                converged: true,
            };
        }
        let mut scratch = Vec::new();
        for sweep in 1..=cfg.max_sweeps {
            let mut delta = 0.0f64;
            for &k in &hidden {
                delta = delta.max(self.apply(&mut q, k, &mut scratch));
            }
            if delta < cfg.tol && self.residual(&q) < cfg.tol {
                return Fit {
                    marginals: q,
                    sweeps: sweep,
                    converged: true,
                };
            }
        }
        Fit {
            marginals: q,
            sweeps: cfg.max_sweeps,
            converged: false,
        }
    }

    /// `q1`: one ascending sweep over every variable, starting from `q0` with
    /// all clamps released.
    pub fn cd_sweep(&self, q0: &Marginals) -> Marginals {
        let mut q = q0.clone();
        q.unclamp_all();
        let mut scratch = Vec::new();
        for k in 0..q.num_vars() {
            self.apply(&mut q, k, &mut scratch);
        }
        q
    }

    /// One ascending sweep over the unclamped variables of `beliefs`.
    pub fn sweep(&self, beliefs: &mut Marginals) -> f64 {
        let mut scratch = Vec::new();
        let mut delta = 0.0f64;
        for k in 0..beliefs.num_vars() {
            if !beliefs.is_clamped(k) {
                delta = delta.max(self.apply(beliefs, k, &mut scratch));
            }
        }
        delta
    }
}

/// Marginals of many instances transposed to state-major rows.
///
/// `row(s)[i]` is `μ_i(s)`, so sums of products over instances run over
/// contiguous memory.
#[derive(Clone, Debug)]
pub struct BeliefTable {
    schema: VariableSchema,
    instances: usize,
    data: Vec<f64>,
}

impl BeliefTable {
    pub fn new(schema: &VariableSchema, beliefs: &[Marginals]) -> Self {
        let m = beliefs.len();
        let n_states = schema.total_states();
        let mut data = vec![0.0; n_states * m];
        for (i, q) in beliefs.iter().enumerate() {
            for (s, &p) in q.flat().iter().enumerate() {
                data[s * m + i] = p;
            }
        }
        Self {
            schema: schema.clone(),
            instances: m,
            data,
        }
    }

    pub fn instances(&self) -> usize {
        self.instances
    }

    pub fn schema(&self) -> &VariableSchema {
        &self.schema
    }

    pub fn row(&self, s: State) -> &[f64] {
        self.row_flat(self.schema.flat(s))
    }

    pub fn row_flat(&self, flat: usize) -> &[f64] {
        &self.data[flat * self.instances..(flat + 1) * self.instances]
    }

    /// `Σ_i ⟨f⟩_{q_i}`, summed in ascending instance order.
    pub fn sum_expectation(&self, f: &Feature) -> f64 {
        match f.states() {
            [a] => self.row(*a).iter().sum(),
            [a, b] => self
                .row(*a)
                .iter()
                .zip(self.row(*b))
                .map(|(x, y)| x * y)
                .sum(),
            states => {
                let rows: Vec<&[f64]> = states.iter().map(|&s| self.row(s)).collect();
                (0..self.instances)
                    .map(|i| rows.iter().map(|r| r[i]).product::<f64>())
                    .sum()
            }
        }
    }
}
