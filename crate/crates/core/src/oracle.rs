//! Exact distributions of small models by exhaustive enumeration.

use crate::mean_field::Marginals;
use crate::model::{Instance, Model, VariableSchema};
use crate::{Error, Result};

/// Largest joint state space the oracle will enumerate.
pub const MAX_STATES: u128 = 1 << 20;

/// Exact distribution over the free variables of one instance.
#[derive(Clone, Debug)]
pub struct JointTable {
    schema: VariableSchema,
    /// Values of every variable; free positions are overwritten during enumeration.
    base: Vec<usize>,
    free: Vec<usize>,
    probs: Vec<f64>,
    log_z: f64,
}

impl JointTable {
    pub fn free_vars(&self) -> &[usize] {
        &self.free
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probabilities in mixed-radix order of the free variables (first varies fastest).
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    /// Visits every joint assignment in table order.
    pub fn for_each(&self, mut f: impl FnMut(&[usize], f64)) {
        let mut values = self.base.clone();
        let mut it = Assignments::new(&self.schema, &self.free, &mut values);
        let mut idx = 0;
        while let Some(v) = it.next() {
            f(v, self.probs[idx]);
            idx += 1;
        }
    }
}

/// Mixed-radix counter over the free variables.
struct Assignments<'a> {
    radix: Vec<usize>,
    free: &'a [usize],
    values: &'a mut [usize],
    started: bool,
    done: bool,
}

impl<'a> Assignments<'a> {
    fn new(schema: &VariableSchema, free: &'a [usize], values: &'a mut [usize]) -> Self {
        for &k in free {
            values[k] = 0;
        }
        Self {
            radix: free.iter().map(|&k| schema.cardinality(k)).collect(),
            free,
            values,
            started: false,
            done: false,
        }
    }

    fn next(&mut self) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(self.values);
        }
        for (pos, &k) in self.free.iter().enumerate() {
            self.values[k] += 1;
            if self.values[k] < self.radix[pos] {
                return Some(self.values);
            }
            self.values[k] = 0;
        }
        self.done = true;
        None
    }
}

fn state_space(schema: &VariableSchema, free: &[usize]) -> Result<usize> {
    let mut n: u128 = 1;
    for &k in free {
        n = n.saturating_mul(schema.cardinality(k) as u128);
    }
    if n > MAX_STATES {
        return Err(Error::StateSpaceTooLarge {
            states: n,
            limit: MAX_STATES,
        });
    }
    Ok(n as usize)
}

/// `p(hidden | observed)` for `instance`, with observed variables clamped.
pub fn exact_conditional(model: &Model, instance: &Instance) -> Result<JointTable> {
    let free: Vec<usize> = (0..model.schema().len()).filter(|&k| instance.hidden[k]).collect();
    enumerate(model, instance.values.clone(), free)
}

/// The joint distribution with nothing clamped.
pub fn exact_joint(model: &Model) -> Result<JointTable> {
    let n = model.schema().len();
    enumerate(model, vec![0; n], (0..n).collect())
}

fn enumerate(model: &Model, mut base: Vec<usize>, free: Vec<usize>) -> Result<JointTable> {
    let schema = model.schema().clone();
    let size = state_space(&schema, &free)?;
    let mut scores = Vec::with_capacity(size);
    {
        let mut it = Assignments::new(&schema, &free, &mut base);
        while let Some(v) = it.next() {
            scores.push(model.score(v));
        }
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let log_z = max + sum.ln();
    let probs = scores.iter().map(|s| (s - log_z).exp()).collect();
    Ok(JointTable {
        schema,
        base,
        free,
        probs,
        log_z,
    })
}

/// Per-variable marginals of `table`; clamped variables get point masses.
pub fn exact_marginals(table: &JointTable) -> Vec<Vec<f64>> {
    let schema = &table.schema;
    let mut out: Vec<Vec<f64>> = (0..schema.len())
        .map(|k| {
            let mut v = vec![0.0; schema.cardinality(k)];
            v[table.base[k]] = 1.0;
            v
        })
        .collect();
    for &k in &table.free {
        out[k].iter_mut().for_each(|p| *p = 0.0);
    }
    table.for_each(|values, p| {
        for &k in &table.free {
            out[k][values[k]] += p;
        }
    });
    out
}

/// Exact marginals as [`Marginals`], with the same clamps as the table.
pub fn exact_beliefs(table: &JointTable) -> Marginals {
    let mut q = Marginals::from_vectors(&table.schema, &exact_marginals(table));
    for k in 0..table.schema.len() {
        if !table.free.contains(&k) {
            q.clamp(k, table.base[k]);
        }
    }
    q
}

/// `l = ln p(observed labels)` and its gradient in the minimization
/// convention, `⟨f⟩_free − ⟨f⟩_clamped`, so that ascending `l` means stepping
/// along the negated vector.
pub fn exact_cll_and_gradient(model: &Model, instance: &Instance) -> Result<(f64, Vec<f64>)> {
    let clamped = exact_conditional(model, instance)?;
    let free = exact_joint(model)?;
    let expect = |t: &JointTable| {
        let mut e = vec![0.0; model.len()];
        t.for_each(|values, p| {
            for (r, f) in model.features().iter().enumerate() {
                if f.fires(values) {
                    e[r] += p;
                }
            }
        });
        e
    };
    let grad = expect(&free)
        .iter()
        .zip(expect(&clamped))
        .map(|(a, b)| a - b)
        .collect();
    Ok((clamped.log_z - free.log_z, grad))
}

/// `KL(q ‖ p)` by enumeration over the table's free variables.
pub fn kl_to_exact(beliefs: &Marginals, table: &JointTable, model: &Model) -> f64 {
    let mut kl = 0.0;
    table.for_each(|values, _| {
        let q: f64 = table.free.iter().map(|&k| beliefs.var(k)[values[k]]).product();
        if q > 0.0 {
            let ln_p = model.score(values) - table.log_z;
            kl += q * (q.ln() - ln_p);
        }
    });
    kl
}

/// `KL(q ‖ p) − ln Z`, which equals the mean-field free energy of `q`.
pub fn free_energy_by_enumeration(beliefs: &Marginals, table: &JointTable, model: &Model) -> f64 {
    kl_to_exact(beliefs, table, model) - table.log_z
}
