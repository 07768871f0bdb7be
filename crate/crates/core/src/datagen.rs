//! Random binary networks and Gibbs samples drawn from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{canonical_pair, CandidatePolicy, Dataset, Feature, Instance, Model, State, VariableSchema};
use crate::{Error, Result};

/// Independent random streams derived from one seed.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    Structure = 1,
    Weights = 2,
    Chain = 3,
    Splits = 4,
}

/// Generator for `phase` under `seed`.
pub fn phase_rng(seed: u64, phase: Phase) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phase as u64);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub nodes: usize,
    /// Expected number of neighbours per node.
    pub degree: f64,
    pub weight_lo: f64,
    pub weight_hi: f64,
    pub samples: usize,
    /// Full sweeps discarded before the first sample.
    pub burn_in: usize,
    /// Full sweeps between consecutive samples.
    pub thinning: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            nodes: 200,
            degree: 5.0,
            weight_lo: -5.0,
            weight_hi: 5.0,
            samples: 200,
            burn_in: 10_000,
            thinning: 1_000,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.nodes == 0 {
            return fail("need at least one node".into());
        }
        // A single node has no possible edges, so its degree is irrelevant.
        if self.nodes > 1 && !(self.degree > 0.0 && self.degree <= (self.nodes - 1) as f64) {
            return fail(format!(
                "mean degree must lie in (0, {}] for {} nodes, got {}",
                self.nodes - 1,
                self.nodes,
                self.degree
            ));
        }
        if !(self.weight_lo < self.weight_hi) || !self.weight_lo.is_finite() || !self.weight_hi.is_finite() {
            return fail(format!("weight range [{}, {}] is empty", self.weight_lo, self.weight_hi));
        }
        if self.samples == 0 {
            return fail("need at least one sample".into());
        }
        if self.burn_in == 0 || self.thinning == 0 {
            return fail("burn-in and thinning must be at least one sweep".into());
        }
        Ok(())
    }

    /// Probability that any given edge is present.
    pub fn edge_probability(&self) -> f64 {
        if self.nodes < 2 {
            0.0
        } else {
            self.degree / (self.nodes - 1) as f64
        }
    }

    /// Sweeps the chain runs to produce all samples.
    pub fn chain_length(&self) -> usize {
        self.burn_in + (self.samples - 1) * self.thinning
    }
}

/// An edge `a < b` with the weight of its `(1, 1)` feature.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct Truth {
    pub edges: Vec<Edge>,
    pub model: Model,
}

impl Truth {
    /// The pairwise features of the true network.
    pub fn pair_features(&self) -> Vec<Feature> {
        self.edges.iter().map(|e| edge_feature(e.a, e.b)).collect()
    }
}

fn edge_feature(a: usize, b: usize) -> Feature {
    canonical_pair(State::new(a, 1), State::new(b, 1)).expect("distinct nodes")
}

/// Samples an Erdős–Rényi structure and uniform edge weights.
pub fn sample_structure(spec: &SyntheticSpec) -> Result<Truth> {
    spec.validate()?;
    let p = spec.edge_probability();
    let mut structure = phase_rng(spec.seed, Phase::Structure);
    let mut weights = phase_rng(spec.seed, Phase::Weights);
    let mut edges = Vec::new();
    for a in 0..spec.nodes {
        for b in a + 1..spec.nodes {
            if structure.random_bool(p) {
                edges.push(Edge {
                    a,
                    b,
                    weight: weights.random_range(spec.weight_lo..=spec.weight_hi),
                });
            }
        }
    }
    let model = truth_model(spec.nodes, &edges)?;
    Ok(Truth { edges, model })
}

/// Binary model with zero-weight unary features plus one feature per edge.
pub fn truth_model(nodes: usize, edges: &[Edge]) -> Result<Model> {
    let schema = VariableSchema::binary(nodes)?;
    let unary = Model::init_unary(schema, CandidatePolicy::NonReference);
    let pairs: Vec<Feature> = edges.iter().map(|e| edge_feature(e.a, e.b)).collect();
    let (model, _) = unary.activate_features(&pairs)?;
    let mut w = model.weights().to_vec();
    let base = w.len() - pairs.len();
    for (k, e) in edges.iter().enumerate() {
        w[base + k] = e.weight;
    }
    model.with_weights(w)
}

/// Per-variable list of `(feature, own value, other states)`.
struct Conditionals<'m> {
    model: &'m Model,
    incident: Vec<Vec<(usize, usize)>>,
}

impl<'m> Conditionals<'m> {
    fn new(model: &'m Model) -> Self {
        let mut incident = vec![Vec::new(); model.schema().len()];
        for (r, f) in model.features().iter().enumerate() {
            for s in f.states() {
                incident[s.var as usize].push((r, s.val as usize));
            }
        }
        Self { model, incident }
    }

    /// Draws `X_k` from `P(X_k | rest)`.
    fn resample(&self, values: &mut [usize], k: usize, logits: &mut Vec<f64>, rng: &mut impl Rng) {
        let card = self.model.schema().cardinality(k);
        logits.clear();
        logits.resize(card, 0.0);
        let weights = self.model.weights();
        for &(r, v) in &self.incident[k] {
            let w = weights[r];
            if w == 0.0 {
                continue;
            }
            let others_fire = self.model.features()[r]
                .states()
                .iter()
                .all(|s| s.var as usize == k || values[s.var as usize] == s.val as usize);
            if others_fire {
                logits[v] += w;
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let mut u = rng.random::<f64>() * total;
        for (v, l) in logits.iter().enumerate() {
            u -= (l - max).exp();
            if u < 0.0 {
                values[k] = v;
                return;
            }
        }
        values[k] = card - 1;
    }
}

/// Runs a systematic-scan Gibbs chain on `truth` and records thinned samples.
pub fn gibbs_chain(truth: &Model, spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let schema = truth.schema().clone();
    let mut rng = phase_rng(spec.seed, Phase::Chain);
    let mut values: Vec<usize> = (0..schema.len())
        .map(|k| rng.random_range(0..schema.cardinality(k)))
        .collect();
    let cond = Conditionals::new(truth);
    let mut logits = Vec::new();
    let mut sweep = |values: &mut Vec<usize>, rng: &mut ChaCha8Rng| {
        for k in 0..values.len() {
            cond.resample(values, k, &mut logits, rng);
        }
    };
    let mut instances = Vec::with_capacity(spec.samples);
    for _ in 0..spec.burn_in {
        sweep(&mut values, &mut rng);
    }
    instances.push(Instance::observed(values.clone()));
    while instances.len() < spec.samples {
        for _ in 0..spec.thinning {
            sweep(&mut values, &mut rng);
        }
        instances.push(Instance::observed(values.clone()));
    }
    Dataset::new(schema, instances)
}

/// Structure, weights and samples for `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<(Truth, Dataset)> {
    let truth = sample_structure(spec)?;
    let data = gibbs_chain(&truth.model, spec)?;
    Ok((truth, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec(nodes: usize, degree: f64) -> SyntheticSpec {
        SyntheticSpec {
            nodes,
            degree,
            samples: 10,
            burn_in: 5,
            thinning: 2,
            ..Default::default()
        }
    }

    #[test]
    fn validation() {
        assert!(spec(200, 0.0).validate().is_err());
        assert!(spec(10, 10.0).validate().is_err());
        assert!(spec(1, 5.0).validate().is_ok());
        assert!(SyntheticSpec { weight_lo: 1.0, weight_hi: 1.0, ..spec(5, 2.0) }.validate().is_err());
        assert!(SyntheticSpec { thinning: 0, ..spec(5, 2.0) }.validate().is_err());
    }

    #[test]
    fn edge_probability_arithmetic() {
        assert_abs_diff_eq!(spec(200, 5.0).edge_probability(), 5.0 / 199.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spec(200, 5.0).edge_probability(), 0.02513, epsilon = 1e-5);
        let defaults = SyntheticSpec::default();
        assert_eq!(defaults.chain_length(), 10_000 + 199 * 1_000);
    }

    #[test]
    fn weights_in_range_and_unaries_zero() {
        let t = sample_structure(&SyntheticSpec { seed: 3, ..spec(60, 5.0) }).unwrap();
        assert!(!t.edges.is_empty());
        for e in &t.edges {
            assert!(e.a < e.b && (-5.0..=5.0).contains(&e.weight));
        }
        assert_eq!(t.model.len(), 60 + t.edges.len());
        assert!(t.model.weights()[..60].iter().all(|w| *w == 0.0));
    }

    #[test]
    fn single_node_has_no_edges() {
        let (t, d) = generate(&spec(1, 5.0)).unwrap();
        assert!(t.edges.is_empty());
        assert_eq!(d.len(), 10);
        assert!(d.instances().iter().all(|i| i.values.len() == 1));
    }

    #[test]
    fn same_seed_same_output() {
        let s = SyntheticSpec { seed: 11, ..spec(30, 3.0) };
        let (t1, d1) = generate(&s).unwrap();
        let (t2, d2) = generate(&s).unwrap();
        assert_eq!(t1.edges, t2.edges);
        assert_eq!(d1.instances(), d2.instances());
        let (t3, _) = generate(&SyntheticSpec { seed: 12, ..s }).unwrap();
        assert_ne!(t1.edges, t3.edges);
    }

    #[test]
    fn sample_count_and_masks() {
        let d = gibbs_chain(&sample_structure(&spec(8, 2.0)).unwrap().model, &spec(8, 2.0)).unwrap();
        assert_eq!(d.len(), 10);
        assert!(d.instances().iter().all(|i| i.hidden_count() == 0));
    }

    #[test]
    fn fair_coin_for_isolated_node() {
        let s = SyntheticSpec { samples: 10_000, burn_in: 1, thinning: 1, seed: 5, ..spec(1, 1.0) };
        let truth = truth_model(1, &[]).unwrap();
        let d = gibbs_chain(&truth, &s).unwrap();
        let ones = d.instances().iter().filter(|i| i.values[0] == 1).count() as f64 / 10_000.0;
        assert!((ones - 0.5).abs() <= 3.0 * (0.25f64 / 10_000.0).sqrt());
    }
}
