//! Variables, states, indicator features, weighted models and datasets.
//!
//! A [`Model`] is a log-linear distribution over the joint assignment of its
//! variables: `p(x) ∝ exp(Σ_r θ_r f_r(x))`, where every feature `f_r` is the
//! indicator that all of its states hold simultaneously.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-variable value counts of a model or dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VariableSchema {
    cardinalities: Arc<[usize]>,
    offsets: Arc<[usize]>,
}

impl VariableSchema {
    pub fn new(cardinalities: Vec<usize>) -> Result<Self> {
        if cardinalities.is_empty() {
            return Err(Error::Schema("a schema needs at least one variable".into()));
        }
        if let Some((k, &c)) = cardinalities.iter().enumerate().find(|(_, &c)| c < 2) {
            return Err(Error::Schema(format!(
                "variable {k} has cardinality {c}; every variable needs at least 2 values"
            )));
        }
        if cardinalities.len() > u32::MAX as usize {
            return Err(Error::Schema("too many variables".into()));
        }
        let mut offsets = Vec::with_capacity(cardinalities.len() + 1);
        let mut acc = 0usize;
        offsets.push(0);
        for &c in &cardinalities {
            acc += c;
            offsets.push(acc);
        }
        Ok(Self {
            cardinalities: cardinalities.into(),
            offsets: offsets.into(),
        })
    }

    /// `n` binary variables.
    pub fn binary(n: usize) -> Result<Self> {
        Self::new(vec![2; n])
    }

    /// Number of variables.
    pub fn len(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cardinalities.is_empty()
    }

    pub fn cardinality(&self, var: usize) -> usize {
        self.cardinalities[var]
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    /// Position of the first value of `var` in a flat, variable-major state index.
    pub fn offset(&self, var: usize) -> usize {
        self.offsets[var]
    }

    pub(crate) fn offsets(&self) -> &Arc<[usize]> {
        &self.offsets
    }

    /// Total number of (variable, value) states.
    pub fn total_states(&self) -> usize {
        self.offsets[self.len()]
    }

    pub fn flat(&self, s: State) -> usize {
        self.offsets[s.var as usize] + s.val as usize
    }

    pub fn contains(&self, s: State) -> bool {
        (s.var as usize) < self.len() && (s.val as usize) < self.cardinality(s.var as usize)
    }

    /// All states, in flat index order.
    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        self.cardinalities
            .iter()
            .enumerate()
            .flat_map(|(k, &c)| (0..c).map(move |v| State::new(k, v)))
    }
}

/// A variable taking a particular value, `X_var = val`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct State {
    pub var: u32,
    pub val: u32,
}

impl State {
    pub fn new(var: usize, val: usize) -> Self {
        Self {
            var: var as u32,
            val: val as u32,
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "X{}={}", self.var, self.val)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Unary,
    Pairwise,
    HigherOrder,
}

/// Indicator feature over one or more states on distinct variables.
///
/// States are always stored sorted by `(var, val)`, so two features over the
/// same states compare equal regardless of construction order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Feature {
    states: Box<[State]>,
}

impl Feature {
    pub fn unary(s: State) -> Self {
        Self {
            states: Box::new([s]),
        }
    }

    /// Canonicalizes an arbitrary list of states into a feature.
    pub fn new(mut states: Vec<State>) -> Result<Self> {
        states.sort_unstable();
        Self::from_canonical(states)
    }

    /// Builds a feature from states that must already be in canonical order.
    pub fn from_canonical(states: Vec<State>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Feature("a feature needs at least one state".into()));
        }
        for w in states.windows(2) {
            match w[0].var.cmp(&w[1].var) {
                Ordering::Less => {}
                Ordering::Equal => {
                    return Err(Error::Feature(format!(
                        "states {} and {} share a variable",
                        w[0], w[1]
                    )))
                }
                Ordering::Greater => {
                    return Err(Error::Feature(format!(
                        "states {} and {} are not in canonical order",
                        w[0], w[1]
                    )))
                }
            }
        }
        Ok(Self {
            states: states.into_boxed_slice(),
        })
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn arity(&self) -> usize {
        self.states.len()
    }

    pub fn kind(&self) -> FeatureKind {
        match self.states.len() {
            1 => FeatureKind::Unary,
            2 => FeatureKind::Pairwise,
            _ => FeatureKind::HigherOrder,
        }
    }

    /// Value of the indicator on a full assignment.
    pub fn fires(&self, values: &[usize]) -> bool {
        self.states
            .iter()
            .all(|s| values[s.var as usize] == s.val as usize)
    }
}

/// Canonical ordering: by arity, then lexicographically by states.
impl Ord for Feature {
    fn cmp(&self, other: &Self) -> Ordering {
        self.arity()
            .cmp(&other.arity())
            .then_with(|| self.states.cmp(&other.states))
    }
}

impl PartialOrd for Feature {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.states.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// The pairwise feature `a ∧ b` in canonical form. Self-edges are rejected.
pub fn canonical_pair(a: State, b: State) -> Result<Feature> {
    if a.var == b.var {
        return Err(Error::Feature(format!(
            "{a} and {b} are on the same variable"
        )));
    }
    let states = if a < b { vec![a, b] } else { vec![b, a] };
    Ok(Feature {
        states: states.into_boxed_slice(),
    })
}

/// Which values of each variable may appear in candidate features.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidatePolicy {
    /// Value 0 is a reference value with no features of its own.
    #[default]
    NonReference,
    /// Every value of every variable is a candidate state.
    AllValuePairs,
}

impl CandidatePolicy {
    pub fn first_value(self) -> usize {
        match self {
            CandidatePolicy::NonReference => 1,
            CandidatePolicy::AllValuePairs => 0,
        }
    }

    /// Number of candidate values of a variable with cardinality `card`.
    pub fn values_per_variable(self, card: usize) -> usize {
        card - self.first_value()
    }

    pub fn is_candidate(self, s: State) -> bool {
        s.val as usize >= self.first_value()
    }
}

/// The finite space of unary and pairwise candidate features of a schema.
#[derive(Clone, Debug)]
pub struct CandidateSpace {
    schema: VariableSchema,
    policy: CandidatePolicy,
}

impl CandidateSpace {
    pub fn policy(&self) -> CandidatePolicy {
        self.policy
    }

    /// Candidate states in flat order.
    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        let policy = self.policy;
        self.schema.states().filter(move |&s| policy.is_candidate(s))
    }

    pub fn unary(&self) -> impl Iterator<Item = Feature> + '_ {
        self.states().map(Feature::unary)
    }

    /// Pairwise candidates, in canonical order.
    pub fn pairs(&self) -> impl Iterator<Item = Feature> + '_ {
        let states: Vec<State> = self.states().collect();
        (0..states.len()).flat_map(move |i| {
            let a = states[i];
            states[i + 1..]
                .iter()
                .filter(move |b| b.var != a.var)
                .map(move |&b| Feature {
                    states: Box::new([a, b]),
                })
                .collect::<Vec<_>>()
        })
    }

    /// Unary candidates followed by pairwise candidates.
    pub fn iter(&self) -> impl Iterator<Item = Feature> + '_ {
        self.unary().chain(self.pairs())
    }

    pub fn unary_count(&self) -> u64 {
        self.per_variable().sum()
    }

    pub fn pair_count(&self) -> u64 {
        let total: u64 = self.per_variable().sum();
        let squares: u64 = self.per_variable().map(|c| c * c).sum();
        (total * total - squares) / 2
    }

    pub fn count(&self) -> u64 {
        self.unary_count() + self.pair_count()
    }

    fn per_variable(&self) -> impl Iterator<Item = u64> + '_ {
        self.schema
            .cardinalities()
            .iter()
            .map(|&c| self.policy.values_per_variable(c) as u64)
    }
}

/// Candidate feature space of `schema` under `policy`.
pub fn enumerate_candidates(schema: &VariableSchema, policy: CandidatePolicy) -> CandidateSpace {
    CandidateSpace {
        schema: schema.clone(),
        policy,
    }
}

#[derive(Debug, Default)]
struct FeatureSet {
    features: Vec<Feature>,
    index: FxHashMap<Feature, usize>,
}

/// A weighted set of features over a schema.
///
/// Features are kept in activation order so that weight vectors stay aligned
/// across feature additions; [`Model::canonical_features`] gives the sorted view.
/// Cloning is cheap: the feature list is shared.
#[derive(Clone, Debug)]
pub struct Model {
    schema: VariableSchema,
    set: Arc<FeatureSet>,
    weights: Vec<f64>,
    policy: CandidatePolicy,
}

impl Model {
    pub fn new(
        schema: VariableSchema,
        features: Vec<Feature>,
        weights: Vec<f64>,
        policy: CandidatePolicy,
    ) -> Result<Self> {
        if features.len() != weights.len() {
            return Err(Error::Model(format!(
                "{} features but {} weights",
                features.len(),
                weights.len()
            )));
        }
        let mut index = FxHashMap::default();
        index.reserve(features.len());
        for (i, f) in features.iter().enumerate() {
            check_feature(&schema, f)?;
            if index.insert(f.clone(), i).is_some() {
                return Err(Error::Model(format!("duplicate feature {f}")));
            }
        }
        check_weights(&weights)?;
        Ok(Self {
            schema,
            set: Arc::new(FeatureSet { features, index }),
            weights,
            policy,
        })
    }

    /// Model with every unary candidate at weight 0 and no pairwise features.
    pub fn init_unary(schema: VariableSchema, policy: CandidatePolicy) -> Self {
        let features: Vec<Feature> = enumerate_candidates(&schema, policy).unary().collect();
        let weights = vec![0.0; features.len()];
        Self::new(schema, features, weights, policy).expect("unary candidates are valid")
    }

    pub fn schema(&self) -> &VariableSchema {
        &self.schema
    }

    pub fn policy(&self) -> CandidatePolicy {
        self.policy
    }

    pub fn features(&self) -> &[Feature] {
        &self.set.features
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn contains(&self, f: &Feature) -> bool {
        self.set.index.contains_key(f)
    }

    pub fn index_of(&self, f: &Feature) -> Option<usize> {
        self.set.index.get(f).copied()
    }

    /// Number of features with a non-zero weight.
    pub fn active_count(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    pub fn l1_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    /// `(feature, weight)` pairs sorted canonically.
    pub fn canonical_features(&self) -> Vec<(&Feature, f64)> {
        let mut out: Vec<_> = self
            .features()
            .iter()
            .zip(self.weights.iter().copied())
            .collect();
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }

    /// Same features, new weights.
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::Model(format!(
                "expected {} weights, got {}",
                self.len(),
                weights.len()
            )));
        }
        check_weights(&weights)?;
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    /// Adds features not already present, each with weight 0.
    ///
    /// Existing weights and positions are untouched. Returns the number of
    /// features actually added alongside the new model.
    pub fn activate_features(&self, new: &[Feature]) -> Result<(Self, usize)> {
        for f in new {
            Feature::from_canonical(f.states().to_vec())?;
            check_feature(&self.schema, f)?;
        }
        let fresh: Vec<&Feature> = {
            let mut seen = FxHashMap::default();
            new.iter()
                .filter(|f| !self.contains(f) && seen.insert(*f, ()).is_none())
                .collect()
        };
        if fresh.is_empty() {
            return Ok((self.clone(), 0));
        }
        let mut features = self.set.features.clone();
        let mut index = self.set.index.clone();
        for f in &fresh {
            index.insert((*f).clone(), features.len());
            features.push((*f).clone());
        }
        let mut weights = self.weights.clone();
        weights.resize(features.len(), 0.0);
        Ok((
            Self {
                schema: self.schema.clone(),
                set: Arc::new(FeatureSet { features, index }),
                weights,
                policy: self.policy,
            },
            fresh.len(),
        ))
    }

    /// `θᵀ f(x)` for a full assignment.
    pub fn score(&self, values: &[usize]) -> f64 {
        self.features()
            .iter()
            .zip(&self.weights)
            .filter(|(f, _)| f.fires(values))
            .map(|(_, w)| w)
            .sum()
    }
}

fn check_feature(schema: &VariableSchema, f: &Feature) -> Result<()> {
    for s in f.states() {
        if !schema.contains(*s) {
            return Err(Error::Feature(format!("{s} is outside the schema")));
        }
    }
    Ok(())
}

fn check_weights(weights: &[f64]) -> Result<()> {
    match weights.iter().position(|w| !w.is_finite()) {
        Some(i) => Err(Error::Model(format!("weight {i} is not finite"))),
        None => Ok(()),
    }
}

/// One sample: a value per variable plus a mask of variables treated as hidden.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub values: Vec<usize>,
    pub hidden: Vec<bool>,
}

impl Instance {
    /// Fully observed instance.
    pub fn observed(values: Vec<usize>) -> Self {
        let hidden = vec![false; values.len()];
        Self { values, hidden }
    }

    pub fn hidden_count(&self) -> usize {
        self.hidden.iter().filter(|h| **h).count()
    }

    fn check(&self, schema: &VariableSchema, index: usize) -> Result<()> {
        let fail = |reason: String| Error::Instance { index, reason };
        if self.values.len() != schema.len() {
            return Err(fail(format!(
                "{} values for {} variables",
                self.values.len(),
                schema.len()
            )));
        }
        if self.hidden.len() != schema.len() {
            return Err(fail(format!(
                "hidden mask has length {} for {} variables",
                self.hidden.len(),
                schema.len()
            )));
        }
        for (k, &v) in self.values.iter().enumerate() {
            if v >= schema.cardinality(k) {
                return Err(fail(format!(
                    "value {v} of variable {k} exceeds cardinality {}",
                    schema.cardinality(k)
                )));
            }
        }
        Ok(())
    }
}

/// Instances sharing one schema.
#[derive(Clone, Debug)]
pub struct Dataset {
    schema: VariableSchema,
    instances: Vec<Instance>,
}

impl Dataset {
    pub fn new(schema: VariableSchema, instances: Vec<Instance>) -> Result<Self> {
        for (i, inst) in instances.iter().enumerate() {
            inst.check(&schema, i)?;
        }
        Ok(Self { schema, instances })
    }

    pub fn schema(&self) -> &VariableSchema {
        &self.schema
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Copy of the dataset with each instance's hidden mask replaced.
    pub fn with_hidden(&self, masks: &[Vec<bool>]) -> Result<Self> {
        if masks.len() != self.len() {
            return Err(Error::Config(format!(
                "{} masks for {} instances",
                masks.len(),
                self.len()
            )));
        }
        let instances = self
            .instances
            .iter()
            .zip(masks)
            .map(|(inst, mask)| Instance {
                values: inst.values.clone(),
                hidden: mask.clone(),
            })
            .collect();
        Self::new(self.schema.clone(), instances)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(var: usize, val: usize) -> State {
        State::new(var, val)
    }

    #[test]
    fn canonical_pair_sorts_states() {
        let f = canonical_pair(s(3, 1), s(1, 0)).unwrap();
        assert_eq!(f.states(), &[s(1, 0), s(3, 1)]);
        let g = canonical_pair(s(0, 1), s(5, 1)).unwrap();
        assert_eq!(g.states(), &[s(0, 1), s(5, 1)]);
        assert_eq!(g.kind(), FeatureKind::Pairwise);
    }

    #[test]
    fn canonical_pair_rejects_same_variable() {
        assert!(canonical_pair(s(2, 0), s(2, 1)).is_err());
    }

    #[test]
    fn from_canonical_rejects_unsorted() {
        assert!(Feature::from_canonical(vec![s(2, 1), s(0, 1)]).is_err());
        assert!(Feature::from_canonical(vec![]).is_err());
        let f = Feature::new(vec![s(4, 1), s(0, 1), s(2, 1)]).unwrap();
        assert_eq!(f.kind(), FeatureKind::HigherOrder);
        assert_eq!(f.states()[0], s(0, 1));
    }

    #[test]
    fn candidate_counts_match_known_sizes() {
        let big = enumerate_candidates(&VariableSchema::binary(1000).unwrap(), Default::default());
        assert_eq!(big.pair_count(), 499_500);
        let animal = enumerate_candidates(&VariableSchema::binary(85).unwrap(), Default::default());
        assert_eq!(animal.pair_count(), 3_570);
        assert_eq!(animal.unary_count(), 85);
        assert_eq!(animal.count(), 3_655);
        let one = enumerate_candidates(&VariableSchema::binary(1).unwrap(), Default::default());
        assert_eq!(one.pair_count(), 0);
        assert_eq!(one.pairs().count(), 0);
    }

    #[test]
    fn candidate_count_matches_enumeration() {
        for n in 1..=50 {
            let space =
                enumerate_candidates(&VariableSchema::binary(n).unwrap(), Default::default());
            let listed = space.iter().count() as u64;
            assert_eq!(listed, space.count());
            assert_eq!(space.count(), (n + n * (n - 1) / 2) as u64);
        }
        let mixed = VariableSchema::new(vec![3, 2, 4]).unwrap();
        for policy in [CandidatePolicy::NonReference, CandidatePolicy::AllValuePairs] {
            let space = enumerate_candidates(&mixed, policy);
            assert_eq!(space.pairs().count() as u64, space.pair_count());
            assert_eq!(space.unary().count() as u64, space.unary_count());
        }
    }

    #[test]
    fn pairs_come_out_canonical_and_sorted() {
        let schema = VariableSchema::new(vec![3, 3, 2]).unwrap();
        let pairs: Vec<Feature> = enumerate_candidates(&schema, Default::default())
            .pairs()
            .collect();
        let mut sorted = pairs.clone();
        sorted.sort();
        assert_eq!(pairs, sorted);
    }

    #[test]
    fn init_unary_model_shapes() {
        let m = Model::init_unary(VariableSchema::binary(3).unwrap(), Default::default());
        assert_eq!(m.len(), 3);
        assert!(m.weights().iter().all(|w| *w == 0.0));
        assert!(m.features().iter().all(|f| f.kind() == FeatureKind::Unary));

        let t = Model::init_unary(VariableSchema::new(vec![3, 3]).unwrap(), Default::default());
        assert_eq!(t.len(), 4);
        assert!(VariableSchema::new(vec![]).is_err());
        assert!(VariableSchema::new(vec![2, 1]).is_err());
    }

    #[test]
    fn activate_features_keeps_weights_and_skips_duplicates() {
        let schema = VariableSchema::binary(12).unwrap();
        let m = Model::init_unary(schema.clone(), Default::default());
        let m = m.with_weights((0..12).map(|i| i as f64).collect()).unwrap();

        let (same, added) = m.activate_features(&[]).unwrap();
        assert_eq!(added, 0);
        assert_eq!(same.weights(), m.weights());

        let (same, added) = m.activate_features(&[Feature::unary(s(3, 1))]).unwrap();
        assert_eq!(added, 0);
        assert_eq!(same.len(), m.len());

        let pairs: Vec<Feature> = enumerate_candidates(&schema, Default::default())
            .pairs()
            .take(50)
            .collect();
        let (grown, added) = m.activate_features(&pairs).unwrap();
        assert_eq!(added, 50);
        assert_eq!(grown.len(), 62);
        assert_eq!(&grown.weights()[..12], m.weights());
        assert!(grown.weights()[12..].iter().all(|w| *w == 0.0));

        let (again, added) = grown.activate_features(&pairs).unwrap();
        assert_eq!(added, 0);
        assert_eq!(again.features(), grown.features());
    }

    #[test]
    fn activate_rejects_non_canonical() {
        let m = Model::init_unary(VariableSchema::binary(3).unwrap(), Default::default());
        let bad = Feature {
            states: Box::new([s(2, 1), s(0, 1)]),
        };
        assert!(m.activate_features(&[bad]).is_err());
        let outside = Feature::unary(s(7, 1));
        assert!(m.activate_features(&[outside]).is_err());
    }

    #[test]
    fn model_rejects_bad_weights_and_duplicates() {
        let schema = VariableSchema::binary(2).unwrap();
        let f = Feature::unary(s(0, 1));
        assert!(Model::new(schema.clone(), vec![f.clone()], vec![f64::NAN], Default::default()).is_err());
        assert!(Model::new(schema.clone(), vec![f.clone(), f], vec![0.0, 0.0], Default::default()).is_err());
    }

    #[test]
    fn dataset_checks_instances() {
        let schema = VariableSchema::binary(2).unwrap();
        assert!(Dataset::new(schema.clone(), vec![Instance::observed(vec![0, 2])]).is_err());
        assert!(Dataset::new(schema.clone(), vec![Instance::observed(vec![0])]).is_err());
        assert!(Dataset::new(schema, vec![Instance::observed(vec![1, 0])]).is_ok());
    }

    proptest! {
        #[test]
        fn canonical_pair_symmetric(a in 0usize..20, av in 0usize..4, b in 0usize..20, bv in 0usize..4) {
            prop_assume!(a != b);
            let f = canonical_pair(s(a, av), s(b, bv)).unwrap();
            let g = canonical_pair(s(b, bv), s(a, av)).unwrap();
            prop_assert_eq!(&f, &g);
            let again = canonical_pair(f.states()[0], f.states()[1]).unwrap();
            prop_assert_eq!(f, again);
        }
    }
}
