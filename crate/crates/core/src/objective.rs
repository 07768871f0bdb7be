//! Contrastive-divergence objective and its gradient.
//!
//! Sign convention: training minimizes
//! `total = −Σ_i CD_i + λ1‖θ‖₁ + λ2‖θ‖²/2`, with the L1 term left to the
//! optimizer. The smooth gradient is `Σ_i (⟨f⟩_{q1} − ⟨f⟩_{q0}) + λ2 θ`.

use rayon::prelude::*;
use serde::Serialize;

use crate::mean_field::{entropy, expect_feature, BeliefTable, Marginals};
use crate::model::{Feature, Model};

/// `CD = θᵀ⟨f⟩_{q0} + H(q0) − θᵀ⟨f⟩_{q1} − H(q1)` for one instance.
pub fn cd_term(model: &Model, q0: &Marginals, q1: &Marginals) -> f64 {
    let mut linear = 0.0;
    for (f, w) in model.features().iter().zip(model.weights()) {
        linear += w * (expect_feature(f, q0) - expect_feature(f, q1));
    }
    linear + entropy(q0) - entropy(q1)
}

/// `Σ_i (⟨f_r⟩_{q1^i} − ⟨f_r⟩_{q0^i})` for every model feature, without the L2 term.
pub fn active_gradient(model: &Model, pairs: &[(Marginals, Marginals)]) -> Vec<f64> {
    model
        .features()
        .iter()
        .map(|f| {
            pairs
                .iter()
                .map(|(q0, q1)| expect_feature(f, q1) - expect_feature(f, q0))
                .sum()
        })
        .collect()
}

/// Regularized objective, split into its parts.
#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct ObjectiveValue {
    pub cd_sum: f64,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

pub fn objective_value(model: &Model, cd_sum: f64, l1: f64, l2: f64) -> ObjectiveValue {
    let theta = model.weights();
    let l1_term = l1 * theta.iter().map(|w| w.abs()).sum::<f64>();
    let l2_term = l2 * theta.iter().map(|w| w * w).sum::<f64>() / 2.0;
    ObjectiveValue {
        cd_sum,
        l1: l1_term,
        l2: l2_term,
        total: -cd_sum + l1_term + l2_term,
    }
}

/// Both belief sets of a training pass, transposed for fast feature sums.
#[derive(Clone, Debug)]
pub struct Contrast {
    pub q0: BeliefTable,
    pub q1: BeliefTable,
    /// `Σ_i H(q0^i) − H(q1^i)`.
    pub entropy_gap: f64,
}

impl Contrast {
    pub fn new(q0s: &[Marginals], q1s: &[Marginals], model: &Model) -> Self {
        let schema = model.schema();
        let entropy_gap = q0s
            .iter()
            .zip(q1s)
            .map(|(a, b)| entropy(a) - entropy(b))
            .sum();
        Self {
            q0: BeliefTable::new(schema, q0s),
            q1: BeliefTable::new(schema, q1s),
            entropy_gap,
        }
    }

    pub fn instances(&self) -> usize {
        self.q0.instances()
    }

    /// `Σ_i (⟨f⟩_{q1^i} − ⟨f⟩_{q0^i})`; for an inactive feature this is its grafting score.
    pub fn expectation_gap(&self, f: &Feature) -> f64 {
        self.q1.sum_expectation(f) - self.q0.sum_expectation(f)
    }

    /// [`active_gradient`] computed from the transposed tables.
    pub fn gradient(&self, model: &Model) -> Vec<f64> {
        model
            .features()
            .par_iter()
            .map(|f| self.expectation_gap(f))
            .collect()
    }

    /// The smooth part of the objective with both belief sets frozen.
    pub fn surrogate(&self, model: &Model, l2: f64) -> Surrogate {
        Surrogate {
            gap: self.gradient(model),
            entropy_gap: self.entropy_gap,
            l2,
        }
    }
}

/// `θ ↦ −Σ_i CD_i(θ) + λ2‖θ‖²/2` with `q0`, `q1` held fixed.
///
/// With the beliefs frozen, `−Σ CD` is linear in `θ`.
#[derive(Clone, Debug)]
pub struct Surrogate {
    gap: Vec<f64>,
    entropy_gap: f64,
    l2: f64,
}

impl Surrogate {
    pub fn dim(&self) -> usize {
        self.gap.len()
    }

    /// `Σ_i CD_i` at `theta`.
    pub fn cd_sum(&self, theta: &[f64]) -> f64 {
        -dot(theta, &self.gap) + self.entropy_gap
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        -self.cd_sum(theta) + self.l2 * dot(theta, theta) / 2.0
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.gap
            .iter()
            .zip(theta)
            .map(|(g, t)| g + self.l2 * t)
            .collect()
    }

    /// Unregularized gradient `Σ_i (⟨f⟩_{q1} − ⟨f⟩_{q0})`.
    pub fn gap(&self) -> &[f64] {
        &self.gap
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mean_field::{MeanField, MeanFieldConfig};
    use crate::model::{canonical_pair, Instance, State, VariableSchema};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s(var: usize, val: usize) -> State {
        State::new(var, val)
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize) -> Model {
        let schema = VariableSchema::binary(n).unwrap();
        let mut features = Vec::new();
        for k in 0..n {
            features.push(Feature::unary(s(k, 1)));
        }
        for a in 0..n {
            for b in a + 1..n {
                if rng.random_bool(0.5) {
                    features.push(canonical_pair(s(a, 1), s(b, 1)).unwrap());
                }
            }
        }
        let weights = features.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        Model::new(schema, features, weights, Default::default()).unwrap()
    }

    fn random_pairs(rng: &mut ChaCha8Rng, model: &Model, m: usize) -> Vec<(Marginals, Marginals)> {
        let mf = MeanField::new(model);
        let n = model.schema().len();
        (0..m)
            .map(|_| {
                let inst = Instance {
                    values: (0..n).map(|_| rng.random_range(0..2)).collect(),
                    hidden: (0..n).map(|_| rng.random_bool(0.3)).collect(),
                };
                let q0 = mf.converge(&inst, MeanFieldConfig::default()).marginals;
                let q1 = mf.cd_sweep(&q0);
                (q0, q1)
            })
            .collect()
    }

    #[test]
    fn cd_term_identical_beliefs_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(&mut rng, 5);
        let q = Marginals::uniform(m.schema());
        assert_eq!(cd_term(&m, &q, &q), 0.0);
    }

    #[test]
    fn cd_term_zero_weights_is_entropy_gap() {
        let schema = VariableSchema::binary(3).unwrap();
        let m = Model::init_unary(schema.clone(), Default::default());
        let q0 = Marginals::point_mass(&schema, &[1, 0, 1]);
        let q1 = Marginals::uniform(&schema);
        assert_abs_diff_eq!(cd_term(&m, &q0, &q1), -3.0 * 2f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn cd_term_matches_gradient_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let m = random_model(&mut rng, 6);
            for (q0, q1) in random_pairs(&mut rng, &m, 2) {
                let g = active_gradient(&m, &[(q0.clone(), q1.clone())]);
                let alt = -dot(m.weights(), &g) + entropy(&q0) - entropy(&q1);
                assert_abs_diff_eq!(cd_term(&m, &q0, &q1), alt, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_pair_gradient() {
        let schema = VariableSchema::binary(2).unwrap();
        let f = canonical_pair(s(0, 1), s(1, 1)).unwrap();
        let m = Model::new(schema.clone(), vec![f], vec![0.0], Default::default()).unwrap();
        let q0 = Marginals::from_vectors(&schema, &[vec![0.1, 0.9], vec![0.1, 0.9]]);
        let q1 = Marginals::from_vectors(&schema, &[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let g = active_gradient(&m, &[(q0.clone(), q1.clone())]);
        assert_abs_diff_eq!(g[0], -0.56, epsilon = 1e-12);
        let zero = active_gradient(&m, &[(q0.clone(), q0)]);
        assert_eq!(zero, vec![0.0]);
    }

    #[test]
    fn table_gradient_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(&mut rng, 5);
        let pairs = random_pairs(&mut rng, &m, 3);
        let (q0s, q1s): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let contrast = Contrast::new(&q0s, &q1s, &m);
        let fast = contrast.gradient(&m);
        // Recompute from raw marginal products, accumulating q1 and q0 separately.
        for (r, f) in m.features().iter().enumerate() {
            let mut plus = 0.0;
            let mut minus = 0.0;
            for (q0, q1) in &pairs {
                let mut a = 1.0;
                let mut b = 1.0;
                for st in f.states() {
                    a *= q1.var(st.var as usize)[st.val as usize];
                    b *= q0.var(st.var as usize)[st.val as usize];
                }
                plus += a;
                minus += b;
            }
            assert_abs_diff_eq!(fast[r], plus - minus, epsilon = 1e-14);
        }
        for (a, b) in fast.iter().zip(active_gradient(&m, &pairs)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn finite_differences_reproduce_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l2 = 1.0;
        let m = random_model(&mut rng, 6);
        let pairs = random_pairs(&mut rng, &m, 4);
        let grad = active_gradient(&m, &pairs);
        let total = |model: &Model| -> f64 {
            let cd: f64 = pairs.iter().map(|(a, b)| cd_term(model, a, b)).sum();
            objective_value(model, cd, 0.0, l2).total
        };
        let h = 1e-5;
        for r in 0..m.len() {
            let mut up = m.weights().to_vec();
            let mut down = m.weights().to_vec();
            up[r] += h;
            down[r] -= h;
            let fd = (total(&m.with_weights(up).unwrap()) - total(&m.with_weights(down).unwrap()))
                / (2.0 * h);
            let analytic = grad[r] + l2 * m.weights()[r];
            let rel = (fd - analytic).abs() / analytic.abs().max(1e-8);
            assert!(rel <= 1e-4 || (fd - analytic).abs() < 1e-9, "r={r}: {fd} vs {analytic}");
        }
    }

    #[test]
    fn objective_value_parts() {
        let schema = VariableSchema::binary(2).unwrap();
        let zero = Model::init_unary(schema.clone(), Default::default());
        assert_eq!(objective_value(&zero, 3.5, 2.0, 1.0).total, -3.5);
        let m = zero.with_weights(vec![0.5, -1.0]).unwrap();
        assert_eq!(objective_value(&m, 0.0, 2.0, 0.0).l1, 3.0);
        let m = zero.with_weights(vec![2.0, 0.0]).unwrap();
        assert_eq!(objective_value(&m, 0.0, 0.0, 1.0).l2, 2.0);
    }

    #[test]
    fn surrogate_matches_cd_sum_and_l2_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(&mut rng, 5);
        let pairs = random_pairs(&mut rng, &m, 3);
        let (q0s, q1s): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let sur = Contrast::new(&q0s, &q1s, &m).surrogate(&m, 0.7);
        let direct: f64 = pairs.iter().map(|(a, b)| cd_term(&m, a, b)).sum();
        assert_abs_diff_eq!(sur.cd_sum(m.weights()), direct, epsilon = 1e-12);
        let g = sur.gradient(m.weights());
        for r in 0..m.len() {
            assert_abs_diff_eq!(g[r] - sur.gap()[r], 0.7 * m.weights()[r], epsilon = 1e-12);
        }
    }
}
