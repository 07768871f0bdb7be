//! Hidden-label cross-validation and prediction metrics.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{phase_rng, Phase};
use crate::mean_field::{Marginals, MeanField, MeanFieldConfig};
use crate::model::{Dataset, Model};
use crate::{Error, Result};

/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Hidden masks of one fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CvSplit {
    pub fold: usize,
    pub masks: Vec<Vec<bool>>,
}

impl CvSplit {
    pub fn hidden_slots(&self) -> usize {
        self.masks.iter().flatten().filter(|h| **h).count()
    }
}

/// Partitions the `(instance, variable)` slots of `data` into `folds` random
/// groups of near-equal size; fold `k` hides group `k`.
///
/// When `fraction < 1/folds`, each fold hides only the first
/// `round(fraction · slots)` slots of its group.
pub fn make_splits(data: &Dataset, folds: usize, fraction: f64, seed: u64) -> Result<Vec<CvSplit>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    if !(fraction > 0.0 && fraction <= 1.0 / folds as f64 + 1e-9) {
        return Err(Error::Config(format!(
            "hidden fraction {fraction} must lie in (0, 1/{folds}]"
        )));
    }
    let vars = data.schema().len();
    let slots = data.len() * vars;
    let mut order: Vec<usize> = (0..slots).collect();
    order.shuffle(&mut phase_rng(seed, Phase::Splits));
    let per_fold = ((fraction * slots as f64).round() as usize).max(1);
    Ok((0..folds)
        .map(|fold| {
            let mut masks = vec![vec![false; vars]; data.len()];
            for &slot in order.iter().skip(fold).step_by(folds).take(per_fold) {
                masks[slot / vars][slot % vars] = true;
            }
            CvSplit { fold, masks }
        })
        .collect())
}

/// Clamped mean-field beliefs for every instance (hidden variables free).
pub fn posteriors(model: &Model, data: &Dataset, cfg: MeanFieldConfig) -> Vec<Marginals> {
    let mf = MeanField::new(model);
    data.instances()
        .par_iter()
        .map(|inst| mf.converge(inst, cfg).marginals)
        .collect()
}

fn require_hidden(data: &Dataset) -> Result<usize> {
    let n: usize = data.instances().iter().map(|i| i.hidden_count()).sum();
    if n == 0 {
        return Err(Error::Config("no hidden variables to evaluate".into()));
    }
    Ok(n)
}

/// Average `ln q0(true value)` per hidden slot.
pub fn cll_from_beliefs(beliefs: &[Marginals], data: &Dataset) -> Result<f64> {
    let n = require_hidden(data)?;
    let mut total = 0.0;
    for (q, inst) in beliefs.iter().zip(data.instances()) {
        for k in 0..inst.values.len() {
            if inst.hidden[k] {
                total += q.var(k)[inst.values[k]].max(PROB_FLOOR).ln();
            }
        }
    }
    Ok(total / n as f64)
}

/// Average precision over all pooled hidden states ranked by belief.
pub fn pr_auc_from_beliefs(beliefs: &[Marginals], data: &Dataset) -> Result<f64> {
    require_hidden(data)?;
    let mut items: Vec<(f64, bool)> = Vec::new();
    for (q, inst) in beliefs.iter().zip(data.instances()) {
        for k in 0..inst.values.len() {
            if inst.hidden[k] {
                for (v, &p) in q.var(k).iter().enumerate() {
                    items.push((p, v == inst.values[k]));
                }
            }
        }
    }
    Ok(average_precision(&items))
}

/// Average precision of `(score, relevant)` items; ties keep input order.
pub fn average_precision(items: &[(f64, bool)]) -> f64 {
    let mut ranked: Vec<&(f64, bool)> = items.iter().collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let relevant = items.iter().filter(|i| i.1).count();
    if relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, item) in ranked.iter().enumerate() {
        if item.1 {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    sum / relevant as f64
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (v, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = v;
        }
    }
    best
}

/// Fraction of hidden slots whose argmax belief differs from the truth.
pub fn error_rate_from_beliefs(beliefs: &[Marginals], data: &Dataset) -> Result<f64> {
    let n = require_hidden(data)?;
    let mut wrong = 0usize;
    for (q, inst) in beliefs.iter().zip(data.instances()) {
        for k in 0..inst.values.len() {
            if inst.hidden[k] && argmax(q.var(k)) != inst.values[k] {
                wrong += 1;
            }
        }
    }
    Ok(wrong as f64 / n as f64)
}

pub fn conditional_log_likelihood(model: &Model, data: &Dataset) -> Result<f64> {
    cll_from_beliefs(&posteriors(model, data, MeanFieldConfig::default()), data)
}

pub fn pr_auc(model: &Model, data: &Dataset) -> Result<f64> {
    pr_auc_from_beliefs(&posteriors(model, data, MeanFieldConfig::default()), data)
}

pub fn error_rate(model: &Model, data: &Dataset) -> Result<f64> {
    error_rate_from_beliefs(&posteriors(model, data, MeanFieldConfig::default()), data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cll: f64,
    pub auc: f64,
    pub error_rate: f64,
}

/// All three metrics from one inference pass.
pub fn evaluate(model: &Model, data: &Dataset, cfg: MeanFieldConfig) -> Result<Metrics> {
    if model.schema() != data.schema() {
        return Err(Error::SchemaMismatch(format!(
            "model cardinalities {:?} differ from data cardinalities {:?}",
            model.schema().cardinalities(),
            data.schema().cardinalities()
        )));
    }
    let q = posteriors(model, data, cfg);
    Ok(Metrics {
        cll: cll_from_beliefs(&q, data)?,
        auc: pr_auc_from_beliefs(&q, data)?,
        error_rate: error_rate_from_beliefs(&q, data)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cll: f64,
    pub auc: f64,
    pub error_rate: f64,
    pub wall_time_seconds: f64,
    pub introduced_features: usize,
    pub active_features: usize,
}

/// One histogram bin `[lo, hi)`.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Fixed-width histogram over `[lo, hi)`; out-of-range values land in the end bins.
pub fn histogram(values: &[f64], width: f64, lo: f64, hi: f64) -> Result<Vec<Bin>> {
    if !(width > 0.0 && lo < hi) {
        return Err(Error::Config(format!(
            "histogram needs width > 0 and lo < hi, got width={width} range=[{lo}, {hi})"
        )));
    }
    let n = (((hi - lo) / width - 1e-9).ceil() as usize).max(1);
    let mut bins: Vec<Bin> = (0..n)
        .map(|k| Bin {
            lo: lo + k as f64 * width,
            hi: if k + 1 == n { hi } else { lo + (k + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &v in values {
        let k = ((v - lo) / width).floor();
        let k = if k.is_nan() || k < 0.0 { 0 } else { (k as usize).min(n - 1) };
        bins[k].count += 1;
    }
    Ok(bins)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CandidatePolicy, Instance, VariableSchema};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(m: usize, n: usize) -> Dataset {
        let schema = VariableSchema::binary(n).unwrap();
        let inst = (0..m).map(|i| Instance::observed((0..n).map(|k| (i + k) % 2).collect())).collect();
        Dataset::new(schema, inst).unwrap()
    }

    #[test]
    fn splits_partition_slots() {
        let d = grid(10, 10);
        let splits = make_splits(&d, 10, 0.1, 3).unwrap();
        let mut seen = vec![vec![0; 10]; 10];
        for s in &splits {
            assert_eq!(s.hidden_slots(), 10);
            for (i, m) in s.masks.iter().enumerate() {
                for (k, h) in m.iter().enumerate() {
                    seen[i][k] += *h as usize;
                }
            }
        }
        assert!(seen.iter().flatten().all(|c| *c == 1));
        assert_eq!(splits, make_splits(&d, 10, 0.1, 3).unwrap());
        assert_ne!(splits, make_splits(&d, 10, 0.1, 4).unwrap());
        for s in make_splits(&d, 2, 0.5, 1).unwrap() {
            assert_eq!(s.hidden_slots(), 50);
        }
        for s in make_splits(&d, 2, 0.1, 1).unwrap() {
            assert_eq!(s.hidden_slots(), 10);
        }
        assert!(make_splits(&d, 1, 0.1, 1).is_err());
        assert!(make_splits(&d, 10, 0.5, 1).is_err());
    }

    fn beliefs(schema: &VariableSchema, p1: &[f64]) -> Marginals {
        let v: Vec<Vec<f64>> = p1.iter().map(|&p| vec![1.0 - p, p]).collect();
        Marginals::from_vectors(schema, &v)
    }

    fn hidden_data(values: Vec<Vec<usize>>) -> Dataset {
        let n = values[0].len();
        let schema = VariableSchema::binary(n).unwrap();
        let inst = values
            .into_iter()
            .map(|values| Instance {
                hidden: vec![true; values.len()],
                values,
            })
            .collect();
        Dataset::new(schema, inst).unwrap()
    }

    #[test]
    fn metric_examples() {
        let d = hidden_data(vec![vec![1, 0, 1]]);
        let s = d.schema().clone();
        let perfect = [beliefs(&s, &[1.0, 0.0, 1.0])];
        assert_eq!(cll_from_beliefs(&perfect, &d).unwrap(), 0.0);
        assert_eq!(pr_auc_from_beliefs(&perfect, &d).unwrap(), 1.0);
        assert_eq!(error_rate_from_beliefs(&perfect, &d).unwrap(), 0.0);

        let uniform = [beliefs(&s, &[0.5, 0.5, 0.5])];
        assert_abs_diff_eq!(cll_from_beliefs(&uniform, &d).unwrap(), -(2f64.ln()), epsilon = 1e-15);
        // Ties go to value 0, so only the middle variable is right.
        assert_abs_diff_eq!(error_rate_from_beliefs(&uniform, &d).unwrap(), 2.0 / 3.0, epsilon = 1e-15);

        let wrong = [beliefs(&s, &[0.0, 1.0, 0.0])];
        assert_eq!(error_rate_from_beliefs(&wrong, &d).unwrap(), 1.0);
        assert_abs_diff_eq!(cll_from_beliefs(&wrong, &d).unwrap(), PROB_FLOOR.ln(), epsilon = 1e-9);

        let none = Dataset::new(s.clone(), vec![Instance::observed(vec![0, 0, 0])]).unwrap();
        assert!(cll_from_beliefs(&perfect, &none).is_err());
    }

    #[test]
    fn average_precision_examples() {
        assert_abs_diff_eq!(
            average_precision(&[(0.9, true), (0.8, false), (0.7, true), (0.1, false)]),
            5.0 / 6.0,
            epsilon = 1e-15
        );
        // All relevant items last.
        let (r, t) = (3usize, 7usize);
        let items: Vec<(f64, bool)> = (0..t).map(|k| (1.0 - k as f64 / 10.0, k >= t - r)).collect();
        let want: f64 = (1..=r).map(|j| j as f64 / (t - r + j) as f64).sum::<f64>() / r as f64;
        assert_abs_diff_eq!(average_precision(&items), want, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn ap_is_rank_only(scores in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 1..40)) {
            let a = average_precision(&scores);
            let t: Vec<(f64, bool)> = scores.iter().map(|(s, r)| (s.powi(3) * 7.0 - 2.0, *r)).collect();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a, average_precision(&t));
        }

        #[test]
        fn histogram_counts_everything(values in proptest::collection::vec(-3.0f64..3.0, 0..200), w in 0.01f64..1.0) {
            let bins = histogram(&values, w, -1.0, 1.0).unwrap();
            prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), values.len());
        }
    }

    #[test]
    fn histogram_examples() {
        let bins = histogram(&[], 0.1, -1.0, 1.0).unwrap();
        assert_eq!(bins.len(), 20);
        assert!(bins.iter().all(|b| b.count == 0));
        let bins = histogram(&[-0.05, 0.05, 0.05], 0.1, -1.0, 1.0).unwrap();
        assert_eq!((bins[9].count, bins[10].count), (1, 2));
        let one = histogram(&[-1.0, 0.3, 0.999, 5.0], 2.0, -1.0, 1.0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].count, 4);
        assert!(histogram(&[], 0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn uniform_model_cll() {
        let d = grid(6, 4);
        let split = &make_splits(&d, 2, 0.5, 9).unwrap()[0];
        let d = d.with_hidden(&split.masks).unwrap();
        let m = Model::init_unary(d.schema().clone(), CandidatePolicy::NonReference);
        assert_abs_diff_eq!(conditional_log_likelihood(&m, &d).unwrap(), -(2f64.ln()), epsilon = 1e-12);
        let other = Model::init_unary(VariableSchema::new(vec![3, 2, 2, 2]).unwrap(), Default::default());
        assert!(matches!(evaluate(&other, &d, Default::default()), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-15);
    }
}
