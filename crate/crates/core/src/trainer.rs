//! The outer training loop shared by all induction modes.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::induction::{cfi_scores, grafting_scores, inactive_pairs, select_top, SignalErrorTable, Thresholds};
use crate::mean_field::{Marginals, MeanField, MeanFieldConfig};
use crate::model::{enumerate_candidates, CandidatePolicy, Dataset, Feature, Model};
use crate::objective::{objective_value, Contrast};
use crate::owlqn::{Owlqn, OwlqnConfig, StepStatus};
use crate::{Error, Result};

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Every candidate active from the start.
    Full,
    /// Exact candidate gradients.
    Grafting,
    /// Thresholded contrastive approximation.
    #[default]
    Cfi,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Grafting => "grafting",
            Mode::Cfi => "cfi",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "grafting" => Ok(Mode::Grafting),
            "cfi" => Ok(Mode::Cfi),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// When pairwise induction starts.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Staging {
    /// Pairwise features are induced from the first iteration.
    #[default]
    Merged,
    /// Unary weights are trained to termination before any induction.
    TwoStage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: Mode,
    pub l1: f64,
    pub l2: f64,
    /// Features added per induction step.
    pub batch: usize,
    pub thresholds: Thresholds,
    pub mean_field: MeanFieldConfig,
    pub optimizer: OwlqnConfig,
    pub rel_tol: f64,
    pub patience: usize,
    pub max_iterations: usize,
    /// Recorded for provenance; training itself draws no random numbers.
    pub seed: u64,
    pub staging: Staging,
    pub policy: CandidatePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            l1: 2.0,
            l2: 1.0,
            batch: 50,
            thresholds: Thresholds::default(),
            mean_field: MeanFieldConfig::default(),
            optimizer: OwlqnConfig::default(),
            rel_tol: 1e-4,
            patience: 3,
            max_iterations: 500,
            seed: 0,
            staging: Staging::default(),
            policy: CandidatePolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.l1 >= 0.0 && self.l2 >= 0.0 && self.l1.is_finite() && self.l2.is_finite()) {
            return fail(format!("regularizers must be finite and non-negative, got l1={} l2={}", self.l1, self.l2));
        }
        if self.batch == 0 {
            return fail("batch size must be at least 1".into());
        }
        if self.patience == 0 {
            return fail("patience must be at least 1".into());
        }
        if !(self.rel_tol > 0.0) {
            return fail(format!("relative tolerance must be positive, got {}", self.rel_tol));
        }
        if self.max_iterations == 0 {
            return fail("max iterations must be at least 1".into());
        }
        Thresholds::new(self.thresholds.err, self.thresholds.sig)?;
        Ok(())
    }
}

/// Wall-clock seconds spent per phase of one iteration.
#[derive(Copy, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub inference_secs: f64,
    pub optimizer_secs: f64,
    pub scoring_secs: f64,
}

impl Timings {
    pub fn total(&self) -> f64 {
        self.inference_secs + self.optimizer_secs + self.scoring_secs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Regularized objective at the weights the iteration started from.
    pub objective: f64,
    pub l1_norm: f64,
    /// Features in the model after this iteration's induction.
    pub introduced: usize,
    /// Features with non-zero weight after this iteration's step.
    pub active: usize,
    pub added: usize,
    /// `(candidate, instance)` products evaluated by scoring.
    pub accumulations: u64,
    /// Instances whose clamped fit hit the sweep limit.
    pub mf_unconverged: usize,
    pub step: StepKind,
    pub timings: Timings,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Accepted,
    Stationary,
    Stalled,
}

impl From<StepStatus> for StepKind {
    fn from(s: StepStatus) -> Self {
        match s {
            StepStatus::Accepted => StepKind::Accepted,
            StepStatus::Stationary => StepKind::Stationary,
            StepStatus::Stalled => StepKind::Stalled,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Converged,
    /// Hit `max_iterations`; the model with the lowest recorded objective is returned.
    MaxIterations,
    /// The line search failed `patience` times in a row with no new features.
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub entries: Vec<TraceEntry>,
    pub outcome: Outcome,
}

impl TrainTrace {
    pub fn total_secs(&self) -> f64 {
        self.entries.iter().map(|e| e.timings.total()).sum()
    }

    pub fn scoring_secs(&self) -> f64 {
        self.entries.iter().map(|e| e.timings.scoring_secs).sum()
    }

    pub fn accumulations(&self) -> u64 {
        self.entries.iter().map(|e| e.accumulations).sum()
    }
}

/// Both relative changes stayed within `rel_tol` for the last `patience`
/// consecutive pairs of entries.
pub fn check_termination(entries: &[TraceEntry], rel_tol: f64, patience: usize) -> bool {
    if entries.len() < patience + 1 {
        return false;
    }
    entries[entries.len() - patience - 1..].windows(2).all(|w| {
        let (a, b) = (&w[0], &w[1]);
        (b.objective - a.objective).abs() <= rel_tol * (1.0 + b.objective.abs())
            && (b.l1_norm - a.l1_norm).abs() <= rel_tol * (1.0 + b.l1_norm)
    })
}

/// `q0` and `q1` for every instance, plus the count of unconverged `q0` fits.
pub fn infer(model: &Model, data: &Dataset, cfg: MeanFieldConfig) -> (Vec<Marginals>, Vec<Marginals>, usize) {
    let mf = MeanField::new(model);
    let fits: Vec<(Marginals, Marginals, bool)> = data
        .instances()
        .par_iter()
        .map(|inst| {
            let fit = mf.converge(inst, cfg);
            let q1 = mf.cd_sweep(&fit.marginals);
            (fit.marginals, q1, fit.converged)
        })
        .collect();
    let unconverged = fits.iter().filter(|f| !f.2).count();
    let (q0s, q1s) = fits.into_iter().map(|(a, b, _)| (a, b)).unzip();
    (q0s, q1s, unconverged)
}

/// Trains a model on `data` in the configured mode.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainTrace)> {
    cfg.validate()?;
    let schema = data.schema().clone();
    let (start, induce) = match cfg.mode {
        Mode::Full => {
            let features: Vec<Feature> = enumerate_candidates(&schema, cfg.policy).iter().collect();
            let weights = vec![0.0; features.len()];
            (Model::new(schema, features, weights, cfg.policy)?, false)
        }
        Mode::Grafting | Mode::Cfi => (Model::init_unary(schema, cfg.policy), true),
    };
    run(data, cfg, start, induce)
}

/// Optimizes the weights of a fixed feature set without induction.
pub fn train_fixed(data: &Dataset, cfg: &TrainConfig, features: Vec<Feature>) -> Result<(Model, TrainTrace)> {
    cfg.validate()?;
    let weights = vec![0.0; features.len()];
    let start = Model::new(data.schema().clone(), features, weights, cfg.policy)?;
    run(data, cfg, start, false)
}

fn run(data: &Dataset, cfg: &TrainConfig, start: Model, induce: bool) -> Result<(Model, TrainTrace)> {
    if data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    if start.schema() != data.schema() {
        return Err(Error::SchemaMismatch("model and data schemas differ".into()));
    }
    let mut model = start;
    let mut opt = Owlqn::new(cfg.optimizer);
    let mut entries: Vec<TraceEntry> = Vec::new();
    let mut best: Option<(f64, Model)> = None;
    let mut inducing = induce && cfg.staging == Staging::Merged;
    let mut stage_start = 0;
    let mut stalls = 0;

    for iteration in 0..cfg.max_iterations {
        let clock = Instant::now();
        let (q0s, q1s, mf_unconverged) = infer(&model, data, cfg.mean_field);
        let contrast = Contrast::new(&q0s, &q1s, &model);
        let inference_secs = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let surrogate = contrast.surrogate(&model, cfg.l2);
        let theta = model.weights().to_vec();
        let objective = objective_value(&model, surrogate.cd_sum(&theta), cfg.l1, cfg.l2).total;
        if best.as_ref().is_none_or(|(v, _)| objective < *v) {
            best = Some((objective, model.clone()));
        }
        let step = opt.iterate(&theta, &surrogate.gradient(&theta), |t| surrogate.value(t), cfg.l1);
        model = model.with_weights(step.theta)?;
        let optimizer_secs = clock.elapsed().as_secs_f64();

        let clock = Instant::now();
        let mut added = 0;
        let mut accumulations = 0;
        if inducing {
            let scored = match cfg.mode {
                Mode::Cfi => {
                    let table = SignalErrorTable::build(&contrast.q0, &contrast.q1, cfg.policy);
                    let mut scored = cfi_scores(&table, cfg.thresholds);
                    scored.scores.retain(|f| !model.contains(f));
                    scored
                }
                _ => grafting_scores(&contrast, &inactive_pairs(&model)),
            };
            accumulations = scored.accumulations;
            let chosen = select_top(&scored.scores, cfg.batch, cfg.l1);
            if !chosen.is_empty() {
                let (next, n) = model.activate_features(&chosen)?;
                opt.grow(n);
                model = next;
                added = n;
            }
        }
        let scoring_secs = clock.elapsed().as_secs_f64();

        stalls = if step.status == StepStatus::Stalled && added == 0 {
            stalls + 1
        } else {
            0
        };
        entries.push(TraceEntry {
            iteration,
            objective,
            l1_norm: theta.iter().map(|v| v.abs()).sum(),
            introduced: model.len(),
            active: model.active_count(),
            added,
            accumulations,
            mf_unconverged,
            step: step.status.into(),
            timings: Timings {
                inference_secs,
                optimizer_secs,
                scoring_secs,
            },
        });

        if stalls >= cfg.patience {
            return Ok((model, TrainTrace { entries, outcome: Outcome::Stalled }));
        }
        if check_termination(&entries[stage_start..], cfg.rel_tol, cfg.patience) {
            if induce && !inducing {
                inducing = true;
                stage_start = entries.len();
                continue;
            }
            return Ok((model, TrainTrace { entries, outcome: Outcome::Converged }));
        }
    }
    let model = best.map(|(_, m)| m).unwrap_or(model);
    Ok((model, TrainTrace { entries, outcome: Outcome::MaxIterations }))
}
