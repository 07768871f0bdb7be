//! L1-regularized structure learning for pairwise conditional random fields
//! trained with mean-field contrastive divergence.

pub mod datagen;
pub mod error;
pub mod evalx;
pub mod induction;
pub mod io;
pub mod mean_field;
pub mod model;
pub mod objective;
pub mod oracle;
pub mod owlqn;
pub mod trainer;

pub use error::{Error, Result};
pub use induction::{cfi_scores, grafting_scores, select_top, ScoreMap, Scored, SignalErrorTable, Thresholds};
pub use mean_field::{BeliefTable, Marginals, MeanField, MeanFieldConfig};
pub use model::{
    canonical_pair, enumerate_candidates, CandidatePolicy, CandidateSpace, Dataset, Feature, FeatureKind, Instance,
    Model, State, VariableSchema,
};
pub use objective::{Contrast, ObjectiveValue, Surrogate};
pub use owlqn::{Owlqn, OwlqnConfig};
pub use trainer::{train, train_fixed, Mode, TrainConfig, TrainTrace};
