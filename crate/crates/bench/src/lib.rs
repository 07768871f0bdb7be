//! Shared fixtures for the criterion benchmarks.

use crfind::datagen::{generate, SyntheticSpec};
use crfind::trainer::{infer, train, Mode, TrainConfig};
use crfind::{Contrast, Dataset, Marginals, MeanFieldConfig, Model};

/// A partially trained model together with its mean-field fits on the training data.
pub struct Fixture {
    pub model: Model,
    pub data: Dataset,
    pub q0s: Vec<Marginals>,
    pub q1s: Vec<Marginals>,
}

impl Fixture {
    /// Generates an `nodes`-variable network and runs `iterations` rounds of cfi training on it.
    pub fn new(nodes: usize, iterations: usize) -> Self {
        let spec = SyntheticSpec {
            nodes,
            burn_in: 500,
            thinning: 50,
            seed: 7,
            ..SyntheticSpec::default()
        };
        let (_, data) = generate(&spec).expect("valid spec");
        let cfg = TrainConfig {
            mode: Mode::Cfi,
            max_iterations: iterations,
            seed: 7,
            ..TrainConfig::default()
        };
        let (model, _) = train(&data, &cfg).expect("training runs");
        let (q0s, q1s, _) = infer(&model, &data, MeanFieldConfig::default());
        Self { model, data, q0s, q1s }
    }

    pub fn contrast(&self) -> Contrast {
        Contrast::new(&self.q0s, &self.q1s, &self.model)
    }
}
