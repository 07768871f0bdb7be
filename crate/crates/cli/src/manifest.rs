use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{Map, Value};

/// Record of one command run, printed to standard error when it finishes.
#[derive(Serialize)]
pub struct Manifest {
    command: &'static str,
    version: &'static str,
    config: Value,
    seeds: Map<String, Value>,
    artifacts: Vec<String>,
    timings: Map<String, Value>,
    #[serde(skip)]
    clock: Option<(String, Instant)>,
}

impl Manifest {
    pub fn new(command: &'static str, config: Value) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            seeds: Map::new(),
            artifacts: Vec::new(),
            timings: Map::new(),
            clock: None,
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.into(), value.into());
    }

    pub fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    /// Starts timing `phase`, closing the previous one.
    pub fn phase(&mut self, phase: &str) {
        self.stop();
        self.clock = Some((phase.to_string(), Instant::now()));
    }

    fn stop(&mut self) {
        if let Some((name, t)) = self.clock.take() {
            self.timings.insert(name, t.elapsed().as_secs_f64().into());
        }
    }

    pub fn finish(mut self) {
        self.stop();
        eprintln!("{}", serde_json::to_string(&self).expect("manifest serializes"));
    }
}
