use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use crfind::datagen::generate;
use crfind::evalx::{evaluate, make_splits};
use crfind::induction::Thresholds;
use crfind::trainer::{train, train_fixed, Mode, TrainConfig};
use crfind::{Dataset, Feature, MeanFieldConfig};
use serde_json::json;

use crate::commands::{ensure_dir, load_dataset, load_model, synthetic_spec, train_config};
use crate::manifest::Manifest;
use crate::{BenchArgs, CliError, CliResult};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Method {
    Induce(Mode),
    TrueGraph,
}

impl Method {
    fn parse(s: &str) -> CliResult<Self> {
        match s.trim() {
            "truegraph" => Ok(Method::TrueGraph),
            other => crate::commands::parse_mode(other).map(Method::Induce),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Method::Induce(m) => m.as_str(),
            Method::TrueGraph => "truegraph",
        }
    }
}

pub const HEADER: &str = "method,nodes,threshold,fold,time,cll,auc,err,introduced,active";

struct Setting {
    nodes: usize,
    data: Dataset,
    truth: Option<Vec<Feature>>,
}

pub fn run(a: BenchArgs) -> CliResult<()> {
    let mut methods: Vec<Method> = a.methods.iter().map(|m| Method::parse(m)).collect::<CliResult<_>>()?;
    if a.truth.is_some() && !methods.contains(&Method::TrueGraph) {
        methods.push(Method::TrueGraph);
    }
    if methods.is_empty() {
        return Err(CliError::Usage("--methods is empty".into()));
    }
    if a.data.is_none() && a.nodes_list.is_empty() {
        return Err(CliError::Usage("one of --nodes-list or --data is required".into()));
    }
    if methods.contains(&Method::TrueGraph) && a.data.is_some() && a.truth.is_none() {
        return Err(CliError::Usage("--methods truegraph with --data requires --truth".into()));
    }
    for &t in &a.threshold_list {
        Thresholds::both(t)?;
    }
    let base = train_config(Mode::Cfi, &a.flags, a.seed, false)?;

    let mut manifest = Manifest::new(
        "bench",
        json!({
            "nodes_list": a.nodes_list,
            "data": a.data,
            "truth": a.truth,
            "methods": a.methods,
            "threshold_list": a.threshold_list,
            "folds": a.folds,
            "fraction": a.fraction,
            "max_folds": a.max_folds,
            "train": base,
        }),
    );
    manifest.seed("seed", a.seed);
    ensure_dir(&a.out)?;

    manifest.phase("prepare");
    let mut settings = Vec::new();
    if let Some(path) = &a.data {
        let data = load_dataset(path)?;
        let truth = match &a.truth {
            Some(p) => {
                let m = load_model(p)?;
                if m.schema() != data.schema() {
                    return Err(CliError::Data("truth model and data schemas differ".into()));
                }
                Some(m.features().to_vec())
            }
            None => None,
        };
        settings.push(Setting {
            nodes: data.schema().len(),
            data,
            truth,
        });
    } else {
        for &n in &a.nodes_list {
            let spec = synthetic_spec(n, &a.synth, a.seed);
            let (truth, data) = generate(&spec)?;
            settings.push(Setting {
                nodes: n,
                data,
                truth: Some(truth.model.features().to_vec()),
            });
        }
    }

    manifest.phase("run");
    let mut csv = String::from(HEADER);
    csv.push('\n');
    for s in &settings {
        let splits = make_splits(&s.data, a.folds, a.fraction, a.seed)?;
        let take = a.max_folds.unwrap_or(a.folds).min(splits.len());
        for split in &splits[..take] {
            let data = s.data.with_hidden(&split.masks)?;
            for &method in &methods {
                let thresholds: Vec<Option<f64>> = match method {
                    Method::Induce(Mode::Cfi) => a.threshold_list.iter().map(|t| Some(*t)).collect(),
                    _ => vec![None],
                };
                for t in thresholds {
                    let cfg = TrainConfig {
                        mode: match method {
                            Method::Induce(m) => m,
                            Method::TrueGraph => Mode::Full,
                        },
                        thresholds: match t {
                            Some(t) => Thresholds::both(t)?,
                            None => base.thresholds,
                        },
                        ..base.clone()
                    };
                    let clock = Instant::now();
                    let (model, _) = match method {
                        Method::TrueGraph => train_fixed(&data, &cfg, s.truth.clone().expect("checked above"))?,
                        Method::Induce(_) => train(&data, &cfg)?,
                    };
                    let secs = clock.elapsed().as_secs_f64();
                    let m = evaluate(&model, &data, MeanFieldConfig::default())?;
                    let t = t.map(|t| t.to_string()).unwrap_or_default();
                    writeln!(
                        csv,
                        "{},{},{},{},{},{},{},{},{},{}",
                        method.name(),
                        s.nodes,
                        t,
                        split.fold,
                        secs,
                        m.cll,
                        m.auc,
                        m.error_rate,
                        model.len(),
                        model.active_count()
                    )
                    .expect("write to string");
                }
            }
        }
    }
    let path = a.out.join("results.csv");
    write_results(&path, &csv)?;
    manifest.artifact(&path);
    manifest.finish();
    Ok(())
}

fn write_results(path: &Path, csv: &str) -> CliResult<()> {
    fs::write(path, csv)?;
    Ok(())
}
