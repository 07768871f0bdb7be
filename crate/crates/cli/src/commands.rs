use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crfind::datagen::{generate, SyntheticSpec};
use crfind::evalx::{evaluate, histogram, make_splits, mean_std, Bin, Metrics};
use crfind::induction::{SignalErrorTable, Thresholds};
use crfind::io::{read_dataset, read_model, write_dataset, write_edges, write_model};
use crfind::oracle::{exact_conditional, exact_joint, exact_marginals};
use crfind::trainer::{infer, train as run_training, Mode, Staging, TrainConfig, TrainTrace};
use crfind::{CandidatePolicy, Dataset, MeanFieldConfig, Model};
use serde::Serialize;
use serde_json::{json, Value};

use crate::manifest::Manifest;
use crate::{CliError, CliResult, EvalArgs, GenArgs, HistArgs, OracleArgs, SynthArgs, TrainArgs, TrainFlags};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

pub fn synthetic_spec(nodes: usize, s: &SynthArgs, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        nodes,
        degree: s.degree,
        weight_lo: s.weight_lo,
        weight_hi: s.weight_hi,
        samples: s.samples,
        burn_in: s.burnin,
        thinning: s.thinning,
        seed,
    }
}

pub fn parse_mode(s: &str) -> CliResult<Mode> {
    s.parse().map_err(|e: crfind::Error| CliError::Usage(e.to_string()))
}

/// Training configuration from flags; warns about flags that `mode` ignores.
pub fn train_config(mode: Mode, f: &TrainFlags, seed: u64, warn: bool) -> CliResult<TrainConfig> {
    let defaults = TrainConfig::default();
    if warn && mode == Mode::Full && (f.batch.is_some() || f.t_err.is_some() || f.t_sig.is_some()) {
        eprintln!("warning: --batch, --t-err and --t-sig have no effect in full mode");
    }
    let cfg = TrainConfig {
        mode,
        l1: f.l1,
        l2: f.l2,
        batch: f.batch.unwrap_or(defaults.batch),
        thresholds: Thresholds::new(
            f.t_err.unwrap_or(defaults.thresholds.err),
            f.t_sig.unwrap_or(defaults.thresholds.sig),
        )?,
        max_iterations: f.max_iters,
        seed,
        staging: if f.two_stage { Staging::TwoStage } else { Staging::Merged },
        policy: if f.all_values {
            CandidatePolicy::AllValuePairs
        } else {
            CandidatePolicy::NonReference
        },
        ..defaults
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Names the file in I/O errors; parse errors already carry it.
pub fn with_path(path: &Path) -> impl Fn(crfind::Error) -> CliError + '_ {
    move |e| match e {
        crfind::Error::Io(_) => CliError::Data(format!("{}: {e}", path.display())),
        other => other.into(),
    }
}

pub fn load_dataset(path: &Path) -> CliResult<Dataset> {
    read_dataset(path).map_err(with_path(path))
}

pub fn load_model(path: &Path) -> CliResult<Model> {
    read_model(path).map_err(with_path(path))
}

fn check_schemas(model: &Model, data: &Dataset) -> CliResult<()> {
    if model.schema() != data.schema() {
        return Err(CliError::Data(format!(
            "schema mismatch: model has cardinalities {:?}, data has {:?}",
            model.schema().cardinalities(),
            data.schema().cardinalities()
        )));
    }
    Ok(())
}

pub fn gen(a: GenArgs) -> CliResult<()> {
    let spec = synthetic_spec(a.nodes, &a.synth, a.seed);
    spec.validate()?;
    let mut manifest = Manifest::new("gen", serde_json::to_value(&spec).expect("spec serializes"));
    manifest.seed("seed", a.seed);
    ensure_dir(&a.out)?;
    manifest.phase("generate");
    let (truth, data) = generate(&spec)?;
    manifest.phase("write");
    let paths = [a.out.join("truth.json"), a.out.join("data.jsonl"), a.out.join("edges.csv")];
    write_model(&paths[0], &truth.model)?;
    write_dataset(&paths[1], &data)?;
    write_edges(&paths[2], &truth.edges)?;
    for p in &paths {
        manifest.artifact(p);
    }
    manifest.finish();
    Ok(())
}

/// A trace entry as written to JSON Lines.
pub fn trace_line(entry: &crfind::trainer::TraceEntry, timings: bool) -> String {
    let mut v = serde_json::to_value(entry).expect("trace serializes");
    if !timings {
        v.as_object_mut().expect("object").remove("timings");
    }
    v.to_string()
}

fn write_trace(path: &Path, trace: &TrainTrace, timings: bool) -> CliResult<()> {
    let mut out = String::new();
    for e in &trace.entries {
        out.push_str(&trace_line(e, timings));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let mode = parse_mode(&a.mode)?;
    let cfg = train_config(mode, &a.flags, a.seed, true)?;
    let mut manifest = Manifest::new("train", serde_json::to_value(&cfg).expect("config serializes"));
    manifest.seed("seed", a.seed);
    manifest.phase("read");
    let data = load_dataset(&a.data)?;
    ensure_dir(&a.out)?;
    manifest.phase("train");
    let clock = Instant::now();
    let (model, trace) = run_training(&data, &cfg)?;
    let secs = clock.elapsed().as_secs_f64();
    manifest.phase("write");
    let model_path = a.out.join("model.json");
    let trace_path = a.out.join("trace.jsonl");
    write_model(&model_path, &model)?;
    write_trace(&trace_path, &trace, a.trace_timings)?;
    manifest.artifact(&model_path);
    manifest.artifact(&trace_path);
    let last = trace.entries.last().expect("at least one iteration");
    let summary = json!({
        "mode": mode,
        "iterations": trace.entries.len(),
        "outcome": trace.outcome,
        "objective": last.objective,
        "introduced_features": model.len(),
        "active_features": model.active_count(),
        "train_seconds": secs,
    });
    println!("{summary}");
    manifest.finish();
    Ok(())
}

#[derive(Serialize)]
struct FoldReport {
    fold: usize,
    hidden: usize,
    #[serde(flatten)]
    metrics: Metrics,
}

#[derive(Serialize)]
struct Summary {
    cll: f64,
    auc: f64,
    error_rate: f64,
}

fn summarize(folds: &[Metrics]) -> (Summary, Summary) {
    let col = |f: fn(&Metrics) -> f64| mean_std(&folds.iter().map(f).collect::<Vec<_>>());
    let (c, a, e) = (col(|m| m.cll), col(|m| m.auc), col(|m| m.error_rate));
    (
        Summary { cll: c.0, auc: a.0, error_rate: e.0 },
        Summary { cll: c.1, auc: a.1, error_rate: e.1 },
    )
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let mut manifest = Manifest::new(
        "eval",
        json!({"folds": a.folds, "fraction": a.fraction, "model": a.model, "data": a.data}),
    );
    manifest.seed("seed", a.seed);
    manifest.phase("read");
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    check_schemas(&model, &data)?;
    manifest.phase("evaluate");
    let splits = make_splits(&data, a.folds, a.fraction, a.seed)?;
    let mut folds = Vec::with_capacity(splits.len());
    for split in &splits {
        let d = data.with_hidden(&split.masks)?;
        let metrics = evaluate(&model, &d, MeanFieldConfig::default())?;
        folds.push(FoldReport {
            fold: split.fold,
            hidden: split.hidden_slots(),
            metrics,
        });
    }
    let metrics: Vec<Metrics> = folds.iter().map(|f| f.metrics.clone()).collect();
    let (mean, std) = summarize(&metrics);
    let report = json!({
        "cll": mean.cll,
        "auc": mean.auc,
        "error_rate": mean.error_rate,
        "std": std,
        "introduced_features": model.len(),
        "active_features": model.active_count(),
        "wall_time_seconds": Value::Null,
        "folds": folds,
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &a.out {
        Some(p) => {
            fs::write(p, &text)?;
            manifest.artifact(p);
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
        }
    }
    manifest.finish();
    Ok(())
}

fn write_histogram(path: &Path, bins: &[Bin]) -> CliResult<()> {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for b in bins {
        out.push_str(&format!("{},{},{}\n", b.lo, b.hi, b.count));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn hist(a: HistArgs) -> CliResult<()> {
    let mut manifest = Manifest::new(
        "hist",
        json!({"bin_width": a.bin_width, "model": a.model, "data": a.data}),
    );
    manifest.phase("read");
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    check_schemas(&model, &data)?;
    ensure_dir(&a.out)?;
    manifest.phase("inference");
    let (q0, q1, _) = infer(&model, &data, MeanFieldConfig::default());
    let table = SignalErrorTable::from_marginals(&q0, &q1, &model);
    let signals = histogram(&table.signals(), a.bin_width, -1.0, 1.0)?;
    let errors = histogram(table.errors(), a.bin_width, -1.0, 1.0)?;
    manifest.phase("write");
    let sp = a.out.join("signals.csv");
    let ep = a.out.join("errors.csv");
    write_histogram(&sp, &signals)?;
    write_histogram(&ep, &errors)?;
    manifest.artifact(&sp);
    manifest.artifact(&ep);
    manifest.finish();
    Ok(())
}

pub fn oracle(a: OracleArgs) -> CliResult<()> {
    let mut manifest = Manifest::new(
        "oracle",
        json!({"model": a.model, "data": a.data, "instance": a.instance}),
    );
    manifest.phase("read");
    let model = load_model(&a.model)?;
    manifest.phase("enumerate");
    let table = match &a.data {
        Some(p) => {
            let data = load_dataset(p)?;
            check_schemas(&model, &data)?;
            let inst = data.instances().get(a.instance).ok_or_else(|| {
                CliError::Usage(format!("instance {} out of range ({} instances)", a.instance, data.len()))
            })?;
            exact_conditional(&model, inst)?
        }
        None => exact_joint(&model)?,
    };
    let out = json!({
        "log_z": table.log_z(),
        "z": table.z(),
        "free_variables": table.free_vars(),
        "marginals": exact_marginals(&table),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("serializes"));
    manifest.finish();
    Ok(())
}
