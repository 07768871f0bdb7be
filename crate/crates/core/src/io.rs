//! On-disk formats: model JSON, dataset JSON Lines, edge-list CSV.
//!
//! Floats are written in shortest round-trip form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::Edge;
use crate::model::{CandidatePolicy, Dataset, Feature, Instance, Model, State, VariableSchema};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
struct FeatureRecord {
    states: Vec<[usize; 2]>,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelRecord {
    cardinalities: Vec<usize>,
    #[serde(default)]
    policy: CandidatePolicy,
    features: Vec<FeatureRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    cardinalities: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    values: Vec<usize>,
    #[serde(default)]
    hidden: Vec<usize>,
}

fn parse_error(path: &str, line: usize, message: impl ToString) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.to_string(),
    }
}

/// Model as pretty JSON, features in canonical order.
pub fn model_to_string(model: &Model) -> String {
    let record = ModelRecord {
        cardinalities: model.schema().cardinalities().to_vec(),
        policy: model.policy(),
        features: model
            .canonical_features()
            .into_iter()
            .map(|(f, w)| FeatureRecord {
                states: f.states().iter().map(|s| [s.var as usize, s.val as usize]).collect(),
                weight: w,
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&record).expect("model serializes");
    s.push('\n');
    s
}

pub fn model_from_str(text: &str, path: &str) -> Result<Model> {
    let record: ModelRecord = serde_json::from_str(text).map_err(|e| parse_error(path, e.line(), e))?;
    let schema = VariableSchema::new(record.cardinalities)?;
    let mut features = Vec::with_capacity(record.features.len());
    let mut weights = Vec::with_capacity(record.features.len());
    for f in record.features {
        let states = f.states.iter().map(|&[var, val]| State::new(var, val)).collect();
        features.push(Feature::new(states)?);
        weights.push(f.weight);
    }
    Model::new(schema, features, weights, record.policy)
}

pub fn write_model(path: &Path, model: &Model) -> Result<()> {
    std::fs::write(path, model_to_string(model))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<Model> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    model_from_str(&text, &path.display().to_string())
}

/// Header line with the schema, then one object per instance.
pub fn write_dataset_to(mut w: impl Write, data: &Dataset) -> Result<()> {
    let header = Header {
        cardinalities: data.schema().cardinalities().to_vec(),
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    writeln!(w)?;
    for inst in data.instances() {
        let record = InstanceRecord {
            values: inst.values.clone(),
            hidden: (0..inst.hidden.len()).filter(|&k| inst.hidden[k]).collect(),
        };
        serde_json::to_writer(&mut w, &record).map_err(std::io::Error::from)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset_from(r: impl BufRead, path: &str) -> Result<Dataset> {
    let mut lines = r.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| parse_error(path, i + 1, e))?;
            }
            None => return Err(parse_error(path, 1, "missing header line")),
        }
    };
    let schema = VariableSchema::new(header.cardinalities)?;
    let mut instances = Vec::new();
    let mut line_numbers = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstanceRecord = serde_json::from_str(&line).map_err(|e| parse_error(path, i + 1, e))?;
        let mut hidden = vec![false; rec.values.len()];
        for k in rec.hidden {
            if k >= hidden.len() {
                return Err(parse_error(path, i + 1, format!("hidden index {k} out of range")));
            }
            hidden[k] = true;
        }
        instances.push(Instance {
            values: rec.values,
            hidden,
        });
        line_numbers.push(i + 1);
    }
    Dataset::new(schema, instances).map_err(|e| match e {
        Error::Instance { index, reason } => parse_error(path, line_numbers[index], reason),
        other => other,
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_from(BufReader::new(File::open(path)?), &path.display().to_string())
}

/// `varA,varB,weight` with a header row.
pub fn write_edges(path: &Path, edges: &[Edge]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "varA,varB,weight")?;
    for e in edges {
        writeln!(w, "{},{},{}", e.a, e.b, e.weight)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_edges(path: &Path) -> Result<Vec<Edge>> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(parse_error(&name, i + 1, "expected 3 columns"));
        }
        let bad = |e: &dyn std::fmt::Display| parse_error(&name, i + 1, e);
        edges.push(Edge {
            a: parts[0].trim().parse().map_err(|e| bad(&e))?,
            b: parts[1].trim().parse().map_err(|e| bad(&e))?,
            weight: parts[2].trim().parse().map_err(|e| bad(&e))?,
        });
    }
    Ok(edges)
}
