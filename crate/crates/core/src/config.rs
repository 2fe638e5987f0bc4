//! Run configuration: one JSON document with a section per stage.
//!
//! Loading starts from the defaults, deep-merges an optional file, then
//! applies `key.path=value` overrides. Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::contrast::ContrastConfig;
use crate::corpus::CorpusConfig;
use crate::error::{Error, Result};
use crate::model::BackboneConfig;
use crate::synthgen::{to_json, write_file, SynthConfig};
use crate::trainkit::{CompressConfig, TrainConfig};

/// File name of the resolved config archived next to every output.
pub const RESOLVED_CONFIG: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub recordings: PathBuf,
    pub corpus: PathBuf,
    pub pre: PathBuf,
    pub pruned: PathBuf,
    pub post: PathBuf,
    pub bench: PathBuf,
    pub sweep: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        let p = |s: &str| PathBuf::from("out").join(s);
        Self {
            recordings: p("recordings"),
            corpus: p("corpus"),
            pre: p("pre"),
            pruned: p("pruned"),
            post: p("post"),
            bench: p("bench"),
            sweep: p("sweep"),
        }
    }
}

/// Grid for the `sweep` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Training images per class.
    pub samples: Vec<usize>,
    pub prune_ratios: Vec<f64>,
    pub kd_alphas: Vec<f64>,
    /// Training seeds averaged per cell.
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { samples: vec![50, 300], prune_ratios: vec![0.25, 0.5, 0.75], kd_alphas: vec![0.25, 0.5, 0.75, 1.0], seeds: vec![0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Randomized cases per gradient suite.
    pub cases: usize,
    /// Batches or memories per oracle suite.
    pub oracle_cases: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { cases: 24, oracle_cases: 100, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub corpus: CorpusConfig,
    pub model: BackboneConfig,
    pub contrast: ContrastConfig,
    pub compress: CompressConfig,
    pub train: TrainConfig,
    pub paths: PathsConfig,
    pub sweep: SweepConfig,
    pub verify: VerifyConfig,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets `a.b.c` in a JSON tree. Missing or null intermediate nodes become
/// objects; the final value is parsed as JSON, falling back to a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override {assignment:?} has an empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let Value::Object(map) = node else {
            return Err(Error::Config(format!("override {key}: {} is not an object", parts[..i].join("."))));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last segment")
}

impl RunConfig {
    /// Defaults, then `file`, then each `key=value` in `overrides`.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut tree = serde_json::to_value(RunConfig::default()).expect("config serializes");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let doc: Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if !doc.is_object() {
                return Err(Error::Config(format!("{}: top level must be an object", path.display())));
            }
            merge(&mut tree, doc);
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.corpus.validate()?;
        self.model.validate()?;
        self.contrast.validate()?;
        self.compress.validate()?;
        self.train.validate()?;
        if self.model.img_size != self.corpus.image.img_size {
            return Err(Error::Config(format!(
                "model.img_size {} differs from corpus.image.img_size {}",
                self.model.img_size, self.corpus.image.img_size
            )));
        }
        if self.model.num_classes != self.corpus.classes.len() {
            return Err(Error::Config(format!(
                "model.num_classes {} differs from the {} corpus classes",
                self.model.num_classes,
                self.corpus.classes.len()
            )));
        }
        if self.synth.sample_rate != self.corpus.sample_rate {
            return Err(Error::Config(format!(
                "synth.sample_rate {} differs from corpus.sample_rate {}",
                self.synth.sample_rate, self.corpus.sample_rate
            )));
        }
        let s = &self.sweep;
        if s.samples.is_empty() || s.samples.contains(&0) || s.seeds.is_empty() {
            return Err(Error::Config("sweep.samples must be non-empty and >= 1, sweep.seeds non-empty".into()));
        }
        if s.prune_ratios.iter().any(|r| !(0.0..1.0).contains(r)) || s.kd_alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Config("sweep.prune_ratios must lie in [0, 1) and sweep.kd_alphas in [0, 1]".into()));
        }
        if self.verify.cases == 0 || self.verify.oracle_cases == 0 {
            return Err(Error::Config("verify.cases and verify.oracle_cases must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        to_json(self)
    }

    /// Writes `dir/config.json`.
    pub fn archive(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RESOLVED_CONFIG);
        write_file(&path, &self.to_json())?;
        Ok(path)
    }
}
