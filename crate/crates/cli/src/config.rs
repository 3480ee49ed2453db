//! `key = value` run configuration shared by every command.

use std::path::{Path, PathBuf};

use anyhow::Context;
use dsparse_core::kg::{generate_toy_kg, KnowledgeGraph, Split};
use dsparse_core::model::{config_fmt_real, ModelConfig};
use dsparse_core::train::TrainConfig;

use crate::error::{CliError, CliResult};

/// Every key a config file or `--set` may name, in echo order.
pub const KEYS: &[&str] = &[
    "dim",
    "hidden",
    "experts",
    "temperature",
    "sparsity",
    "depth",
    "dropout",
    "activation",
    "dynamic",
    "relation_aware",
    "decoder",
    "dropout_placement",
    "lr",
    "batch_size",
    "epochs",
    "label_smoothing",
    "eval_every",
    "precision",
    "seed",
    "runs",
    "eval_split",
    "data_dir",
    "strict_vocab",
    "toy",
    "toy_seed",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Vocabulary sizes are filled in from the data.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub runs: usize,
    pub eval_split: Split,
    pub data_dir: Option<PathBuf>,
    pub strict_vocab: bool,
    /// Use the synthetic graph with this many entities instead of `data_dir`.
    pub toy: Option<usize>,
    pub toy_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            runs: 1,
            eval_split: Split::Test,
            data_dir: None,
            strict_vocab: false,
            toy: None,
            toy_seed: 7,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::usage(format!("invalid value '{value}' for '{key}'")))
}

impl RunConfig {
    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        match key.trim() {
            "dim" => m.dim = parse(key, v)?,
            "hidden" => m.hidden = parse(key, v)?,
            "experts" => m.experts = parse(key, v)?,
            "temperature" => m.temperature = parse(key, v)?,
            "sparsity" => m.sparsity = parse(key, v)?,
            "depth" => m.depth = parse(key, v)?,
            "dropout" => m.dropout = parse(key, v)?,
            "activation" => m.activation = v.parse()?,
            "dynamic" => m.dynamic = v.parse()?,
            "relation_aware" => m.relation_aware = parse(key, v)?,
            "decoder" => m.decoder = v.parse()?,
            "dropout_placement" => m.dropout_placement = v.parse()?,
            "lr" => t.lr = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "label_smoothing" => t.label_smoothing = parse(key, v)?,
            "eval_every" => t.eval_every = parse(key, v)?,
            "precision" => t.precision = v.to_string(),
            "seed" => {
                let seed = parse(key, v)?;
                m.seed = seed;
                t.seed = seed;
            }
            "runs" => self.runs = parse(key, v)?,
            "eval_split" => self.eval_split = v.parse()?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "strict_vocab" => self.strict_vocab = parse(key, v)?,
            "toy" => {
                let n: usize = parse(key, v)?;
                self.toy = (n > 0).then_some(n);
            }
            "toy_seed" => self.toy_seed = parse(key, v)?,
            other => return Err(CliError::usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a config file body: `key = value` lines, `#` comments.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("{origin}:{}: expected 'key = value'", i + 1)))?;
            self.set(k, v)
                .map_err(|e| CliError::usage(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config '{}': {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> CliResult<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("override '{o}' is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.runs == 0 {
            return Err(CliError::usage("runs must be at least 1"));
        }
        self.train.validate()?;
        let probe = ModelConfig {
            n_entities: 1,
            n_relations: 1,
            ..self.model.clone()
        };
        probe.validate()?;
        if self.toy.is_none() && self.data_dir.is_none() {
            return Err(CliError::usage("no data: give a data directory or a toy graph size"));
        }
        Ok(())
    }

    /// The effective configuration, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let value = |k: &str| -> String {
            match k {
                "dim" => m.dim.to_string(),
                "hidden" => m.hidden.to_string(),
                "experts" => m.experts.to_string(),
                "temperature" => config_fmt_real(m.temperature),
                "sparsity" => config_fmt_real(m.sparsity),
                "depth" => m.depth.to_string(),
                "dropout" => config_fmt_real(m.dropout),
                "activation" => m.activation.to_string(),
                "dynamic" => m.dynamic.to_string(),
                "relation_aware" => m.relation_aware.to_string(),
                "decoder" => m.decoder.to_string(),
                "dropout_placement" => m.dropout_placement.to_string(),
                "lr" => config_fmt_real(t.lr),
                "batch_size" => t.batch_size.to_string(),
                "epochs" => t.epochs.to_string(),
                "label_smoothing" => config_fmt_real(t.label_smoothing),
                "eval_every" => t.eval_every.to_string(),
                "precision" => t.precision.clone(),
                "seed" => t.seed.to_string(),
                "runs" => self.runs.to_string(),
                "eval_split" => self.eval_split.to_string(),
                "data_dir" => self.data_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                "strict_vocab" => self.strict_vocab.to_string(),
                "toy" => self.toy.unwrap_or(0).to_string(),
                "toy_seed" => self.toy_seed.to_string(),
                _ => unreachable!("key list and echo are out of sync"),
            }
        };
        KEYS.iter().map(|k| format!("{k} = {}\n", value(k))).collect()
    }

    pub fn load_kg(&self) -> CliResult<KnowledgeGraph> {
        if let Some(n) = self.toy {
            return Ok(generate_toy_kg(n, self.toy_seed)?);
        }
        let dir = self
            .data_dir
            .as_ref()
            .ok_or_else(|| CliError::usage("no data directory given"))?;
        if !dir.is_dir() {
            return Err(CliError::usage(format!("data directory '{}' does not exist", dir.display())));
        }
        KnowledgeGraph::load_dir(dir, self.strict_vocab)
            .with_context(|| format!("loading '{}'", dir.display()))
            .map_err(CliError::Usage)
    }

    /// Model config sized for `kg`.
    pub fn model_for(&self, kg: &KnowledgeGraph) -> ModelConfig {
        ModelConfig {
            n_entities: kg.n_entities(),
            n_relations: kg.n_relations(),
            ..self.model.clone()
        }
    }
}
