//! Run configuration: a flat JSON object of `key: value` pairs layered over
//! a preset.
//!
//! Precedence, lowest first: preset defaults, the config file, `--set`
//! overrides in command-line order, then the dedicated `--seed` and
//! `--workers` flags. Every resolved value, including derived ones, is
//! echoed at the start of each run.

use std::fmt;
use std::fs;
use std::path::Path;

use qembed_core::{
    Backend, ContextFlags, ModelConfig, Precision, QueryType, StructureDims, Targets, TrainConfig,
};
use serde::Serialize;
use serde_json::{Map, Value};

/// A rejected configuration value, tagged with its key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config key `{}`: {}", self.key, self.reason)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Defaults of the published baselines.
    Full,
    /// Small dimensions and margins that train in seconds on a laptop.
    Desk,
}

/// Which split `make-queries` produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Answers on the training graph only.
    Train,
    /// Hard answers from the full graph; instances without any are resampled.
    Eval,
}

/// Every setting of a run. Field names are the config keys, except
/// `context_samples`, whose key is `K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub backend: Backend,
    pub dim: usize,
    pub position_dim: usize,
    pub role_dim: usize,
    pub type_dim: usize,
    pub context: bool,
    pub use_position: bool,
    pub use_role: bool,
    pub use_type: bool,
    pub use_relation_induced: bool,
    #[serde(rename = "K")]
    pub context_samples: usize,
    pub alpha_in: f64,
    /// `None` derives `(gamma + 2) / dim`; always resolved before echoing.
    pub init_range: Option<f64>,
    pub gamma: f64,
    pub negatives: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub variance_weight: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub workers: usize,
    pub precision: Precision,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub inverses: bool,
    pub train_triples: Option<String>,
    pub full_triples: Option<String>,
    pub train_queries: Option<String>,
    pub eval_queries: Option<String>,
    pub checkpoint: String,
    pub metrics_log: Option<String>,
    pub report: Option<String>,
    pub baseline_report: Option<String>,
    pub eval_targets: Targets,
    pub query_types: Vec<QueryType>,
    pub queries_per_type: usize,
    pub queries_split: Split,
    pub queries_output: Option<String>,
    pub top_k: usize,
    pub synthetic_entities: usize,
    pub synthetic_relations: usize,
    pub synthetic_triples: usize,
    pub synthetic_holdout: f64,
    pub bench_samples: Vec<usize>,
    pub bench_calls: usize,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let full = RunConfig {
            preset,
            backend: Backend::Box,
            dim: 400,
            position_dim: 108,
            role_dim: 108,
            type_dim: 108,
            context: true,
            use_position: true,
            use_role: true,
            use_type: true,
            use_relation_induced: true,
            context_samples: 120,
            alpha_in: qembed_core::backend::DEFAULT_ALPHA_IN,
            init_range: None,
            gamma: 24.0,
            negatives: 128,
            learning_rate: 1e-4,
            batch_size: 128,
            variance_weight: 0.1,
            max_steps: 10_000,
            seed: 0,
            workers: 1,
            precision: Precision::F32,
            checkpoint_every: 0,
            log_every: 100,
            inverses: true,
            train_triples: None,
            full_triples: None,
            train_queries: None,
            eval_queries: None,
            checkpoint: "model.ckpt".into(),
            metrics_log: None,
            report: None,
            baseline_report: None,
            eval_targets: Targets::Hard,
            query_types: QueryType::ALL.to_vec(),
            queries_per_type: 100,
            queries_split: Split::Train,
            queries_output: None,
            top_k: 10,
            synthetic_entities: 0,
            synthetic_relations: 4,
            synthetic_triples: 0,
            synthetic_holdout: 0.1,
            bench_samples: vec![60, 120, 240, 480],
            bench_calls: 1000,
        };
        match preset {
            Preset::Full => full,
            Preset::Desk => RunConfig {
                dim: 16,
                position_dim: 16,
                role_dim: 16,
                type_dim: 16,
                gamma: 6.0,
                negatives: 16,
                learning_rate: 0.005,
                batch_size: 32,
                max_steps: 2000,
                ..full
            },
        }
    }

    /// Layers the flat JSON object `doc` over its preset. An explicit
    /// `preset` key selects the base; otherwise `fallback` does.
    pub fn from_document(doc: &Map<String, Value>, fallback: Preset) -> Result<Self, ConfigError> {
        let preset = match doc.get("preset") {
            Some(v) => parse_preset(v)?,
            None => fallback,
        };
        let mut cfg = RunConfig::preset(preset);
        for (k, v) in doc {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    /// Reads a config file. An empty file means all defaults.
    pub fn from_file(path: &Path, fallback: Preset) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| {
            ConfigError::new("config", format!("cannot read {}: {e}", path.display()))
        })?;
        if text.trim().is_empty() {
            return Ok(RunConfig::preset(fallback));
        }
        let doc: Value = serde_json::from_str(&text)
            .map_err(|e| ConfigError::new("config", format!("not valid JSON: {e}")))?;
        match doc {
            Value::Object(map) => RunConfig::from_document(&map, fallback),
            _ => Err(ConfigError::new("config", "top level must be an object")),
        }
    }

    /// Applies a `key=value` override. The value is read as JSON when it
    /// parses, and as a bare string otherwise.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::new(assignment, "override must look like key=value"))?;
        let key = key.trim();
        let value = serde_json::from_str(raw.trim())
            .unwrap_or_else(|_| Value::String(raw.trim().to_string()));
        if key == "preset" {
            return Err(ConfigError::new(
                "preset",
                "select presets with --preset or in the config file",
            ));
        }
        self.set(key, &value)
    }

    /// Sets one key.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<(), ConfigError> {
        match key {
            "backend" => {
                self.backend = string(key, v)?
                    .parse()
                    .map_err(|e| ConfigError::new(key, format!("{e}")))?
            }
            "dim" => self.dim = positive(key, v)?,
            "position_dim" => self.position_dim = positive(key, v)?,
            "role_dim" => self.role_dim = positive(key, v)?,
            "type_dim" => self.type_dim = positive(key, v)?,
            "structure_dim" => {
                let d = positive(key, v)?;
                (self.position_dim, self.role_dim, self.type_dim) = (d, d, d);
            }
            "context" => self.context = boolean(key, v)?,
            "use_position" => self.use_position = boolean(key, v)?,
            "use_role" => self.use_role = boolean(key, v)?,
            "use_type" => self.use_type = boolean(key, v)?,
            "use_relation_induced" => self.use_relation_induced = boolean(key, v)?,
            "K" => self.context_samples = count(key, v)?,
            "alpha_in" => self.alpha_in = nonnegative(key, v)?,
            "init_range" => {
                self.init_range = match v {
                    Value::Null => None,
                    _ => Some(strictly_positive(key, v)?),
                }
            }
            "gamma" => self.gamma = strictly_positive(key, v)?,
            "negatives" => self.negatives = positive(key, v)?,
            "learning_rate" => self.learning_rate = strictly_positive(key, v)?,
            "batch_size" => self.batch_size = positive(key, v)?,
            "variance_weight" => self.variance_weight = nonnegative(key, v)?,
            "max_steps" => self.max_steps = count(key, v)?,
            "seed" => self.seed = count(key, v)? as u64,
            "workers" => self.workers = positive(key, v)?,
            "precision" => {
                self.precision = match string(key, v)?.as_str() {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    other => {
                        return Err(ConfigError::new(
                            key,
                            format!("expected f32 or f64, got `{other}`"),
                        ))
                    }
                }
            }
            "checkpoint_every" => self.checkpoint_every = count(key, v)?,
            "log_every" => self.log_every = count(key, v)?,
            "inverses" => self.inverses = boolean(key, v)?,
            "train_triples" => self.train_triples = path(key, v)?,
            "full_triples" => self.full_triples = path(key, v)?,
            "train_queries" => self.train_queries = path(key, v)?,
            "eval_queries" => self.eval_queries = path(key, v)?,
            "checkpoint" => self.checkpoint = string(key, v)?,
            "metrics_log" => self.metrics_log = path(key, v)?,
            "report" => self.report = path(key, v)?,
            "baseline_report" => self.baseline_report = path(key, v)?,
            "eval_targets" => {
                self.eval_targets = match string(key, v)?.as_str() {
                    "hard" => Targets::Hard,
                    "all" => Targets::All,
                    other => {
                        return Err(ConfigError::new(
                            key,
                            format!("expected hard or all, got `{other}`"),
                        ))
                    }
                }
            }
            "query_types" => self.query_types = query_types(key, v)?,
            "queries_per_type" => self.queries_per_type = positive(key, v)?,
            "queries_split" => {
                self.queries_split = match string(key, v)?.as_str() {
                    "train" => Split::Train,
                    "eval" => Split::Eval,
                    other => {
                        return Err(ConfigError::new(
                            key,
                            format!("expected train or eval, got `{other}`"),
                        ))
                    }
                }
            }
            "queries_output" => self.queries_output = path(key, v)?,
            "top_k" => self.top_k = positive(key, v)?,
            "synthetic_entities" => self.synthetic_entities = count(key, v)?,
            "synthetic_relations" => self.synthetic_relations = positive(key, v)?,
            "synthetic_triples" => self.synthetic_triples = count(key, v)?,
            "synthetic_holdout" => {
                let h = nonnegative(key, v)?;
                if h >= 1.0 {
                    return Err(ConfigError::new(key, "must be below 1"));
                }
                self.synthetic_holdout = h;
            }
            "bench_samples" => {
                let list = v
                    .as_array()
                    .ok_or_else(|| ConfigError::new(key, "expected a list of counts"))?;
                self.bench_samples = list
                    .iter()
                    .map(|x| count(key, x))
                    .collect::<Result<_, _>>()?;
                if self.bench_samples.is_empty() {
                    return Err(ConfigError::new(key, "needs at least one value"));
                }
            }
            "bench_calls" => self.bench_calls = positive(key, v)?,
            _ => return Err(ConfigError::new(key, "unknown key")),
        }
        Ok(())
    }

    /// Fills derived values so the echo shows exactly what runs.
    pub fn resolve(&mut self) {
        if self.init_range.is_none() {
            self.init_range = Some((self.gamma + 2.0) / self.dim as f64);
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            backend: self.backend,
            dim: self.dim,
            structure: StructureDims {
                position: self.position_dim,
                role: self.role_dim,
                query_type: self.type_dim,
            },
            context: self.context.then_some(ContextFlags {
                use_position: self.use_position,
                use_role: self.use_role,
                use_type: self.use_type,
                use_relation_induced: self.use_relation_induced,
            }),
            context_samples: self.context_samples,
            context_seed: self.seed,
            alpha_in: self.alpha_in,
            init_range: self
                .init_range
                .unwrap_or((self.gamma + 2.0) / self.dim as f64),
            init_seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            negatives: self.negatives,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            variance_weight: self.variance_weight,
            max_steps: self.max_steps,
            seed: self.seed,
            workers: self.workers,
            precision: self.precision,
        }
    }

    /// One-line JSON echo with keys in a stable order.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }
}

fn parse_preset(v: &Value) -> Result<Preset, ConfigError> {
    match v.as_str() {
        Some("full") => Ok(Preset::Full),
        Some("desk") => Ok(Preset::Desk),
        _ => Err(ConfigError::new("preset", "expected full or desk")),
    }
}

impl std::str::FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_preset(&Value::String(s.to_string()))
    }
}

fn string(key: &str, v: &Value) -> Result<String, ConfigError> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| ConfigError::new(key, format!("expected a string, got {v}")))
}

fn path(key: &str, v: &Value) -> Result<Option<String>, ConfigError> {
    match v {
        Value::Null => Ok(None),
        _ => string(key, v).map(Some),
    }
}

fn boolean(key: &str, v: &Value) -> Result<bool, ConfigError> {
    v.as_bool()
        .ok_or_else(|| ConfigError::new(key, format!("expected true or false, got {v}")))
}

fn count(key: &str, v: &Value) -> Result<usize, ConfigError> {
    match v.as_i64() {
        Some(n) if n < 0 => Err(ConfigError::new(
            key,
            format!("must be nonnegative, got {n}"),
        )),
        Some(n) => Ok(n as usize),
        None => v
            .as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| ConfigError::new(key, format!("expected an integer, got {v}"))),
    }
}

fn positive(key: &str, v: &Value) -> Result<usize, ConfigError> {
    match count(key, v)? {
        0 => Err(ConfigError::new(key, "must be at least 1")),
        n => Ok(n),
    }
}

fn number(key: &str, v: &Value) -> Result<f64, ConfigError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| ConfigError::new(key, format!("expected a finite number, got {v}")))
}

fn nonnegative(key: &str, v: &Value) -> Result<f64, ConfigError> {
    let x = number(key, v)?;
    if x < 0.0 {
        return Err(ConfigError::new(
            key,
            format!("must be nonnegative, got {x}"),
        ));
    }
    Ok(x)
}

fn strictly_positive(key: &str, v: &Value) -> Result<f64, ConfigError> {
    let x = number(key, v)?;
    if x <= 0.0 {
        return Err(ConfigError::new(key, format!("must be positive, got {x}")));
    }
    Ok(x)
}

fn query_types(key: &str, v: &Value) -> Result<Vec<QueryType>, ConfigError> {
    let names: Vec<String> = match v {
        Value::String(s) if s == "all" => return Ok(QueryType::ALL.to_vec()),
        Value::String(s) => s.split(',').map(|x| x.trim().to_string()).collect(),
        Value::Array(items) => items
            .iter()
            .map(|x| string(key, x))
            .collect::<Result<_, _>>()?,
        _ => return Err(ConfigError::new(key, "expected a list of query type names")),
    };
    let types: Vec<QueryType> = names
        .iter()
        .map(|n| n.parse().map_err(|e| ConfigError::new(key, format!("{e}"))))
        .collect::<Result<_, _>>()?;
    if types.is_empty() {
        return Err(ConfigError::new(key, "needs at least one type"));
    }
    Ok(types)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> Map<String, Value> {
        serde_json::from_str(text).unwrap()
    }

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_document(&doc("{}"), Preset::Full).unwrap();
        assert_eq!(cfg, RunConfig::preset(Preset::Full));
        assert_eq!(cfg.context_samples, 120);
        assert_eq!(
            (cfg.position_dim, cfg.role_dim, cfg.type_dim),
            (108, 108, 108)
        );
    }

    #[test]
    fn unknown_and_invalid_keys_are_named() {
        let err = RunConfig::from_document(&doc(r#"{"foo": 1}"#), Preset::Full).unwrap_err();
        assert_eq!(err.key, "foo");
        let err = RunConfig::from_document(&doc(r#"{"K": -1}"#), Preset::Full).unwrap_err();
        assert_eq!(err.key, "K");
        let err = RunConfig::from_document(&doc(r#"{"gamma": 0}"#), Preset::Full).unwrap_err();
        assert_eq!(err.key, "gamma");
    }

    #[test]
    fn overrides_follow_file_values() {
        let mut cfg =
            RunConfig::from_document(&doc(r#"{"preset": "desk", "dim": 8}"#), Preset::Full)
                .unwrap();
        assert_eq!(cfg.preset, Preset::Desk);
        assert_eq!(cfg.negatives, 16);
        cfg.apply_override("dim=12").unwrap();
        cfg.apply_override("backend=beta").unwrap();
        cfg.apply_override("query_types=1p,2i").unwrap();
        assert_eq!(cfg.dim, 12);
        assert_eq!(cfg.backend, Backend::Beta);
        assert_eq!(cfg.query_types, vec![QueryType::P1, QueryType::I2]);
        assert_eq!(cfg.apply_override("K=-1").unwrap_err().key, "K");
    }

    #[test]
    fn echo_materialises_derived_values() {
        let mut cfg = RunConfig::preset(Preset::Desk);
        cfg.resolve();
        let echoed: Value = serde_json::from_str(&cfg.echo()).unwrap();
        assert_eq!(echoed["init_range"], Value::from(0.5));
        assert_eq!(echoed["K"], Value::from(120));
        assert_eq!(echoed["query_types"][0], Value::from("1p"));
    }
}
