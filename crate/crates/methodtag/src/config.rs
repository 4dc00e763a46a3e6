//! TOML pipeline configuration.
//!
//! Every key is optional. Relative paths are resolved against the directory
//! holding the config file. The top-level `seed` and `with_fulltext` drive
//! every stage, so `[train]` must not repeat them.

use std::path::{Path, PathBuf};

use methodtag_core::annotate::DEFAULT_MIN_SCORE;
use methodtag_core::cluster::{LinkageMethod, Metric};
use methodtag_core::corpus::MAX_RESULTS_CAP;
use methodtag_core::model::ModelConfig;
use methodtag_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::client::{DEFAULT_CHUNK_SIZE, DEFAULT_REQUESTS_PER_SECOND, DEFAULT_RETRIES};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid config: {field} must satisfy {constraint}")]
    Invalid { field: String, constraint: String },
    #[error("paths.{field}: {} does not exist", path.display())]
    MissingInput { field: &'static str, path: PathBuf },
}

fn invalid(field: &str, constraint: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        constraint: constraint.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub ontology: PathBuf,
    pub vocab: PathBuf,
    pub pmids: PathBuf,
    pub corpus: PathBuf,
    pub lexicon: PathBuf,
    pub label_space: PathBuf,
    pub labels: PathBuf,
    pub annotations: PathBuf,
    pub checkpoint: PathBuf,
    /// Directory for curve, metrics, dendrogram and prediction files.
    pub outputs: PathBuf,
    /// Fixture directory for the offline retrieval client.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            ontology: "ontology.obo".into(),
            vocab: "vocab.txt".into(),
            pmids: "pmids.txt".into(),
            corpus: "corpus.jsonl".into(),
            lexicon: "lexicon.json".into(),
            label_space: "label_space.json".into(),
            labels: "labels.csv".into(),
            annotations: "annotations.jsonl".into(),
            checkpoint: "model.ckpt".into(),
            outputs: "outputs".into(),
            fixtures: None,
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.ontology,
            &mut self.vocab,
            &mut self.pmids,
            &mut self.corpus,
            &mut self.lexicon,
            &mut self.label_space,
            &mut self.labels,
            &mut self.annotations,
            &mut self.checkpoint,
            &mut self.outputs,
        ] {
            join(p);
        }
        if let Some(p) = self.fixtures.as_mut() {
            join(p);
        }
    }

    pub fn curve(&self) -> PathBuf {
        self.outputs.join("curve.csv")
    }

    pub fn metrics(&self) -> PathBuf {
        self.outputs.join("metrics.json")
    }

    pub fn predictions(&self) -> PathBuf {
        self.outputs.join("predictions.jsonl")
    }

    pub fn dendrogram_dir(&self) -> PathBuf {
        self.outputs.join("dendrogram")
    }
}

/// Encoder dimensions; vocabulary size and label count come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let desk = ModelConfig::desk(1, 1);
        ModelSection {
            d_model: desk.d_model,
            heads: desk.heads,
            n_layers: desk.n_layers,
            d_ff: desk.d_ff,
            max_positions: desk.max_positions,
            dropout_rate: desk.dropout_rate,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize, num_labels: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            heads: self.heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            vocab_size,
            max_positions: self.max_positions,
            num_labels,
            dropout_rate: self.dropout_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSection {
    /// Ontology ids whose subtrees form the lexicon.
    pub roots: Vec<String>,
    pub include_synonyms: bool,
    pub min_score: u32,
}

impl Default for AnnotateSection {
    fn default() -> Self {
        AnnotateSection {
            roots: Vec::new(),
            include_synonyms: false,
            min_score: DEFAULT_MIN_SCORE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub method: LinkageMethod,
    pub metric: Metric,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncate: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FetchSection {
    pub max_results: usize,
    pub chunk_size: usize,
    pub requests_per_second: f64,
    pub retries: usize,
}

impl Default for FetchSection {
    fn default() -> Self {
        FetchSection {
            max_results: MAX_RESULTS_CAP,
            chunk_size: DEFAULT_CHUNK_SIZE,
            requests_per_second: DEFAULT_REQUESTS_PER_SECOND,
            retries: DEFAULT_RETRIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub with_fulltext: bool,
    pub paths: Paths,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub annotate: AnnotateSection,
    pub cluster: ClusterSection,
    pub fetch: FetchSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        PipelineConfig {
            seed: train.seed,
            with_fulltext: train.with_fulltext,
            paths: Paths::default(),
            model: ModelSection::default(),
            train,
            annotate: AnnotateSection::default(),
            cluster: ClusterSection::default(),
            fetch: FetchSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML text, resolving relative paths against `base`, and validates.
    pub fn from_toml_str(raw: &str, origin: &str, base: &Path) -> Result<Self, ConfigError> {
        let parse_err = |message: String| ConfigError::Parse {
            origin: origin.to_string(),
            message,
        };
        let tree: toml::Table = toml::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
        if let Some(train) = tree.get("train").and_then(toml::Value::as_table) {
            for key in ["seed", "with_fulltext"] {
                if train.contains_key(key) {
                    return Err(parse_err(format!("train.{key} is set by the top-level `{key}` key")));
                }
            }
        }
        let mut config: PipelineConfig = toml::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
        config.paths.resolve(base);
        config.sync();
        config.validate()?;
        Ok(config)
    }

    /// Copies the pipeline-wide keys into the stage sections.
    pub fn sync(&mut self) {
        self.train.seed = self.seed;
        self.train.with_fulltext = self.with_fulltext;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.validate().map_err(|e| {
            let message = e.to_string();
            let (field, constraint) = message
                .trim_start_matches("invalid train config: ")
                .split_once(" must satisfy ")
                .map(|(f, c)| (format!("train.{f}"), c.to_string()))
                .unwrap_or_else(|| ("train".into(), message.clone()));
            invalid(&field, constraint)
        })?;
        let m = &self.model;
        if m.d_model == 0 || m.heads == 0 || m.d_ff == 0 || m.n_layers == 0 {
            return Err(invalid("model", "d_model, heads, n_layers and d_ff >= 1"));
        }
        if m.d_model % m.heads != 0 {
            return Err(invalid("model.heads", format!("divides d_model ({})", m.d_model)));
        }
        if m.max_positions < 2 {
            return Err(invalid("model.max_positions", ">= 2"));
        }
        if !(0.0..1.0).contains(&m.dropout_rate) {
            return Err(invalid("model.dropout_rate", "0 <= dropout_rate < 1"));
        }
        if self.cluster.method == LinkageMethod::Ward && self.cluster.metric != Metric::Euclidean {
            return Err(invalid("cluster.metric", "euclidean when method = ward"));
        }
        if self.cluster.truncate == Some(0) {
            return Err(invalid("cluster.truncate", ">= 1"));
        }
        let f = &self.fetch;
        if f.max_results > MAX_RESULTS_CAP {
            return Err(invalid("fetch.max_results", format!("<= {MAX_RESULTS_CAP}")));
        }
        if !(1..=DEFAULT_CHUNK_SIZE).contains(&f.chunk_size) {
            return Err(invalid("fetch.chunk_size", format!("1 <= chunk_size <= {DEFAULT_CHUNK_SIZE}")));
        }
        if !(f.requests_per_second > 0.0 && f.requests_per_second <= DEFAULT_REQUESTS_PER_SECOND) {
            return Err(invalid(
                "fetch.requests_per_second",
                format!("0 < requests_per_second <= {DEFAULT_REQUESTS_PER_SECOND}"),
            ));
        }
        if f.retries < 1 {
            return Err(invalid("fetch.retries", ">= 1"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        let mut tree = toml::Table::try_from(self).expect("serializable config");
        if let Some(train) = tree.get_mut("train").and_then(toml::Value::as_table_mut) {
            train.remove("seed");
            train.remove("with_fulltext");
        }
        toml::to_string(&tree).expect("serializable config")
    }
}

/// Loads and validates a config file.
pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    PipelineConfig::from_toml_str(&raw, &path.display().to_string(), base)
}

/// Fails on the first listed input path that does not exist.
pub fn require_inputs(inputs: &[(&'static str, &Path)]) -> Result<(), ConfigError> {
    for &(field, path) in inputs {
        if !path.exists() {
            return Err(ConfigError::MissingInput {
                field,
                path: path.to_path_buf(),
            });
        }
    }
    Ok(())
}
