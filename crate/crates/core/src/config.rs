//! Run configuration: one JSON file, paths relative to the file, overridable
//! from the command line.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embeddings::RetryPolicy;
use crate::negatives::{CaptionTemplates, GenerationPolicy, LocalMode};
use crate::scoring::Batching;
use crate::taxonomy::{Aspect, SizeThresholds};

pub const SCORER_URL_ENV: &str = "VLPROBE_SCORER_URL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {message}")]
    Json { path: String, message: String },
    #[error("config is missing required field `{0}`")]
    MissingField(&'static str),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adapter {
    #[default]
    Canonical,
    Vg,
}

impl FromStr for Adapter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(Self::Canonical),
            "vg" => Ok(Self::Vg),
            other => Err(format!("unknown adapter `{other}` (expected canonical or vg)")),
        }
    }
}

impl fmt::Display for Adapter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Canonical => "canonical",
            Self::Vg => "vg",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSource {
    pub vector_file: Option<PathBuf>,
    pub endpoint: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    /// JSON object mapping image uri to reference caption. Defaults to the
    /// positive captions of each image.
    pub references: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSpec {
    pub oracle: Option<OracleSpec>,
    /// Command and arguments of a scorer speaking the JSONL protocol.
    pub subprocess: Option<Vec<String>>,
    /// Base URL of a scorer serving /hello and /score.
    pub http: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerKind {
    Oracle(OracleSpec),
    Subprocess(Vec<String>),
    Http(String),
}

impl ScorerSpec {
    pub fn kind(&self) -> Result<ScorerKind, ConfigError> {
        match (&self.oracle, &self.subprocess, &self.http) {
            (Some(o), None, None) => Ok(ScorerKind::Oracle(o.clone())),
            (None, Some(argv), None) if !argv.is_empty() => Ok(ScorerKind::Subprocess(argv.clone())),
            (None, Some(_), None) => Err(ConfigError::Invalid("scorer.subprocess is empty".into())),
            (None, None, Some(url)) => Ok(ScorerKind::Http(url.clone())),
            _ => Err(ConfigError::Invalid(
                "exactly one of scorer.oracle, scorer.subprocess, scorer.http must be set".into(),
            )),
        }
    }

    /// Identifier recorded with scored output when the config names none.
    pub fn default_id(&self) -> String {
        match self.kind() {
            Ok(ScorerKind::Oracle(_)) => "oracle".into(),
            Ok(ScorerKind::Subprocess(argv)) => argv.join(" "),
            Ok(ScorerKind::Http(url)) => url,
            Err(_) => "unknown".into(),
        }
    }
}

fn default_seed_placeholder() -> u64 {
    0
}
fn default_max_similarity() -> f64 {
    0.5
}
fn default_min_assign() -> f64 {
    0.3
}
fn default_min_candidates() -> usize {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Vec<PathBuf>,
    #[serde(default)]
    pub adapter: Adapter,
    #[serde(default = "default_seed_placeholder")]
    pub seed: u64,
    #[serde(default)]
    pub thresholds: SizeThresholds<f64>,
    #[serde(default = "default_max_similarity")]
    pub max_similarity: f64,
    #[serde(default = "default_min_assign")]
    pub min_assign_similarity: f64,
    #[serde(default = "default_min_candidates")]
    pub min_candidates: usize,
    #[serde(default)]
    pub templates: CaptionTemplates,
    pub lexicon: PathBuf,
    pub prototypes: PathBuf,
    pub embeddings: EmbeddingSource,
    pub scorer: ScorerSpec,
    #[serde(default)]
    pub scorer_id: Option<String>,
    #[serde(default)]
    pub batching: Batching,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub local_variant: Option<LocalMode>,
    #[serde(default)]
    pub aspects: Option<Vec<Aspect>>,
    #[serde(default)]
    pub exclude: Vec<String>,
    #[serde(default = "default_true")]
    pub dedupe: bool,
    #[serde(default)]
    pub jobs: Option<usize>,
    /// Bootstrap resamples for aspect-level confidence intervals; off when
    /// unset.
    #[serde(default)]
    pub bootstrap: Option<usize>,
}

const REQUIRED: [&str; 6] = ["corpus", "seed", "lexicon", "prototypes", "embeddings", "scorer"];

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub local_variant: Option<LocalMode>,
    pub aspects: Option<Vec<Aspect>>,
    pub scorer_id: Option<String>,
    /// Replaces the HTTP scorer URL; ignored for other scorer kinds.
    pub scorer_url: Option<String>,
}

impl Overrides {
    /// Reads the scorer URL override from the environment.
    pub fn with_env(mut self) -> Self {
        if self.scorer_url.is_none() {
            self.scorer_url = std::env::var(SCORER_URL_ENV).ok().filter(|s| !s.is_empty());
        }
        self
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_json(&text, base).map_err(|e| match e {
            ConfigError::Json { message, .. } => ConfigError::Json {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    /// Parses and validates; relative paths are resolved against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let json_err = |message: String| ConfigError::Json {
            path: "<config>".into(),
            message,
        };
        let value: Value = serde_json::from_str(text).map_err(|e| json_err(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| ConfigError::Invalid("top level must be an object".into()))?;
        for field in REQUIRED {
            if !obj.contains_key(field) {
                return Err(ConfigError::MissingField(field));
            }
        }
        let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| json_err(e.to_string()))?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpus.iter_mut().for_each(fix);
        fix(&mut self.lexicon);
        fix(&mut self.prototypes);
        if let Some(v) = self.embeddings.vector_file.as_mut() {
            fix(v);
        }
        if let Some(r) = self.scorer.oracle.as_mut().and_then(|o| o.references.as_mut()) {
            fix(r);
        }
        if let Some(o) = self.out.as_mut() {
            fix(o);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.corpus.is_empty() {
            return Err(ConfigError::Invalid("corpus lists no files".into()));
        }
        match (&self.embeddings.vector_file, &self.embeddings.endpoint) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(ConfigError::Invalid(
                    "exactly one of embeddings.vector_file, embeddings.endpoint must be set".into(),
                ))
            }
        }
        self.scorer.kind()?;
        SizeThresholds::new(self.thresholds.small_max, self.thresholds.medium_max)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.max_similarity.is_finite() && (-1.0..=1.0).contains(&self.max_similarity)) {
            return Err(ConfigError::Invalid("max_similarity must lie in [-1, 1]".into()));
        }
        if self.batching.batch_size == 0 || self.batching.max_in_flight == 0 {
            return Err(ConfigError::Invalid("batch_size and max_in_flight must be positive".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(jobs) = o.jobs {
            self.jobs = Some(jobs);
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if o.local_variant.is_some() {
            self.local_variant = o.local_variant;
        }
        if let Some(aspects) = &o.aspects {
            self.aspects = Some(aspects.clone());
        }
        if let Some(id) = &o.scorer_id {
            self.scorer_id = Some(id.clone());
        }
        if let (Some(url), Some(_)) = (&o.scorer_url, &self.scorer.http) {
            self.scorer.http = Some(url.clone());
        }
    }

    pub fn jobs(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }

    pub fn scorer_id(&self) -> String {
        self.scorer_id.clone().unwrap_or_else(|| self.scorer.default_id())
    }

    pub fn generation_policy(&self) -> GenerationPolicy<f64> {
        let mut policy = GenerationPolicy {
            seed: self.seed,
            max_similarity: self.max_similarity,
            min_candidates: self.min_candidates,
            templates: self.templates.clone(),
            local_variant: self.local_variant,
            exclude: self.exclude.iter().cloned().collect(),
            dedupe: self.dedupe,
            ..GenerationPolicy::default()
        };
        if let Some(aspects) = &self.aspects {
            policy.aspects = aspects.iter().copied().collect::<BTreeSet<_>>();
        }
        policy
    }

    /// SHA-256 over everything that determines the probe set: input file
    /// contents, seed, thresholds, generation settings and the embedding
    /// source. Output location, worker count, scorer and batching are left
    /// out.
    pub fn config_hash(&self) -> Result<String, ConfigError> {
        let digest_file = |p: &Path| -> Result<String, ConfigError> {
            let bytes = fs::read(p).map_err(|source| ConfigError::Io {
                path: p.display().to_string(),
                source,
            })?;
            Ok(hex(&Sha256::digest(&bytes)))
        };
        let corpus = self
            .corpus
            .iter()
            .map(|p| digest_file(p))
            .collect::<Result<Vec<_>, _>>()?;
        let embeddings = match (&self.embeddings.vector_file, &self.embeddings.endpoint) {
            (Some(f), _) => json!({"vector_file": digest_file(f)?}),
            (None, Some(url)) => json!({"endpoint": url}),
            (None, None) => Value::Null,
        };
        let aspects: Option<BTreeSet<Aspect>> = self.aspects.as_ref().map(|a| a.iter().copied().collect());
        let exclude: BTreeSet<&String> = self.exclude.iter().collect();
        let input = json!({
            "adapter": self.adapter,
            "corpus": corpus,
            "seed": self.seed,
            "thresholds": self.thresholds,
            "max_similarity": self.max_similarity,
            "min_assign_similarity": self.min_assign_similarity,
            "min_candidates": self.min_candidates,
            "templates": self.templates,
            "lexicon": digest_file(&self.lexicon)?,
            "prototypes": digest_file(&self.prototypes)?,
            "embeddings": embeddings,
            "local_variant": self.local_variant,
            "aspects": aspects,
            "exclude": exclude,
            "dedupe": self.dedupe,
        });
        Ok(hex(&Sha256::digest(input.to_string().as_bytes())))
    }

    /// Corpus file names, as recorded in report metadata.
    pub fn corpus_ids(&self) -> Vec<String> {
        self.corpus
            .iter()
            .map(|p| {
                p.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string())
            })
            .collect()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
