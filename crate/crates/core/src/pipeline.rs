//! The stages behind each command: ingest, generate, score, report, run.
//! Every stage reads and writes declared files only.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Adapter, ConfigError, RunConfig, ScorerKind};
use crate::embeddings::{Embedder, EmbeddingError, RemoteEmbedder, VocabularyIndex};
use crate::ingestion::{
    adapt_vg_region_graph, parse_canonical, retain_accepted, validate_corpus, write_canonical,
    CanonicalSample, IngestError, ValidationReport,
};
use crate::metrics::{group_average, MetricsError, ModelSummary};
use crate::negatives::{parse_probe_set, write_probe_set, GenerationReport, NegativeError, ProbePair, ProbeSet};
use crate::report::{write_report_dir, ReportDocument, RunMetadata};
use crate::scoring::{
    default_references, parse_scored_pairs, score_probe_set, write_scored_pairs, DispatchStats,
    HttpTransport, OracleScorer, ScoredPair, ScorerTransport, ScoringError, SubprocessTransport,
};
use crate::taxonomy::{AttributePrototypes, SizeThresholds, SpatialLexicon, TaggingContext, TaxonomyError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Negative(#[from] NegativeError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Json { path: String, message: String },
    #[error("{count} sample(s) rejected; see {report}")]
    Rejected { count: usize, report: String },
    #[error("{path} was produced under config {found}, expected {expected} (use --force to mix)")]
    HashMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("model id `{0}` appears in more than one scored file")]
    DuplicateModel(String),
    #[error("{0}: no scored files given")]
    NothingToReport(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write(path: &Path, body: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, body).map_err(io_err(path))
}

fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(&serde_json::to_value(value).expect("serializable"))
        .expect("serializable");
    s.push('\n');
    s
}

/// Metadata written next to probe and scored files as `<file>.meta.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub config_hash: String,
    pub seed: u64,
    pub corpus: Vec<String>,
    #[serde(default)]
    pub scorer_id: Option<String>,
    #[serde(default)]
    pub generation: Option<GenerationReport>,
    #[serde(default)]
    pub dispatch: Option<DispatchStats>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn read_meta(path: &Path) -> Result<Option<ArtifactMeta>, PipelineError> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = read(&side)?;
    serde_json::from_str(&text).map(Some).map_err(|e| PipelineError::Json {
        path: side.display().to_string(),
        message: e.to_string(),
    })
}

fn write_meta(path: &Path, meta: &ArtifactMeta) -> Result<(), PipelineError> {
    write(&sidecar_path(path), &to_pretty(meta))
}

// ---------------------------------------------------------------------------
// Ingest
// ---------------------------------------------------------------------------

pub fn read_corpus(paths: &[PathBuf], adapter: Adapter) -> Result<Vec<CanonicalSample<f64>>, PipelineError> {
    let mut samples = Vec::new();
    for path in paths {
        let text = read(path)?;
        let parsed = match adapter {
            Adapter::Canonical => parse_canonical(&text),
            Adapter::Vg => adapt_vg_region_graph(&text),
        };
        samples.extend(parsed.map_err(|e| PipelineError::Json {
            path: path.display().to_string(),
            message: e.to_string(),
        })?);
    }
    Ok(samples)
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub report: ValidationReport,
    pub canonical: PathBuf,
    pub validation: PathBuf,
    pub samples: Vec<CanonicalSample<f64>>,
}

/// Writes the accepted samples to `canonical.jsonl` and the validation
/// report to `validation.json` under `out_dir`.
pub fn ingest(paths: &[PathBuf], adapter: Adapter, out_dir: &Path) -> Result<IngestOutcome, PipelineError> {
    let samples = read_corpus(paths, adapter)?;
    let report = validate_corpus(&samples);
    let accepted = retain_accepted(samples, &report);
    let canonical = out_dir.join("canonical.jsonl");
    let validation = out_dir.join("validation.json");
    write(&canonical, &write_canonical(&accepted))?;
    write(&validation, &to_pretty(&report))?;
    Ok(IngestOutcome {
        report,
        canonical,
        validation,
        samples: accepted,
    })
}

// ---------------------------------------------------------------------------
// Generate
// ---------------------------------------------------------------------------

pub fn load_embedder(cfg: &RunConfig) -> Result<Box<dyn Embedder<f64>>, PipelineError> {
    match (&cfg.embeddings.vector_file, &cfg.embeddings.endpoint) {
        (Some(file), _) => Ok(Box::new(VocabularyIndex::<f64>::load_vector_file(file)?)),
        (None, Some(url)) => Ok(Box::new(RemoteEmbedder::<f64>::new(url.clone(), cfg.embeddings.retry))),
        (None, None) => Err(ConfigError::Invalid("no embedding source".into()).into()),
    }
}

pub fn generate_probes(cfg: &RunConfig, samples: &[CanonicalSample<f64>]) -> Result<ProbeSet<f64>, PipelineError> {
    let lexicon = SpatialLexicon::load(&cfg.lexicon)?;
    let prototypes = AttributePrototypes::load(&cfg.prototypes)?;
    let embedder = load_embedder(cfg)?;
    let ctx = TaggingContext {
        thresholds: SizeThresholds::new(cfg.thresholds.small_max, cfg.thresholds.medium_max)?,
        lexicon: &lexicon,
        prototypes: &prototypes,
        embedder: embedder.as_ref(),
        min_assign_similarity: cfg.min_assign_similarity,
    };
    Ok(crate::negatives::build_probe_set(samples, &cfg.generation_policy(), &ctx, cfg.jobs())?)
}

/// Generates from a canonical file and writes `out` plus its sidecar.
pub fn generate(cfg: &RunConfig, canonical: &Path, out: &Path) -> Result<ProbeSet<f64>, PipelineError> {
    let samples = parse_canonical::<f64>(&read(canonical)?)?;
    let set = generate_probes(cfg, &samples)?;
    write(out, &write_probe_set(&set.pairs))?;
    write_meta(
        out,
        &ArtifactMeta {
            config_hash: cfg.config_hash()?,
            seed: cfg.seed,
            corpus: cfg.corpus_ids(),
            generation: Some(set.report.clone()),
            ..Default::default()
        },
    )?;
    Ok(set)
}

// ---------------------------------------------------------------------------
// Score
// ---------------------------------------------------------------------------

pub fn open_transport(
    cfg: &RunConfig,
    pairs: &[ProbePair<f64>],
) -> Result<Box<dyn ScorerTransport<f64>>, PipelineError> {
    let timeout = Duration::from_millis(cfg.batching.timeout_ms);
    Ok(match cfg.scorer.kind()? {
        ScorerKind::Oracle(spec) => {
            let references = match spec.references {
                Some(path) => serde_json::from_str(&read(&path)?).map_err(|e| PipelineError::Json {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?,
                None => default_references(pairs),
            };
            Box::new(OracleScorer::new(references))
        }
        ScorerKind::Subprocess(argv) => Box::new(SubprocessTransport::spawn(&argv, timeout)?),
        ScorerKind::Http(url) => Box::new(HttpTransport::new(url, timeout)),
    })
}

#[derive(Debug, Clone)]
pub struct ScoreOutcome {
    pub scored: Vec<ScoredPair<f64>>,
    pub stats: DispatchStats,
    /// Pairs taken over from an existing scored file.
    pub resumed: usize,
}

/// Scores a probe file into `out`. With `resume`, pairs already present in
/// `out` are kept and only the rest are sent to the scorer.
pub fn score(cfg: &RunConfig, probes: &Path, out: &Path, resume: bool) -> Result<ScoreOutcome, PipelineError> {
    let pairs = parse_probe_set::<f64>(&read(probes)?)?;
    let probe_meta = read_meta(probes)?;
    let config_hash = match &probe_meta {
        Some(m) => m.config_hash.clone(),
        None => cfg.config_hash()?,
    };

    let mut done: BTreeMap<String, ScoredPair<f64>> = BTreeMap::new();
    if resume && out.exists() {
        if let Some(meta) = read_meta(out)? {
            if meta.config_hash != config_hash {
                return Err(PipelineError::HashMismatch {
                    path: out.display().to_string(),
                    expected: config_hash,
                    found: meta.config_hash,
                });
            }
        }
        let wanted: BTreeSet<&str> = pairs.iter().map(|p| p.pair_id.as_str()).collect();
        for s in parse_scored_pairs::<f64>(&read(out)?)? {
            if wanted.contains(s.pair_id.as_str()) {
                done.insert(s.pair_id.clone(), s);
            }
        }
    }
    let todo: Vec<ProbePair<f64>> = pairs
        .iter()
        .filter(|p| !done.contains_key(&p.pair_id))
        .cloned()
        .collect();

    let mut stats = DispatchStats::default();
    if !todo.is_empty() {
        // References for the oracle come from the full probe set, so a
        // resumed run scores exactly as a fresh one.
        let mut transport = open_transport(cfg, &pairs)?;
        let result = score_probe_set(&todo, transport.as_mut(), &cfg.batching);
        transport.close()?;
        let (fresh, s) = result?;
        stats = s;
        for p in fresh {
            done.insert(p.pair_id.clone(), p);
        }
    }
    let resumed = pairs.len() - todo.len();
    let scored: Vec<ScoredPair<f64>> = pairs
        .iter()
        .map(|p| done.remove(&p.pair_id).expect("every pair scored"))
        .collect();
    write(out, &write_scored_pairs(&scored))?;
    write_meta(
        out,
        &ArtifactMeta {
            config_hash,
            seed: probe_meta.as_ref().map_or(cfg.seed, |m| m.seed),
            corpus: probe_meta.as_ref().map_or_else(|| cfg.corpus_ids(), |m| m.corpus.clone()),
            scorer_id: Some(cfg.scorer_id()),
            generation: probe_meta.and_then(|m| m.generation),
            dispatch: Some(stats.clone()),
        },
    )?;
    Ok(ScoreOutcome { scored, stats, resumed })
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

pub const GEOMETRY_NOTE: &str =
    "image-level size/location of attribute pairs uses the owning object's box; of relation pairs, the subject's box";

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub groups: Option<PathBuf>,
    pub force: bool,
    pub bootstrap: Option<usize>,
}

pub fn build_report(scored: &[PathBuf], opts: &ReportOptions) -> Result<ReportDocument<f64>, PipelineError> {
    let first = scored
        .first()
        .ok_or_else(|| PipelineError::NothingToReport("report".into()))?;
    let mut models = Vec::new();
    let mut metas = Vec::new();
    let mut seen = BTreeSet::new();
    let mut warnings = Vec::new();
    for path in scored {
        let pairs = parse_scored_pairs::<f64>(&read(path)?)?;
        let meta = read_meta(path)?.unwrap_or_default();
        let id = meta.scorer_id.clone().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string())
        });
        if !seen.insert(id.clone()) {
            return Err(PipelineError::DuplicateModel(id));
        }
        let mut summary = ModelSummary::from_pairs(id, &pairs);
        if let Some(resamples) = opts.bootstrap {
            summary = summary.with_intervals(&pairs, resamples, meta.seed);
        }
        models.push(summary);
        metas.push((path, meta));
    }

    let (_, head) = &metas[0];
    for (path, meta) in &metas[1..] {
        if meta.config_hash != head.config_hash {
            if !opts.force {
                return Err(PipelineError::HashMismatch {
                    path: path.display().to_string(),
                    expected: head.config_hash.clone(),
                    found: meta.config_hash.clone(),
                });
            }
            warnings.push(format!(
                "{} has config hash {} (mixed with {})",
                path.display(),
                meta.config_hash,
                head.config_hash
            ));
        }
    }

    let groups = match &opts.groups {
        Some(path) => {
            let map: BTreeMap<String, Vec<String>> =
                serde_json::from_str(&read(path)?).map_err(|e| PipelineError::Json {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            group_average(&models, &map)?
        }
        None => Vec::new(),
    };

    let scorer_ids: Vec<String> = models.iter().map(|m| m.model.clone()).collect();
    let metadata = RunMetadata {
        config_hash: head.config_hash.clone(),
        seed: head.seed,
        corpus: head.corpus.clone(),
        scorer_id: scorer_ids.join(","),
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        notes: vec![GEOMETRY_NOTE.to_string()],
    };
    let mut doc = ReportDocument::new(metadata, models, groups, head.generation.clone());
    doc.warnings.extend(warnings);
    log::debug!("report built from {} file(s), first {}", scored.len(), first.display());
    Ok(doc)
}

pub fn report(scored: &[PathBuf], out_dir: &Path, opts: &ReportOptions) -> Result<ReportDocument<f64>, PipelineError> {
    let doc = build_report(scored, opts)?;
    write_report_dir(&doc, out_dir).map_err(io_err(out_dir))?;
    Ok(doc)
}

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub validation: ValidationReport,
    pub pairs: usize,
    pub stats: DispatchStats,
    pub report: ReportDocument<f64>,
}

/// All stages into `out_dir`: canonical.jsonl, validation.json,
/// probes.jsonl, scored.jsonl (each data file with its sidecar), then the
/// report files.
pub fn run(cfg: &RunConfig, out_dir: &Path, allow_rejects: bool, opts: &ReportOptions) -> Result<RunOutcome, PipelineError> {
    let ingested = ingest(&cfg.corpus, cfg.adapter, out_dir)?;
    if !ingested.report.rejected.is_empty() && !allow_rejects {
        return Err(PipelineError::Rejected {
            count: ingested.report.rejected.len(),
            report: ingested.validation.display().to_string(),
        });
    }
    let probes = out_dir.join("probes.jsonl");
    let set = generate(cfg, &ingested.canonical, &probes)?;
    let scored_path = out_dir.join("scored.jsonl");
    let scored = score(cfg, &probes, &scored_path, false)?;
    let opts = ReportOptions {
        bootstrap: opts.bootstrap.or(cfg.bootstrap),
        ..opts.clone()
    };
    let doc = report(&[scored_path], out_dir, &opts)?;
    Ok(RunOutcome {
        validation: ingested.report,
        pairs: set.pairs.len(),
        stats: scored.stats,
        report: doc,
    })
}
