//! Probe harness for vision-language models: canonical scene-graph corpora,
//! taxonomy tagging, hard-negative generation, scoring and reporting.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, with `*F32` variants for single precision.

pub mod config;
pub mod embeddings;
pub mod ingestion;
pub mod metrics;
pub mod negatives;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod scoring;
pub mod taxonomy;

pub use scalar::Scalar;

pub type BBox = ingestion::BBox<f64>;
pub type SceneObject = ingestion::SceneObject<f64>;
pub type CanonicalSample = ingestion::CanonicalSample<f64>;
pub type EmbeddingVector = embeddings::EmbeddingVector<f64>;
pub type VocabularyIndex = embeddings::VocabularyIndex<f64>;
pub type SizeThresholds = taxonomy::SizeThresholds<f64>;
pub type GenerationPolicy = negatives::GenerationPolicy<f64>;
pub type ProbePair = negatives::ProbePair<f64>;
pub type ScoreRequest = scoring::ScoreRequest<f64>;
pub type ScoredPair = scoring::ScoredPair<f64>;
pub type BucketAccuracy = metrics::BucketAccuracy<f64>;
pub type ModelSummary = metrics::ModelSummary<f64>;
pub type ReportDocument = report::ReportDocument<f64>;

pub type BBoxF32 = ingestion::BBox<f32>;
pub type CanonicalSampleF32 = ingestion::CanonicalSample<f32>;
pub type VocabularyIndexF32 = embeddings::VocabularyIndex<f32>;
pub type ProbePairF32 = negatives::ProbePair<f32>;
pub type ScoredPairF32 = scoring::ScoredPair<f32>;
pub type BucketAccuracyF32 = metrics::BucketAccuracy<f32>;
