//! Phrase embeddings and cosine similarity.
//!
//! Two providers implement [`Embedder`]: a [`VocabularyIndex`] loaded from a
//! word2vec-text file, and a [`RemoteEmbedder`] that talks to an HTTP
//! embedding service and caches responses per phrase.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("vector file line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("vector file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("vector file declares {declared} entries but holds {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("vector is empty, non-finite, or all zero")]
    DegenerateVector,
    #[error("phrase list is empty")]
    EmptyRequest,
    #[error("embedding endpoint {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("embedding endpoint {endpoint}: dimension drift ({expected} then {found})")]
    DimensionDrift {
        endpoint: String,
        expected: usize,
        found: usize,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A non-degenerate embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, EmbeddingError> {
        if values.is_empty()
            || values.iter().any(|v| !v.is_finite())
            || values.iter().all(|v| v.is_zero())
        {
            return Err(EmbeddingError::DegenerateVector);
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn norm(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    /// Unit-length copy.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self {
            values: self.values.iter().map(|&v| v / n).collect(),
        }
    }
}

/// `dot(a, b) / (|a| |b|)`, clamped into `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(
    a: &EmbeddingVector<T>,
    b: &EmbeddingVector<T>,
) -> Result<T, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let dot = a
        .values
        .iter()
        .zip(&b.values)
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
    let sim = dot / (a.norm() * b.norm());
    Ok(sim.max(-T::one()).min(T::one()))
}

/// Source of phrase embeddings. `Ok(None)` means the phrase is out of
/// vocabulary.
pub trait Embedder<T: Scalar>: Send + Sync {
    fn embed(&self, phrase: &str) -> Result<Option<EmbeddingVector<T>>, EmbeddingError>;

    /// Identifier recorded in run metadata.
    fn source_id(&self) -> String;
}

/// In-memory token table.
#[derive(Debug, Clone)]
pub struct VocabularyIndex<T> {
    tokens: HashMap<String, EmbeddingVector<T>>,
    dim: usize,
    source: String,
    duplicates: usize,
}

impl<T: Scalar> VocabularyIndex<T> {
    pub fn load_vector_file(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.display().to_string())
    }

    /// Parses word2vec text: a `count dim` header, then `token v1 .. vdim`
    /// per line. Tokens are lowercased; a repeated token replaces the earlier
    /// vector and bumps [`Self::duplicates`].
    pub fn parse(text: &str, source: impl Into<String>) -> Result<Self, EmbeddingError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(EmbeddingError::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let header_err = |message: &str| EmbeddingError::Parse {
            line: 1,
            message: message.into(),
        };
        let mut fields = header.split_whitespace();
        let count: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| header_err("header count is not an integer"))?;
        let dim: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| header_err("header dim is not an integer"))?;
        if dim == 0 {
            return Err(header_err("dimension must be positive"));
        }

        let mut tokens = HashMap::with_capacity(count);
        let mut duplicates = 0;
        let mut found = 0;
        for (idx, line) in lines {
            let line_no = idx + 1;
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap_or_default().to_lowercase();
            let values: Vec<T> = parts
                .map(|p| {
                    p.parse::<f64>().map(T::lit).map_err(|_| EmbeddingError::Parse {
                        line: line_no,
                        message: format!("`{p}` is not a number"),
                    })
                })
                .collect::<Result<_, _>>()?;
            if values.len() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    line: line_no,
                    expected: dim,
                    found: values.len(),
                });
            }
            let vector = EmbeddingVector::new(values).map_err(|_| EmbeddingError::Parse {
                line: line_no,
                message: "zero or non-finite vector".into(),
            })?;
            if tokens.insert(token.clone(), vector).is_some() {
                duplicates += 1;
                log::warn!("duplicate token `{token}` at line {line_no}; keeping the later vector");
            }
            found += 1;
        }
        if found != count {
            return Err(EmbeddingError::CountMismatch {
                declared: count,
                found,
            });
        }
        Ok(Self {
            tokens,
            dim,
            source: source.into(),
            duplicates,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Number of duplicate tokens seen while loading.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn token(&self, token: &str) -> Option<&EmbeddingVector<T>> {
        self.tokens.get(&token.to_lowercase())
    }

    /// Normalized mean of the in-vocabulary token vectors of `phrase`, or
    /// `None` when no token is known.
    pub fn embed_phrase(&self, phrase: &str) -> Option<EmbeddingVector<T>> {
        let lowered = phrase.to_lowercase();
        let mut sum = vec![T::zero(); self.dim];
        let mut known = 0usize;
        for tok in lowered.split_whitespace() {
            if let Some(v) = self.tokens.get(tok) {
                for (s, &x) in sum.iter_mut().zip(v.values()) {
                    *s = *s + x;
                }
                known += 1;
            }
        }
        if known == 0 {
            return None;
        }
        let n = T::lit(known as f64);
        let mean: Vec<T> = sum.into_iter().map(|s| s / n).collect();
        EmbeddingVector::new(mean).ok().map(|v| v.normalized())
    }
}

impl<T: Scalar> Embedder<T> for VocabularyIndex<T> {
    fn embed(&self, phrase: &str) -> Result<Option<EmbeddingVector<T>>, EmbeddingError> {
        Ok(self.embed_phrase(phrase))
    }

    fn source_id(&self) -> String {
        format!("vectors:{}", self.source)
    }
}

// ---------------------------------------------------------------------------
// Remote provider
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_ms: 200,
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    phrases: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

type Slot<T> = Arc<Mutex<Option<EmbeddingVector<T>>>>;

/// Client for `POST /embed`. Responses are cached per phrase; concurrent
/// callers asking for the same phrase wait on one in-flight request.
pub struct RemoteEmbedder<T> {
    endpoint: String,
    retry: RetryPolicy,
    agent: ureq::Agent,
    cache_enabled: bool,
    cache: Mutex<HashMap<String, Slot<T>>>,
    dim: Mutex<Option<usize>>,
    requests: AtomicUsize,
}

impl<T: Scalar> RemoteEmbedder<T> {
    /// `endpoint` is the service base URL; requests go to `{endpoint}/embed`.
    pub fn new(endpoint: impl Into<String>, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            retry,
            agent,
            cache_enabled: true,
            cache: Mutex::new(HashMap::new()),
            dim: Mutex::new(None),
            requests: AtomicUsize::new(0),
        }
    }

    pub fn without_cache(mut self) -> Self {
        self.cache_enabled = false;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// HTTP requests issued so far (retries included).
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// One vector per phrase, in order.
    pub fn remote_embed(&self, phrases: &[String]) -> Result<Vec<EmbeddingVector<T>>, EmbeddingError> {
        if phrases.is_empty() {
            return Err(EmbeddingError::EmptyRequest);
        }
        if !self.cache_enabled {
            return self.fetch(phrases);
        }

        let mut unique: Vec<&String> = phrases.iter().collect();
        unique.sort();
        unique.dedup();
        let slots: Vec<(&String, Slot<T>)> = {
            let mut cache = self.cache.lock().expect("cache lock");
            unique
                .iter()
                .map(|p| (*p, cache.entry((*p).clone()).or_default().clone()))
                .collect()
        };
        // Slots are locked in sorted phrase order so overlapping batches
        // cannot deadlock.
        let mut guards: Vec<_> = slots
            .iter()
            .map(|(p, slot)| (*p, slot.lock().expect("slot lock")))
            .collect();
        let missing: Vec<String> = guards
            .iter()
            .filter(|(_, g)| g.is_none())
            .map(|(p, _)| (*p).clone())
            .collect();
        if !missing.is_empty() {
            let fetched = self.fetch(&missing)?;
            let mut fetched = missing.iter().zip(fetched).collect::<HashMap<_, _>>();
            for (p, guard) in guards.iter_mut() {
                if let Some(v) = fetched.remove(p) {
                    **guard = Some(v);
                }
            }
        }
        let resolved: HashMap<&String, EmbeddingVector<T>> = guards
            .iter()
            .map(|(p, g)| (*p, g.as_ref().cloned().expect("slot filled")))
            .collect();
        Ok(phrases.iter().map(|p| resolved[p].clone()).collect())
    }

    fn fetch(&self, phrases: &[String]) -> Result<Vec<EmbeddingVector<T>>, EmbeddingError> {
        let url = format!("{}/embed", self.endpoint);
        let transport = |message: String| EmbeddingError::Transport {
            endpoint: self.endpoint.clone(),
            message,
        };
        let mut last_error = String::from("no attempt made");
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(self.retry.backoff_ms));
            }
            self.requests.fetch_add(1, Ordering::SeqCst);
            let mut response = match self
                .agent
                .post(&url)
                .send_json(&EmbedRequest { phrases })
            {
                Ok(r) => r,
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            let status = response.status().as_u16();
            if status != 200 {
                last_error = format!("status {status}");
                continue;
            }
            let body: EmbedResponse = response
                .body_mut()
                .read_json()
                .map_err(|e| transport(format!("invalid response body: {e}")))?;
            return self.accept(phrases.len(), body);
        }
        Err(transport(format!(
            "giving up after {} attempts: {last_error}",
            self.retry.max_retries + 1
        )))
    }

    fn accept(&self, expected: usize, body: EmbedResponse) -> Result<Vec<EmbeddingVector<T>>, EmbeddingError> {
        {
            let mut dim = self.dim.lock().expect("dim lock");
            match *dim {
                Some(d) if d != body.dim => {
                    return Err(EmbeddingError::DimensionDrift {
                        endpoint: self.endpoint.clone(),
                        expected: d,
                        found: body.dim,
                    })
                }
                Some(_) => {}
                None => *dim = Some(body.dim),
            }
        }
        if body.vectors.len() != expected {
            return Err(EmbeddingError::Transport {
                endpoint: self.endpoint.clone(),
                message: format!("expected {expected} vectors, got {}", body.vectors.len()),
            });
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != body.dim {
                    return Err(EmbeddingError::DimensionDrift {
                        endpoint: self.endpoint.clone(),
                        expected: body.dim,
                        found: v.len(),
                    });
                }
                EmbeddingVector::new(v.into_iter().map(T::lit).collect())
            })
            .collect()
    }
}

impl<T: Scalar> Embedder<T> for RemoteEmbedder<T> {
    fn embed(&self, phrase: &str) -> Result<Option<EmbeddingVector<T>>, EmbeddingError> {
        let mut v = self.remote_embed(&[phrase.to_lowercase()])?;
        Ok(v.pop())
    }

    fn source_id(&self) -> String {
        format!("remote:{}", self.endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f64]) -> EmbeddingVector<f64> {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_identities() {
        let a = v(&[1.0, 2.0, 3.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let x = v(&[1.0, 0.0]);
        let y = v(&[0.0, 3.0]);
        assert!(cosine_similarity(&x, &y).unwrap().abs() < 1e-9);
        let neg = v(&[-2.0, -4.0, -6.0]);
        assert!((cosine_similarity(&a, &neg).unwrap() + 1.0).abs() < 1e-9);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 1.0])),
            Err(EmbeddingError::DimMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(EmbeddingVector::<f64>::new(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn loads_small_file() {
        let idx = VocabularyIndex::<f64>::parse("2 3\ncat 1 0 0\nDog 0 1 0\n", "t").unwrap();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.dim(), 3);
        assert!(idx.token("DOG").is_some());
    }

    #[test]
    fn short_line_errors_with_line_number() {
        let err = VocabularyIndex::<f64>::parse("2 3\ncat 1 0 0\ndog 0 1\n", "t").unwrap_err();
        assert!(matches!(
            err,
            EmbeddingError::DimensionMismatch { line: 3, expected: 3, found: 2 }
        ));
    }

    #[test]
    fn duplicate_token_last_wins() {
        let idx = VocabularyIndex::<f64>::parse("2 2\ncat 1 0\ncat 0 1\n", "t").unwrap();
        assert_eq!(idx.duplicates(), 1);
        assert_eq!(idx.token("cat").unwrap().values(), &[0.0, 1.0]);
    }

    #[test]
    fn phrase_embedding() {
        let idx = VocabularyIndex::<f64>::parse("2 2\ngolden 3 0\nbrown 1 2\n", "t").unwrap();
        // single token: normalized (3, 0) = (1, 0)
        assert_eq!(idx.embed_phrase("Golden").unwrap().values(), &[1.0, 0.0]);
        // mean of (3,0) and (1,2) is (2,1); normalized (2,1)/sqrt(5)
        let got = idx.embed_phrase("golden brown").unwrap();
        let s5 = 5f64.sqrt();
        assert!((got.values()[0] - 2.0 / s5).abs() < 1e-12);
        assert!((got.values()[1] - 1.0 / s5).abs() < 1e-12);
        // unknown tokens are skipped
        assert_eq!(idx.embed_phrase("golden xyz"), idx.embed_phrase("golden"));
        assert!(idx.embed_phrase("purple haze").is_none());
    }

    #[test]
    fn f32_index_works() {
        let idx = VocabularyIndex::<f32>::parse("1 2\nx 3 4\n", "t").unwrap();
        let e = idx.embed_phrase("x").unwrap();
        assert!((e.values()[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn empty_remote_request_rejected() {
        let r = RemoteEmbedder::<f64>::new("http://127.0.0.1:9", RetryPolicy::default());
        assert!(matches!(r.remote_embed(&[]), Err(EmbeddingError::EmptyRequest)));
    }
}
