//! Scoring wire protocol: request dispatch with windowing and retries,
//! subprocess and HTTP transports, and the token-overlap oracle scorer.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ingestion::BBox;
use crate::negatives::{PathRecord, ProbePair};
use crate::scalar::Scalar;
use crate::taxonomy::{Aspect, AspectPath};

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("scorer {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("protocol version mismatch: harness speaks {expected}, scorer declared {found}")]
    VersionMismatch { expected: String, found: String },
    #[error("probe set contains crops but scorer {0} does not support them")]
    CropUnsupported(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("response for unknown rid `{0}`")]
    UnknownRid(String),
    #[error("non-finite score for rid `{0}`")]
    NonFiniteScore(String),
    #[error("duplicate pair id `{0}` in probe set")]
    DuplicatePairId(String),
    #[error("{} request(s) unscored after {retries} retries: {}", .rids.len(), .rids.join(", "))]
    Unscored { rids: Vec<String>, retries: u32 },
    #[error("no reference caption for image `{0}`")]
    UnknownImage(String),
    #[error("scored pairs line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ScoreRequest<T> {
    pub rid: String,
    pub image_uri: String,
    pub crop: Option<BBox<T>>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub rid: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair<T> {
    pub pair_id: String,
    pub path: AspectPath,
    pub pos_score: T,
    pub neg_score: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    #[serde(rename = "version")]
    pub protocol_version: String,
    pub supports_crop: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Batching {
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub max_retries: u32,
    /// How long to wait for the next response before treating the
    /// outstanding window as lost.
    pub timeout_ms: u64,
}

impl Default for Batching {
    fn default() -> Self {
        Self {
            batch_size: 16,
            max_in_flight: 64,
            max_retries: 2,
            timeout_ms: 30_000,
        }
    }
}

/// One logical protocol over any carrier. `submit` sends requests; their
/// responses are collected through `poll`, in any order.
pub trait ScorerTransport<T: Scalar> {
    fn endpoint(&self) -> String;
    fn hello(&mut self) -> Result<Capabilities, ScoringError>;
    fn submit(&mut self, batch: &[ScoreRequest<T>]) -> Result<(), ScoringError>;
    /// Next response, or `None` if none arrives within `timeout`.
    fn poll(&mut self, timeout: Duration) -> Result<Option<ScoreResponse>, ScoringError>;
    fn close(&mut self) -> Result<(), ScoringError> {
        Ok(())
    }
}

/// Aborts unless the scorer speaks our version and, when any request
/// carries a crop, declares crop support.
pub fn handshake<T: Scalar>(
    transport: &mut dyn ScorerTransport<T>,
    needs_crop: bool,
) -> Result<Capabilities, ScoringError> {
    let caps = transport.hello()?;
    if caps.protocol_version != PROTOCOL_VERSION {
        return Err(ScoringError::VersionMismatch {
            expected: PROTOCOL_VERSION.into(),
            found: caps.protocol_version,
        });
    }
    if needs_crop && !caps.supports_crop {
        return Err(ScoringError::CropUnsupported(transport.endpoint()));
    }
    Ok(caps)
}

pub fn pos_rid(pair_id: &str) -> String {
    format!("{pair_id}/pos")
}

pub fn neg_rid(pair_id: &str) -> String {
    format!("{pair_id}/neg")
}

/// The two requests of a pair, positive first.
pub fn pair_requests<T: Scalar>(pair: &ProbePair<T>) -> [ScoreRequest<T>; 2] {
    let make = |rid: String, text: &str| ScoreRequest {
        rid,
        image_uri: pair.image.uri.clone(),
        crop: pair.crop,
        text: text.to_string(),
    };
    [
        make(pos_rid(&pair.pair_id), &pair.positive_text),
        make(neg_rid(&pair.pair_id), &pair.negative_text),
    ]
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchStats {
    pub requests_sent: usize,
    pub retry_rounds: u32,
    pub duplicates_ignored: usize,
    pub late_responses: usize,
}

/// Scores every pair through `transport`. Output order follows `pairs`.
/// Each rid's first finite response is kept and later ones are ignored;
/// rids still unanswered after `max_retries` extra rounds fail the run.
pub fn score_probe_set<T: Scalar>(
    pairs: &[ProbePair<T>],
    transport: &mut dyn ScorerTransport<T>,
    batching: &Batching,
) -> Result<(Vec<ScoredPair<T>>, DispatchStats), ScoringError> {
    let needs_crop = pairs.iter().any(|p| p.crop.is_some());
    handshake(transport, needs_crop)?;

    let mut seen_ids = BTreeSet::new();
    for p in pairs {
        if !seen_ids.insert(p.pair_id.as_str()) {
            return Err(ScoringError::DuplicatePairId(p.pair_id.clone()));
        }
    }
    let requests: Vec<ScoreRequest<T>> = pairs.iter().flat_map(pair_requests).collect();
    let index: HashMap<&str, usize> = requests
        .iter()
        .enumerate()
        .map(|(i, r)| (r.rid.as_str(), i))
        .collect();

    let batch_size = batching.batch_size.max(1);
    let window = batching.max_in_flight.max(1);
    let timeout = Duration::from_millis(batching.timeout_ms);
    let mut scores: Vec<Option<T>> = vec![None; requests.len()];
    let mut stats = DispatchStats::default();
    let mut pending: VecDeque<usize> = (0..requests.len()).collect();
    let mut round = 0u32;

    loop {
        let mut outstanding: BTreeSet<usize> = BTreeSet::new();
        while !pending.is_empty() || !outstanding.is_empty() {
            while outstanding.len() < window && !pending.is_empty() {
                let take = batch_size.min(window - outstanding.len()).min(pending.len());
                let batch: Vec<usize> = pending.drain(..take).collect();
                let payload: Vec<ScoreRequest<T>> =
                    batch.iter().map(|&i| requests[i].clone()).collect();
                transport.submit(&payload)?;
                stats.requests_sent += payload.len();
                outstanding.extend(batch);
            }
            match transport.poll(timeout)? {
                Some(resp) => {
                    let &i = index
                        .get(resp.rid.as_str())
                        .ok_or_else(|| ScoringError::UnknownRid(resp.rid.clone()))?;
                    if scores[i].is_some() {
                        stats.duplicates_ignored += 1;
                        continue;
                    }
                    let score = T::from_f64(resp.score).filter(|s| s.is_finite());
                    let Some(score) = score.filter(|_| resp.score.is_finite()) else {
                        return Err(ScoringError::NonFiniteScore(resp.rid));
                    };
                    scores[i] = Some(score);
                    if !outstanding.remove(&i) {
                        stats.late_responses += 1;
                    }
                }
                // Whatever is still outstanding is lost for this round.
                None => outstanding.clear(),
            }
        }
        let missing: Vec<usize> = (0..requests.len()).filter(|&i| scores[i].is_none()).collect();
        if missing.is_empty() {
            break;
        }
        if round >= batching.max_retries {
            return Err(ScoringError::Unscored {
                rids: missing.iter().map(|&i| requests[i].rid.clone()).collect(),
                retries: batching.max_retries,
            });
        }
        round += 1;
        stats.retry_rounds = round;
        log::warn!("retrying {} unanswered request(s), round {round}", missing.len());
        pending.extend(missing);
    }

    let scored = pairs
        .iter()
        .enumerate()
        .map(|(k, p)| ScoredPair {
            pair_id: p.pair_id.clone(),
            path: p.path,
            pos_score: scores[2 * k].expect("all scored"),
            neg_score: scores[2 * k + 1].expect("all scored"),
        })
        .collect();
    Ok((scored, stats))
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

/// Lowercased whitespace tokens with surrounding punctuation stripped.
pub fn token_set(text: &str) -> BTreeSet<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// |tokens(text) ∩ tokens(reference)| / |tokens(reference)|, or 0 for an
/// empty reference.
pub fn overlap_score(text: &str, reference: &str) -> f64 {
    let reference = token_set(reference);
    if reference.is_empty() {
        return 0.0;
    }
    let text = token_set(text);
    text.intersection(&reference).count() as f64 / reference.len() as f64
}

pub fn oracle_score<T: Scalar>(
    request: &ScoreRequest<T>,
    references: &BTreeMap<String, String>,
) -> Result<ScoreResponse, ScoringError> {
    let reference = references
        .get(&request.image_uri)
        .ok_or_else(|| ScoringError::UnknownImage(request.image_uri.clone()))?;
    Ok(ScoreResponse {
        rid: request.rid.clone(),
        score: overlap_score(&request.text, reference),
    })
}

/// Reference caption per image: the image's distinct positive captions
/// joined by " . ", in first-seen order.
pub fn default_references<T: Scalar>(pairs: &[ProbePair<T>]) -> BTreeMap<String, String> {
    let mut captions: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for p in pairs {
        let list = captions.entry(p.image.uri.clone()).or_default();
        if !list.contains(&p.positive_text.as_str()) {
            list.push(&p.positive_text);
        }
    }
    captions
        .into_iter()
        .map(|(uri, texts)| (uri, texts.join(" . ")))
        .collect()
}

/// In-process deterministic scorer. Keeps a log of every rid it answered.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    references: Arc<BTreeMap<String, String>>,
    queue: VecDeque<ScoreResponse>,
    log: Arc<Mutex<Vec<String>>>,
}

impl OracleScorer {
    pub fn new(references: BTreeMap<String, String>) -> Self {
        Self {
            references: Arc::new(references),
            queue: VecDeque::new(),
            log: Arc::default(),
        }
    }

    pub fn request_log(&self) -> Arc<Mutex<Vec<String>>> {
        Arc::clone(&self.log)
    }

    pub fn references(&self) -> &BTreeMap<String, String> {
        &self.references
    }
}

impl<T: Scalar> ScorerTransport<T> for OracleScorer {
    fn endpoint(&self) -> String {
        "oracle".into()
    }

    fn hello(&mut self) -> Result<Capabilities, ScoringError> {
        Ok(Capabilities {
            protocol_version: PROTOCOL_VERSION.into(),
            supports_crop: true,
        })
    }

    fn submit(&mut self, batch: &[ScoreRequest<T>]) -> Result<(), ScoringError> {
        let mut log = self.log.lock().expect("oracle log");
        for r in batch {
            log.push(r.rid.clone());
            self.queue.push_back(oracle_score(r, &self.references)?);
        }
        Ok(())
    }

    fn poll(&mut self, _timeout: Duration) -> Result<Option<ScoreResponse>, ScoringError> {
        Ok(self.queue.pop_front())
    }
}

// ---------------------------------------------------------------------------
// Wire messages
// ---------------------------------------------------------------------------

pub fn hello_line() -> String {
    json!({"op": "hello", "version": PROTOCOL_VERSION}).to_string()
}

pub fn request_line<T: Scalar>(request: &ScoreRequest<T>) -> String {
    let crop = request.crop.map(<[T; 4]>::from);
    json!({
        "op": "score",
        "rid": request.rid,
        "image_uri": request.image_uri,
        "crop": crop,
        "text": request.text,
    })
    .to_string()
}

pub fn bye_line() -> String {
    json!({"op": "bye"}).to_string()
}

/// Scorers written in Python may print bare `NaN`/`Infinity`; quote them so
/// the line parses and the score is then rejected as non-finite.
fn quote_non_finite(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        let token = ["-Infinity", "Infinity", "NaN"]
            .into_iter()
            .find(|t| rest.starts_with(t));
        if let Some(t) = token {
            out.push('"');
            out.push_str(t);
            out.push('"');
            rest = &rest[t.len()..];
        } else {
            out.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    out
}

fn score_value(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => match s.as_str() {
            "NaN" | "nan" => Some(f64::NAN),
            "Infinity" | "inf" => Some(f64::INFINITY),
            "-Infinity" | "-inf" => Some(f64::NEG_INFINITY),
            _ => None,
        },
        _ => None,
    }
}

/// A parsed scorer message. Error replies and unparseable lines are
/// reported as `Ignored` and leave their request unanswered.
#[derive(Debug, Clone, PartialEq)]
pub enum ScorerMessage {
    Hello(Capabilities),
    Score(ScoreResponse),
    Ignored(String),
}

pub fn parse_scorer_line(line: &str) -> ScorerMessage {
    let value: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(_) => match serde_json::from_str(&quote_non_finite(line)) {
            Ok(v) => v,
            Err(e) => return ScorerMessage::Ignored(format!("malformed line: {e}")),
        },
    };
    parse_scorer_value(&value)
}

fn parse_scorer_value(value: &Value) -> ScorerMessage {
    let op = value.get("op").and_then(Value::as_str);
    if op == Some("hello") || (op.is_none() && value.get("version").is_some()) {
        return match serde_json::from_value::<Capabilities>(value.clone()) {
            Ok(c) => ScorerMessage::Hello(c),
            Err(e) => ScorerMessage::Ignored(format!("bad hello: {e}")),
        };
    }
    let rid = value.get("rid").and_then(Value::as_str);
    match (rid, value.get("score").and_then(score_value)) {
        (Some(rid), Some(score)) if op.is_none() || op == Some("score") => {
            ScorerMessage::Score(ScoreResponse {
                rid: rid.to_string(),
                score,
            })
        }
        _ => ScorerMessage::Ignored(format!("unusable message: {value}")),
    }
}

// ---------------------------------------------------------------------------
// Subprocess transport
// ---------------------------------------------------------------------------

/// Spawns the scorer and talks JSONL over its stdin/stdout. One writer (this
/// struct) and one reader thread.
pub struct SubprocessTransport {
    argv: Vec<String>,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    hello_timeout: Duration,
}

impl SubprocessTransport {
    pub fn spawn(argv: &[String], hello_timeout: Duration) -> Result<Self, ScoringError> {
        let endpoint = argv.join(" ");
        let (program, args) = argv.split_first().ok_or_else(|| ScoringError::Transport {
            endpoint: endpoint.clone(),
            message: "empty scorer command".into(),
        })?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ScoringError::Transport {
                endpoint: endpoint.clone(),
                message: format!("spawn failed: {e}"),
            })?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            argv: argv.to_vec(),
            child,
            stdin,
            lines: rx,
            hello_timeout,
        })
    }

    fn write_line(&mut self, line: &str) -> Result<(), ScoringError> {
        let endpoint = self.argv.join(" ");
        let stdin = self.stdin.as_mut().ok_or_else(|| ScoringError::Transport {
            endpoint: endpoint.clone(),
            message: "scorer stdin closed".into(),
        })?;
        writeln!(stdin, "{line}")
            .and_then(|_| stdin.flush())
            .map_err(|e| ScoringError::Transport {
                endpoint,
                message: format!("write failed: {e}"),
            })
    }

    fn next_message(&mut self, timeout: Duration) -> Result<Option<ScorerMessage>, ScoringError> {
        match self.lines.recv_timeout(timeout) {
            Ok(line) if line.trim().is_empty() => Ok(Some(ScorerMessage::Ignored("blank line".into()))),
            Ok(line) => Ok(Some(parse_scorer_line(&line))),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(ScoringError::Transport {
                endpoint: self.argv.join(" "),
                message: "scorer exited".into(),
            }),
        }
    }
}

impl<T: Scalar> ScorerTransport<T> for SubprocessTransport {
    fn endpoint(&self) -> String {
        self.argv.join(" ")
    }

    fn hello(&mut self) -> Result<Capabilities, ScoringError> {
        self.write_line(&hello_line())?;
        let deadline = Instant::now() + self.hello_timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.next_message(left)? {
                Some(ScorerMessage::Hello(c)) => return Ok(c),
                Some(other) => log::warn!("ignoring pre-handshake message: {other:?}"),
                None => {
                    return Err(ScoringError::Transport {
                        endpoint: self.argv.join(" "),
                        message: "no handshake reply".into(),
                    })
                }
            }
        }
    }

    fn submit(&mut self, batch: &[ScoreRequest<T>]) -> Result<(), ScoringError> {
        for r in batch {
            self.write_line(&request_line(r))?;
        }
        Ok(())
    }

    fn poll(&mut self, timeout: Duration) -> Result<Option<ScoreResponse>, ScoringError> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.next_message(left)? {
                Some(ScorerMessage::Score(r)) => return Ok(Some(r)),
                Some(other) => log::warn!("scorer message ignored: {other:?}"),
                None => return Ok(None),
            }
        }
    }

    fn close(&mut self) -> Result<(), ScoringError> {
        if self.stdin.is_some() {
            let _ = self.write_line(&bye_line());
            self.stdin = None;
        }
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return Ok(());
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
        Ok(())
    }
}

impl Drop for SubprocessTransport {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            self.stdin = None;
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

// ---------------------------------------------------------------------------
// HTTP transport
// ---------------------------------------------------------------------------

/// GET /hello and POST /score. A non-200 batch leaves its requests
/// unanswered so the dispatcher retries them.
pub struct HttpTransport {
    base: String,
    agent: ureq::Agent,
    queue: VecDeque<ScoreResponse>,
    posts: Arc<AtomicUsize>,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            agent,
            queue: VecDeque::new(),
            posts: Arc::default(),
        }
    }

    pub fn post_count(&self) -> usize {
        self.posts.load(Ordering::SeqCst)
    }

    fn transport_error(&self, message: impl Into<String>) -> ScoringError {
        ScoringError::Transport {
            endpoint: self.base.clone(),
            message: message.into(),
        }
    }
}

impl<T: Scalar> ScorerTransport<T> for HttpTransport {
    fn endpoint(&self) -> String {
        self.base.clone()
    }

    fn hello(&mut self) -> Result<Capabilities, ScoringError> {
        let mut resp = self
            .agent
            .get(&format!("{}/hello", self.base))
            .call()
            .map_err(|e| self.transport_error(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(self.transport_error(format!("hello returned status {status}")));
        }
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| self.transport_error(format!("invalid hello body: {e}")))?;
        match parse_scorer_value(&value) {
            ScorerMessage::Hello(c) => Ok(c),
            other => Err(self.transport_error(format!("unexpected hello reply: {other:?}"))),
        }
    }

    fn submit(&mut self, batch: &[ScoreRequest<T>]) -> Result<(), ScoringError> {
        let requests: Vec<Value> = batch
            .iter()
            .map(|r| serde_json::from_str(&request_line(r)).expect("request line is JSON"))
            .collect();
        self.posts.fetch_add(1, Ordering::SeqCst);
        let mut resp = self
            .agent
            .post(&format!("{}/score", self.base))
            .send_json(json!({ "requests": requests }))
            .map_err(|e| self.transport_error(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            log::warn!("{}: /score returned status {status}", self.base);
            return Ok(());
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| self.transport_error(format!("unreadable body: {e}")))?;
        let body: Value = serde_json::from_str(&text)
            .or_else(|_| serde_json::from_str(&quote_non_finite(&text)))
            .map_err(|e| self.transport_error(format!("invalid score body: {e}")))?;
        let responses = body
            .get("responses")
            .and_then(Value::as_array)
            .ok_or_else(|| ScoringError::Protocol("score body lacks `responses`".into()))?;
        for r in responses {
            match parse_scorer_value(r) {
                ScorerMessage::Score(s) => self.queue.push_back(s),
                other => log::warn!("{}: ignored {other:?}", self.base),
            }
        }
        Ok(())
    }

    fn poll(&mut self, _timeout: Duration) -> Result<Option<ScoreResponse>, ScoringError> {
        Ok(self.queue.pop_front())
    }
}

// ---------------------------------------------------------------------------
// Scored-pair JSONL
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct ScoredRecord<T> {
    pair_id: String,
    aspect: Aspect,
    path: PathRecord,
    pos_score: T,
    neg_score: T,
}

impl<T: Scalar> ScoredPair<T> {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&ScoredRecord {
            pair_id: self.pair_id.clone(),
            aspect: self.path.aspect,
            path: PathRecord::from_path(&self.path),
            pos_score: self.pos_score,
            neg_score: self.neg_score,
        })
        .expect("scored pair serializes")
    }
}

pub fn write_scored_pairs<T: Scalar>(pairs: &[ScoredPair<T>]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&p.to_json_line());
        out.push('\n');
    }
    out
}

pub fn parse_scored_pairs<T: Scalar>(text: &str) -> Result<Vec<ScoredPair<T>>, ScoringError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let r: ScoredRecord<T> = serde_json::from_str(line).map_err(|e| ScoringError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if !r.pos_score.is_finite() || !r.neg_score.is_finite() {
                return Err(ScoringError::NonFiniteScore(r.pair_id));
            }
            Ok(ScoredPair {
                pair_id: r.pair_id,
                path: r.path.with_aspect(r.aspect),
                pos_score: r.pos_score,
                neg_score: r.neg_score,
            })
        })
        .collect()
}
