//! Hard-negative generation: one negative caption per positive caption by
//! replacing a single phrase with a dissimilar phrase of the same class.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embeddings::{cosine_similarity, Embedder, EmbeddingError};
use crate::ingestion::{BBox, CanonicalSample, ImageMeta};
use crate::scalar::Scalar;
use crate::taxonomy::{
    tag_sample, Aspect, AspectPath, AttributeClass, LocationBucket, RelationKind, SampleTags,
    SizeBucket, TaggingContext, TargetRef,
};

#[derive(Debug, Error)]
pub enum NegativeError {
    #[error("template placeholder `{{{0}}}` has no slot")]
    MissingSlot(String),
    #[error("pair {pair_id}: local variant needs the {which} box")]
    MissingBox { pair_id: String, which: &'static str },
    #[error("pair {0} already carries a crop")]
    AlreadyCropped(String),
    #[error("probe set line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalMode {
    SubjOnly,
    ObjOnly,
    Union,
}

impl LocalMode {
    pub fn label(self) -> &'static str {
        match self {
            Self::SubjOnly => "subj_only",
            Self::ObjOnly => "obj_only",
            Self::Union => "union",
        }
    }
}

impl fmt::Display for LocalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for LocalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "subj_only" | "subj" => Ok(Self::SubjOnly),
            "obj_only" | "obj" => Ok(Self::ObjOnly),
            "union" => Ok(Self::Union),
            other => Err(format!("unknown local variant mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptionTemplates {
    pub object: String,
    pub attribute: String,
    pub relation: String,
    /// Used for objects that take part in no relation; such objects are
    /// skipped when unset.
    pub object_bare: Option<String>,
}

impl Default for CaptionTemplates {
    fn default() -> Self {
        Self {
            object: "{subj} {pred} {obj}".into(),
            attribute: "{obj} is {attr}".into(),
            relation: "{subj} {pred} {obj}".into(),
            object_bare: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationPolicy<T> {
    pub seed: u64,
    /// Upper bound on similarity between original and replacement.
    pub max_similarity: T,
    pub min_candidates: usize,
    pub templates: CaptionTemplates,
    pub local_variant: Option<LocalMode>,
    pub aspects: BTreeSet<Aspect>,
    /// Pair ids dropped from the output.
    pub exclude: BTreeSet<String>,
    /// Skip a target whose aspect, positive caption and replaced phrase
    /// repeat an earlier target of the same sample.
    pub dedupe: bool,
}

impl<T: Scalar> Default for GenerationPolicy<T> {
    fn default() -> Self {
        Self {
            seed: 0,
            max_similarity: T::lit(0.5),
            min_candidates: 1,
            templates: CaptionTemplates::default(),
            local_variant: None,
            aspects: [Aspect::Object, Aspect::Attribute, Aspect::Relation].into(),
            exclude: BTreeSet::new(),
            dedupe: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplacementCandidate<T> {
    pub phrase: String,
    pub similarity_to_original: T,
    pub same_class: bool,
}

/// A positive caption and its hard negative for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePair<T> {
    pub pair_id: String,
    pub sample_id: String,
    pub path: AspectPath,
    pub image: ImageMeta,
    pub crop: Option<BBox<T>>,
    pub positive_text: String,
    pub negative_text: String,
    pub replaced_original: String,
    pub replacement: String,
    pub similarity: T,
}

// ---------------------------------------------------------------------------
// Pools and sampling
// ---------------------------------------------------------------------------

/// Deduplicated lowercase phrase pools, each sorted lexicographically.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePools {
    pub objects: Vec<String>,
    pub attributes: BTreeMap<AttributeClass, Vec<String>>,
    pub predicates: BTreeMap<RelationKind, Vec<String>>,
}

impl CandidatePools {
    pub fn attribute_pool(&self, class: AttributeClass) -> &[String] {
        self.attributes.get(&class).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn predicate_pool(&self, kind: RelationKind) -> &[String] {
        self.predicates.get(&kind).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The pool a pair's replacement must come from.
    pub fn pool_for(&self, path: &AspectPath) -> &[String] {
        match path.aspect {
            Aspect::Object => &self.objects,
            Aspect::Attribute => path.attr_class.map_or(&[], |c| self.attribute_pool(c)),
            Aspect::Relation => path.rel_kind.map_or(&[], |k| self.predicate_pool(k)),
        }
    }
}

fn pool_key(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Object names pooled globally, attribute values per class, predicates
/// per relation kind.
pub fn build_candidate_pools<T: Scalar>(
    tagged: &[(&CanonicalSample<T>, &SampleTags)],
) -> CandidatePools {
    let mut objects = BTreeSet::new();
    let mut attributes: BTreeMap<AttributeClass, BTreeSet<String>> = BTreeMap::new();
    let mut predicates: BTreeMap<RelationKind, BTreeSet<String>> = BTreeMap::new();
    for (sample, tags) in tagged {
        for t in &tags.tagged {
            match &t.target {
                TargetRef::Object { oid } => {
                    if let Some(o) = sample.object(oid) {
                        objects.insert(pool_key(&o.name));
                    }
                }
                TargetRef::Attribute { oid, index } => {
                    let value = sample.object(oid).and_then(|o| o.attributes.get(*index));
                    if let (Some(v), Some(class)) = (value, t.path.attr_class) {
                        attributes.entry(class).or_default().insert(pool_key(&v.value));
                    }
                }
                TargetRef::Relation { index } => {
                    if let (Some(r), Some(kind)) = (sample.relations.get(*index), t.path.rel_kind) {
                        predicates.entry(kind).or_default().insert(pool_key(&r.pred));
                    }
                }
            }
        }
    }
    let flatten = |s: BTreeSet<String>| s.into_iter().filter(|p| !p.is_empty()).collect::<Vec<_>>();
    CandidatePools {
        objects: flatten(objects),
        attributes: attributes.into_iter().map(|(k, v)| (k, flatten(v))).collect(),
        predicates: predicates.into_iter().map(|(k, v)| (k, flatten(v))).collect(),
    }
}

/// Draws one pool member uniformly from the eligible set: members other than
/// `original` (case-insensitive) whose similarity to it is at most
/// `policy.max_similarity`. Members are considered in lexicographic order;
/// out-of-vocabulary members are ineligible, and an out-of-vocabulary
/// original yields no candidate.
pub fn sample_replacement<T: Scalar, R: Rng + ?Sized>(
    original: &str,
    pool: &[String],
    policy: &GenerationPolicy<T>,
    embedder: &dyn Embedder<T>,
    rng: &mut R,
) -> Result<Option<ReplacementCandidate<T>>, EmbeddingError> {
    let key = pool_key(original);
    let Some(original_vec) = embedder.embed(original)? else {
        return Ok(None);
    };
    let mut ordered: Vec<&String> = pool.iter().collect();
    ordered.sort();
    ordered.dedup();
    let mut eligible = Vec::new();
    for phrase in ordered {
        if pool_key(phrase) == key {
            continue;
        }
        let Some(v) = embedder.embed(phrase)? else {
            continue;
        };
        let sim = cosine_similarity(&original_vec, &v)?;
        if sim <= policy.max_similarity {
            eligible.push((phrase, sim));
        }
    }
    if eligible.is_empty() || eligible.len() < policy.min_candidates {
        return Ok(None);
    }
    let (phrase, sim) = eligible[rng.gen_range(0..eligible.len())];
    Ok(Some(ReplacementCandidate {
        phrase: phrase.clone(),
        similarity_to_original: sim,
        same_class: true,
    }))
}

/// Substitutes `{name}` placeholders verbatim. Braces that do not enclose a
/// plain identifier are copied through.
pub fn render_caption(template: &str, slots: &BTreeMap<&str, &str>) -> Result<String, NegativeError> {
    let mut out = String::with_capacity(template.len() + 16);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close)
                if close > 0
                    && after[..close]
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '_') =>
            {
                let name = &after[..close];
                let value = slots
                    .get(name)
                    .ok_or_else(|| NegativeError::MissingSlot(name.to_string()))?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Per-sample random stream derived from the run seed and the sample id.
pub fn sample_rng(seed: u64, sample_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(sample_id.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(bytes)
}

// ---------------------------------------------------------------------------
// Pair construction
// ---------------------------------------------------------------------------

pub fn pair_id(sample_id: &str, target: &TargetRef) -> String {
    format!("{sample_id}:{}", target.key())
}

struct Caption<'a> {
    template: &'a str,
    slots: BTreeMap<&'static str, String>,
    replaced_slot: &'static str,
}

impl Caption<'_> {
    fn render(&self, replacement: Option<&str>) -> Result<String, NegativeError> {
        let slots: BTreeMap<&str, &str> = self
            .slots
            .iter()
            .map(|(k, v)| {
                let v = match replacement {
                    Some(r) if *k == self.replaced_slot => r,
                    _ => v.as_str(),
                };
                (*k, v)
            })
            .collect();
        render_caption(self.template, &slots)
    }

    fn original(&self) -> &str {
        &self.slots[self.replaced_slot]
    }
}

fn triple_slots<T: Scalar>(
    sample: &CanonicalSample<T>,
    rel_index: usize,
) -> Option<BTreeMap<&'static str, String>> {
    let rel = sample.relations.get(rel_index)?;
    let subj = sample.object(&rel.subj)?;
    let obj = sample.object(&rel.obj)?;
    Some(BTreeMap::from([
        ("subj", subj.name.clone()),
        ("pred", rel.pred.clone()),
        ("obj", obj.name.clone()),
    ]))
}

fn object_caption<'a, T: Scalar>(
    sample: &CanonicalSample<T>,
    oid: &str,
    templates: &'a CaptionTemplates,
) -> Option<Caption<'a>> {
    let object = sample.object(oid)?;
    let related = sample
        .relations
        .iter()
        .position(|r| r.subj == oid || r.obj == oid);
    match related {
        Some(index) => {
            let rel = &sample.relations[index];
            Some(Caption {
                template: &templates.object,
                slots: triple_slots(sample, index)?,
                replaced_slot: if rel.subj == oid { "subj" } else { "obj" },
            })
        }
        None => templates.object_bare.as_deref().map(|template| Caption {
            template,
            slots: BTreeMap::from([("obj", object.name.clone())]),
            replaced_slot: "obj",
        }),
    }
}

fn finish_pair<T: Scalar>(
    sample: &CanonicalSample<T>,
    target: &TargetRef,
    path: AspectPath,
    caption: &Caption<'_>,
    candidate: ReplacementCandidate<T>,
) -> Result<ProbePair<T>, NegativeError> {
    Ok(ProbePair {
        pair_id: pair_id(&sample.id, target),
        sample_id: sample.id.clone(),
        path,
        image: sample.image.clone(),
        crop: None,
        positive_text: caption.render(None)?,
        negative_text: caption.render(Some(&candidate.phrase))?,
        replaced_original: caption.original().to_string(),
        replacement: candidate.phrase,
        similarity: candidate.similarity_to_original,
    })
}

/// Object probe: the positive caption comes from the first relation the
/// object takes part in (or the bare template); the object's name is
/// replaced from the global object pool.
pub fn generate_object_pair<T: Scalar, R: Rng + ?Sized>(
    sample: &CanonicalSample<T>,
    oid: &str,
    path: AspectPath,
    pools: &CandidatePools,
    policy: &GenerationPolicy<T>,
    embedder: &dyn Embedder<T>,
    rng: &mut R,
) -> Result<Option<ProbePair<T>>, NegativeError> {
    let Some(caption) = object_caption(sample, oid, &policy.templates) else {
        return Ok(None);
    };
    let Some(candidate) = sample_replacement(caption.original(), &pools.objects, policy, embedder, rng)? else {
        return Ok(None);
    };
    let target = TargetRef::Object { oid: oid.to_string() };
    finish_pair(sample, &target, path, &caption, candidate).map(Some)
}

/// Attribute probe: the value is replaced from its own class's pool.
#[allow(clippy::too_many_arguments)]
pub fn generate_attribute_pair<T: Scalar, R: Rng + ?Sized>(
    sample: &CanonicalSample<T>,
    oid: &str,
    index: usize,
    path: AspectPath,
    pools: &CandidatePools,
    policy: &GenerationPolicy<T>,
    embedder: &dyn Embedder<T>,
    rng: &mut R,
) -> Result<Option<ProbePair<T>>, NegativeError> {
    let Some(class) = path.attr_class else {
        return Ok(None);
    };
    let Some(object) = sample.object(oid) else {
        return Ok(None);
    };
    let Some(attr) = object.attributes.get(index) else {
        return Ok(None);
    };
    let caption = Caption {
        template: &policy.templates.attribute,
        slots: BTreeMap::from([("obj", object.name.clone()), ("attr", attr.value.clone())]),
        replaced_slot: "attr",
    };
    let pool = pools.attribute_pool(class);
    let Some(candidate) = sample_replacement(&attr.value, pool, policy, embedder, rng)? else {
        return Ok(None);
    };
    let target = TargetRef::Attribute { oid: oid.to_string(), index };
    finish_pair(sample, &target, path, &caption, candidate).map(Some)
}

/// Relation probe: the predicate is replaced from the pool of its kind.
pub fn generate_relation_pair<T: Scalar, R: Rng + ?Sized>(
    sample: &CanonicalSample<T>,
    index: usize,
    path: AspectPath,
    pools: &CandidatePools,
    policy: &GenerationPolicy<T>,
    embedder: &dyn Embedder<T>,
    rng: &mut R,
) -> Result<Option<ProbePair<T>>, NegativeError> {
    let Some(kind) = path.rel_kind else {
        return Ok(None);
    };
    let Some(slots) = triple_slots(sample, index) else {
        return Ok(None);
    };
    let caption = Caption {
        template: &policy.templates.relation,
        slots,
        replaced_slot: "pred",
    };
    let pool = pools.predicate_pool(kind);
    let Some(candidate) = sample_replacement(caption.original(), pool, policy, embedder, rng)? else {
        return Ok(None);
    };
    finish_pair(sample, &TargetRef::Relation { index }, path, &caption, candidate).map(Some)
}

pub fn bbox_union<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> BBox<T> {
    a.union(b)
}

/// Copy of `pair` whose scoring request carries a crop; texts unchanged.
pub fn generate_local_variant<T: Scalar>(
    pair: &ProbePair<T>,
    subj: Option<&BBox<T>>,
    obj: Option<&BBox<T>>,
    mode: LocalMode,
) -> Result<ProbePair<T>, NegativeError> {
    if pair.crop.is_some() {
        return Err(NegativeError::AlreadyCropped(pair.pair_id.clone()));
    }
    let missing = |which| NegativeError::MissingBox {
        pair_id: pair.pair_id.clone(),
        which,
    };
    let crop = match mode {
        LocalMode::SubjOnly => *subj.ok_or_else(|| missing("subject"))?,
        LocalMode::ObjOnly => *obj.ok_or_else(|| missing("object"))?,
        LocalMode::Union => {
            let s = subj.ok_or_else(|| missing("subject"))?;
            let o = obj.ok_or_else(|| missing("object"))?;
            bbox_union(s, o)
        }
    };
    let mut variant = pair.clone();
    variant.pair_id = format!("{}-local-{}", pair.pair_id, mode.label());
    variant.crop = Some(crop);
    Ok(variant)
}

// ---------------------------------------------------------------------------
// Probe-set construction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AspectCounts {
    pub attempts: usize,
    pub emitted: usize,
    pub no_candidate: usize,
    pub excluded: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub samples: usize,
    /// Keyed by aspect label; `emitted + no_candidate + excluded +
    /// duplicates == attempts` in every entry.
    pub aspects: BTreeMap<String, AspectCounts>,
    /// Emitted pairs per taxonomy path label.
    pub paths: BTreeMap<String, usize>,
    pub local_variants: usize,
    pub unclassified_attributes: usize,
    pub pool_sizes: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet<T> {
    pub pairs: Vec<ProbePair<T>>,
    pub report: GenerationReport,
    pub pools: CandidatePools,
}

struct SampleOutput<T> {
    pairs: Vec<ProbePair<T>>,
    counts: BTreeMap<Aspect, AspectCounts>,
    local_variants: usize,
}

fn generate_for_sample<T: Scalar>(
    sample: &CanonicalSample<T>,
    tags: &SampleTags,
    pools: &CandidatePools,
    policy: &GenerationPolicy<T>,
    embedder: &dyn Embedder<T>,
) -> Result<SampleOutput<T>, NegativeError> {
    let mut rng = sample_rng(policy.seed, &sample.id);
    let mut out = SampleOutput {
        pairs: Vec::new(),
        counts: BTreeMap::new(),
        local_variants: 0,
    };
    let mut seen: BTreeSet<(Aspect, String, String)> = BTreeSet::new();

    for tagged in &tags.tagged {
        let aspect = tagged.path.aspect;
        if !policy.aspects.contains(&aspect) {
            continue;
        }
        let counts = out.counts.entry(aspect).or_default();
        counts.attempts += 1;

        if policy.dedupe {
            if let Some((positive, original)) = positive_caption(sample, &tagged.target, policy)? {
                if !seen.insert((aspect, positive, original.to_lowercase())) {
                    counts.duplicates += 1;
                    continue;
                }
            }
        }

        let pair = match &tagged.target {
            TargetRef::Object { oid } => {
                generate_object_pair(sample, oid, tagged.path, pools, policy, embedder, &mut rng)?
            }
            TargetRef::Attribute { oid, index } => generate_attribute_pair(
                sample, oid, *index, tagged.path, pools, policy, embedder, &mut rng,
            )?,
            TargetRef::Relation { index } => {
                generate_relation_pair(sample, *index, tagged.path, pools, policy, embedder, &mut rng)?
            }
        };
        let Some(pair) = pair else {
            counts.no_candidate += 1;
            continue;
        };
        if policy.exclude.contains(&pair.pair_id) {
            counts.excluded += 1;
            continue;
        }
        counts.emitted += 1;

        let variant = match (&tagged.target, policy.local_variant) {
            (TargetRef::Relation { index }, Some(mode)) => {
                let rel = &sample.relations[*index];
                let subj = sample.object(&rel.subj).map(|o| &o.bbox);
                let obj = sample.object(&rel.obj).map(|o| &o.bbox);
                Some(generate_local_variant(&pair, subj, obj, mode)?)
            }
            _ => None,
        };
        out.pairs.push(pair);
        if let Some(v) = variant {
            if !policy.exclude.contains(&v.pair_id) {
                out.local_variants += 1;
                out.pairs.push(v);
            }
        }
    }
    Ok(out)
}

fn positive_caption<T: Scalar>(
    sample: &CanonicalSample<T>,
    target: &TargetRef,
    policy: &GenerationPolicy<T>,
) -> Result<Option<(String, String)>, NegativeError> {
    let caption = match target {
        TargetRef::Object { oid } => object_caption(sample, oid, &policy.templates),
        TargetRef::Attribute { oid, index } => sample
            .object(oid)
            .and_then(|o| o.attributes.get(*index).map(|a| (o, a)))
            .map(|(o, a)| Caption {
                template: &policy.templates.attribute,
                slots: BTreeMap::from([("obj", o.name.clone()), ("attr", a.value.clone())]),
                replaced_slot: "attr",
            }),
        TargetRef::Relation { index } => triple_slots(sample, *index).map(|slots| Caption {
            template: &policy.templates.relation,
            slots,
            replaced_slot: "pred",
        }),
    };
    caption
        .map(|c| Ok((c.render(None)?, c.original().to_string())))
        .transpose()
}

fn run_in_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R, NegativeError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| NegativeError::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Tags the corpus, builds pools, and generates pairs for every sample on
/// `jobs` worker threads. Output depends only on the corpus, the policy and
/// the embedder contents, not on `jobs`.
pub fn build_probe_set<T: Scalar>(
    corpus: &[CanonicalSample<T>],
    policy: &GenerationPolicy<T>,
    ctx: &TaggingContext<'_, T>,
    jobs: usize,
) -> Result<ProbeSet<T>, NegativeError> {
    let tags: Vec<SampleTags> = run_in_pool(jobs, || {
        corpus
            .par_iter()
            .map(|s| tag_sample(s, ctx))
            .collect::<Result<Vec<_>, _>>()
    })??;

    let tagged: Vec<_> = corpus.iter().zip(tags.iter()).collect();
    let pools = build_candidate_pools(&tagged);

    let outputs: Vec<SampleOutput<T>> = run_in_pool(jobs, || {
        tagged
            .par_iter()
            .map(|(sample, tags)| generate_for_sample(sample, tags, &pools, policy, ctx.embedder))
            .collect::<Result<Vec<_>, _>>()
    })??;

    let mut report = GenerationReport {
        samples: corpus.len(),
        unclassified_attributes: tags.iter().map(|t| t.unclassified.len()).sum(),
        ..Default::default()
    };
    report.pool_sizes.insert("object".into(), pools.objects.len());
    for (class, pool) in &pools.attributes {
        report.pool_sizes.insert(format!("attribute/{class}"), pool.len());
    }
    for (kind, pool) in &pools.predicates {
        report.pool_sizes.insert(format!("relation/{kind}"), pool.len());
    }
    let mut pairs = Vec::new();
    for out in outputs {
        for (aspect, c) in out.counts {
            let entry = report.aspects.entry(aspect.label().to_string()).or_default();
            entry.attempts += c.attempts;
            entry.emitted += c.emitted;
            entry.no_candidate += c.no_candidate;
            entry.excluded += c.excluded;
            entry.duplicates += c.duplicates;
        }
        report.local_variants += out.local_variants;
        for p in &out.pairs {
            *report.paths.entry(p.path.label()).or_default() += 1;
        }
        pairs.extend(out.pairs);
    }
    Ok(ProbeSet { pairs, report, pools })
}

// ---------------------------------------------------------------------------
// Probe-set JSONL
// ---------------------------------------------------------------------------

/// Taxonomy path as written in probe and score files; absent buckets are
/// `null`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathRecord {
    pub size: Option<SizeBucket>,
    pub location: Option<LocationBucket>,
    pub attr_class: Option<AttributeClass>,
    pub rel_kind: Option<RelationKind>,
}

impl PathRecord {
    pub fn from_path(path: &AspectPath) -> Self {
        Self {
            size: path.size,
            location: path.location,
            attr_class: path.attr_class,
            rel_kind: path.rel_kind,
        }
    }

    pub fn with_aspect(self, aspect: Aspect) -> AspectPath {
        AspectPath {
            aspect,
            size: self.size,
            location: self.location,
            attr_class: self.attr_class,
            rel_kind: self.rel_kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct ProbeRecord<T> {
    pair_id: String,
    sample_id: String,
    aspect: Aspect,
    path: PathRecord,
    image: ImageMeta,
    crop: Option<BBox<T>>,
    pos: String,
    neg: String,
    orig: String,
    repl: String,
    sim: T,
}

impl<T: Scalar> ProbePair<T> {
    pub fn to_json_line(&self) -> String {
        let record = ProbeRecord {
            pair_id: self.pair_id.clone(),
            sample_id: self.sample_id.clone(),
            aspect: self.path.aspect,
            path: PathRecord::from_path(&self.path),
            image: self.image.clone(),
            crop: self.crop,
            pos: self.positive_text.clone(),
            neg: self.negative_text.clone(),
            orig: self.replaced_original.clone(),
            repl: self.replacement.clone(),
            sim: self.similarity,
        };
        serde_json::to_string(&record).expect("probe pair serializes")
    }
}

pub fn write_probe_set<T: Scalar>(pairs: &[ProbePair<T>]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&p.to_json_line());
        out.push('\n');
    }
    out
}

pub fn parse_probe_set<T: Scalar>(text: &str) -> Result<Vec<ProbePair<T>>, NegativeError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let r: ProbeRecord<T> = serde_json::from_str(line).map_err(|e| NegativeError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            Ok(ProbePair {
                pair_id: r.pair_id,
                sample_id: r.sample_id,
                path: r.path.with_aspect(r.aspect),
                image: r.image,
                crop: r.crop,
                positive_text: r.pos,
                negative_text: r.neg,
                replaced_original: r.orig,
                replacement: r.repl,
                similarity: r.sim,
            })
        })
        .collect()
}
