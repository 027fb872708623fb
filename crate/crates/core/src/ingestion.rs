//! Corpus ingestion: the canonical line-delimited sample schema, the Visual
//! Genome scene/region-graph adapter, and corpus validation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: sample {sample_id:?}: field `{field}`: {message}")]
    Schema {
        line: usize,
        sample_id: String,
        field: String,
        message: String,
    },
    #[error("VG image {image_id}: missing image dimension `{field}`")]
    MissingDimensions { image_id: String, field: String },
    #[error("VG image {image_id}: relationship references unknown object id {object_id}")]
    DanglingRelation { image_id: String, object_id: String },
    #[error("VG image {image_id}: {message}")]
    MalformedVg { image_id: String, message: String },
    #[error("VG input: {0}")]
    VgJson(#[source] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Image locator and pixel dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageMeta {
    pub uri: String,
    pub width: u32,
    pub height: u32,
}

impl ImageMeta {
    pub fn new(uri: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            uri: uri.into(),
            width,
            height,
        }
    }
}

/// Axis-aligned pixel rectangle: left, top, width, height.
///
/// Serialized as the array `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    from = "[T; 4]",
    into = "[T; 4]",
    bound(serialize = "T: Copy + Serialize", deserialize = "T: Deserialize<'de>")
)]
pub struct BBox<T> {
    pub x: T,
    pub y: T,
    pub w: T,
    pub h: T,
}

impl<T> From<[T; 4]> for BBox<T> {
    fn from([x, y, w, h]: [T; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl<T> From<BBox<T>> for [T; 4] {
    fn from(b: BBox<T>) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl<T: Scalar> BBox<T> {
    pub fn new(x: T, y: T, w: T, h: T) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> T {
        self.x + self.w
    }

    pub fn bottom(&self) -> T {
        self.y + self.h
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn center(&self) -> (T, T) {
        let two = T::lit(2.0);
        (self.x + self.w / two, self.y + self.h / two)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()
    }

    /// Positive extent on both axes.
    pub fn has_positive_extent(&self) -> bool {
        self.w > T::zero() && self.h > T::zero()
    }

    pub fn within(&self, image: &ImageMeta) -> bool {
        let width = T::lit(f64::from(image.width));
        let height = T::lit(f64::from(image.height));
        self.x >= T::zero()
            && self.y >= T::zero()
            && self.right() <= width
            && self.bottom() <= height
    }

    /// Whether `other` lies entirely inside `self`.
    pub fn contains(&self, other: &BBox<T>) -> bool {
        self.x <= other.x
            && self.y <= other.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    /// Minimal axis-aligned box containing both boxes. On an axis where one
    /// box already covers the other its span is kept bit for bit, so the
    /// union is idempotent and absorbs its inputs under rounding.
    pub fn union(&self, other: &BBox<T>) -> BBox<T> {
        let (x, w) = union_span(self.x, self.w, other.x, other.w);
        let (y, h) = union_span(self.y, self.h, other.y, other.h);
        BBox::new(x, y, w, h)
    }
}

fn union_span<T: Scalar>(a: T, aw: T, b: T, bw: T) -> (T, T) {
    let (a_end, b_end) = (a + aw, b + bw);
    if a <= b && b_end <= a_end {
        return (a, aw);
    }
    if b <= a && a_end <= b_end {
        return (b, bw);
    }
    let (lo, hi) = (a.min(b), a_end.max(b_end));
    let mut len = hi - lo;
    // lo + (hi - lo) can round below hi
    for _ in 0..4 {
        if lo + len >= hi {
            break;
        }
        len = len + (hi - (lo + len));
    }
    (lo, len)
}

/// One attribute value attached to an object. `class` is an optional hint;
/// classification proper happens during taxonomy tagging.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeValue {
    pub value: String,
    #[serde(default)]
    pub class: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SceneObject<T> {
    pub oid: String,
    pub name: String,
    pub bbox: BBox<T>,
    #[serde(default)]
    pub attributes: Vec<AttributeValue>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTriple {
    pub subj: String,
    pub pred: String,
    pub obj: String,
}

/// One image with its scene graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CanonicalSample<T> {
    pub id: String,
    pub image: ImageMeta,
    #[serde(default)]
    pub objects: Vec<SceneObject<T>>,
    #[serde(default)]
    pub relations: Vec<RelationTriple>,
    /// Unknown top-level keys, kept for round-tripping.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl<T: Scalar> CanonicalSample<T> {
    pub fn object(&self, oid: &str) -> Option<&SceneObject<T>> {
        self.objects.iter().find(|o| o.oid == oid)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("sample serializes")
    }
}

/// Parses canonical JSONL text. Whitespace-only lines are skipped; every
/// other line must hold one sample.
pub fn parse_canonical<T: Scalar>(text: &str) -> Result<Vec<CanonicalSample<T>>, IngestError> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(idx, line)| parse_canonical_line(idx + 1, line))
        .collect()
}

pub fn parse_canonical_reader<T: Scalar, R: BufRead>(
    reader: R,
) -> Result<Vec<CanonicalSample<T>>, IngestError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_canonical_line(idx + 1, &line)?);
    }
    Ok(out)
}

fn parse_canonical_line<T: Scalar>(
    line_no: usize,
    line: &str,
) -> Result<CanonicalSample<T>, IngestError> {
    let value: Value = serde_json::from_str(line).map_err(|source| IngestError::Json {
        line: line_no,
        source,
    })?;
    let sample_id = value
        .get("id")
        .and_then(Value::as_str)
        .unwrap_or("<unknown>")
        .to_string();
    let sample: CanonicalSample<T> =
        serde_json::from_value(value).map_err(|e| IngestError::Schema {
            line: line_no,
            sample_id: sample_id.clone(),
            field: serde_field_hint(&e),
            message: e.to_string(),
        })?;
    check_fields(&sample).map_err(|(field, message)| IngestError::Schema {
        line: line_no,
        sample_id,
        field,
        message,
    })?;
    Ok(sample)
}

fn serde_field_hint(err: &serde_json::Error) -> String {
    let msg = err.to_string();
    msg.split('`').nth(1).unwrap_or("<document>").to_string()
}

/// Per-field invariants that do not depend on other fields.
fn check_fields<T: Scalar>(sample: &CanonicalSample<T>) -> Result<(), (String, String)> {
    let fail = |field: String, message: &str| Err((field, message.to_string()));
    if sample.id.trim().is_empty() {
        return fail("id".into(), "must be non-empty");
    }
    if sample.image.uri.trim().is_empty() {
        return fail("image.uri".into(), "must be non-empty");
    }
    if sample.image.width == 0 {
        return fail("image.width".into(), "must be at least 1");
    }
    if sample.image.height == 0 {
        return fail("image.height".into(), "must be at least 1");
    }
    for (i, obj) in sample.objects.iter().enumerate() {
        if obj.oid.trim().is_empty() {
            return fail(format!("objects[{i}].oid"), "must be non-empty");
        }
        if obj.name.trim().is_empty() {
            return fail(format!("objects[{i}].name"), "must be non-empty");
        }
        if !obj.bbox.is_finite() {
            return fail(format!("objects[{i}].bbox"), "coordinates must be finite");
        }
        if obj.bbox.w <= T::zero() {
            return fail(format!("objects[{i}].bbox.w"), "must be positive");
        }
        if obj.bbox.h <= T::zero() {
            return fail(format!("objects[{i}].bbox.h"), "must be positive");
        }
    }
    for (i, rel) in sample.relations.iter().enumerate() {
        if rel.pred.trim().is_empty() {
            return fail(format!("relations[{i}].pred"), "must be non-empty");
        }
    }
    Ok(())
}

/// Serializes samples back to canonical JSONL (LF terminated).
pub fn write_canonical<T: Scalar>(samples: &[CanonicalSample<T>]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&s.to_json_line());
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Visual Genome adapter
// ---------------------------------------------------------------------------

/// Converts VG-style scene/region graph JSON into canonical samples.
///
/// Accepts a top-level array of image entries or a single entry. Each entry
/// carries `image_id` (or `id`), `width`, `height`, an optional `url`, and
/// objects/relationships either at top level, inside `regions`, or both.
/// Objects repeated across regions are merged by `object_id`; relationships
/// are kept in input order without deduplication.
pub fn adapt_vg_region_graph<T: Scalar>(text: &str) -> Result<Vec<CanonicalSample<T>>, IngestError> {
    let root: Value = serde_json::from_str(text).map_err(IngestError::VgJson)?;
    match root {
        Value::Array(entries) => entries.iter().map(adapt_vg_entry).collect(),
        entry @ Value::Object(_) => Ok(vec![adapt_vg_entry(&entry)?]),
        _ => Err(IngestError::MalformedVg {
            image_id: "<root>".into(),
            message: "expected an array of image entries".into(),
        }),
    }
}

fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn adapt_vg_entry<T: Scalar>(entry: &Value) -> Result<CanonicalSample<T>, IngestError> {
    let image_id = entry
        .get("image_id")
        .or_else(|| entry.get("id"))
        .and_then(id_string)
        .ok_or_else(|| IngestError::MalformedVg {
            image_id: "<unknown>".into(),
            message: "missing image_id".into(),
        })?;
    let dim = |field: &str| -> Result<u32, IngestError> {
        entry
            .get(field)
            .and_then(Value::as_u64)
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| IngestError::MissingDimensions {
                image_id: image_id.clone(),
                field: field.to_string(),
            })
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let uri = entry
        .get("url")
        .or_else(|| entry.get("image_url"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| format!("{image_id}.jpg"));

    let mut groups: Vec<&Value> = vec![entry];
    if let Some(regions) = entry.get("regions").and_then(Value::as_array) {
        groups.extend(regions.iter());
    }

    let mut objects: Vec<SceneObject<T>> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for group in &groups {
        for obj in group
            .get("objects")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
        {
            let parsed = vg_object::<T>(&image_id, obj)?;
            match index.get(&parsed.oid) {
                Some(&at) => {
                    let existing = &mut objects[at];
                    for attr in parsed.attributes {
                        if !existing.attributes.contains(&attr) {
                            existing.attributes.push(attr);
                        }
                    }
                }
                None => {
                    index.insert(parsed.oid.clone(), objects.len());
                    objects.push(parsed);
                }
            }
        }
    }

    let mut relations = Vec::new();
    for group in &groups {
        for rel in group
            .get("relationships")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
        {
            let endpoint = |id_key: &str, nested: &str| -> Result<String, IngestError> {
                rel.get(id_key)
                    .and_then(id_string)
                    .or_else(|| {
                        rel.get(nested).and_then(|o| {
                            o.get("object_id").or_else(|| o.get("id")).and_then(id_string)
                        })
                    })
                    .ok_or_else(|| IngestError::MalformedVg {
                        image_id: image_id.clone(),
                        message: format!("relationship without `{id_key}`"),
                    })
            };
            let subj = endpoint("subject_id", "subject")?;
            let obj = endpoint("object_id", "object")?;
            for id in [&subj, &obj] {
                if !index.contains_key(id) {
                    return Err(IngestError::DanglingRelation {
                        image_id: image_id.clone(),
                        object_id: id.clone(),
                    });
                }
            }
            let pred = rel
                .get("predicate")
                .and_then(Value::as_str)
                .map(|p| p.trim().to_string())
                .unwrap_or_default();
            relations.push(RelationTriple { subj, pred, obj });
        }
    }

    Ok(CanonicalSample {
        id: image_id,
        image: ImageMeta::new(uri, width, height),
        objects,
        relations,
        extra: BTreeMap::new(),
    })
}

fn vg_object<T: Scalar>(image_id: &str, obj: &Value) -> Result<SceneObject<T>, IngestError> {
    let malformed = |message: String| IngestError::MalformedVg {
        image_id: image_id.to_string(),
        message,
    };
    let oid = obj
        .get("object_id")
        .or_else(|| obj.get("id"))
        .and_then(id_string)
        .ok_or_else(|| malformed("object without object_id".into()))?;
    let name = obj
        .get("names")
        .and_then(Value::as_array)
        .and_then(|names| names.first())
        .and_then(Value::as_str)
        .or_else(|| obj.get("name").and_then(Value::as_str))
        .map(|n| n.trim().to_string())
        .ok_or_else(|| malformed(format!("object {oid} has no name")))?;
    let coord = |key: &str| -> Result<T, IngestError> {
        obj.get(key)
            .and_then(Value::as_f64)
            .map(T::lit)
            .ok_or_else(|| malformed(format!("object {oid} missing `{key}`")))
    };
    let bbox = BBox::new(coord("x")?, coord("y")?, coord("w")?, coord("h")?);
    let attributes = obj
        .get("attributes")
        .and_then(Value::as_array)
        .into_iter()
        .flatten()
        .filter_map(Value::as_str)
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(|a| AttributeValue {
            value: a.to_string(),
            class: None,
        })
        .collect();
    Ok(SceneObject {
        oid,
        name,
        bbox,
        attributes,
    })
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    EmptyId,
    DuplicateSampleId,
    InvalidImage,
    DuplicateObjectId(String),
    EmptyName(String),
    InvalidBBox(String),
    BBoxOutOfBounds(String),
    EmptyPredicate(usize),
    DanglingRelation(usize),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyId => write!(f, "empty sample id"),
            Self::DuplicateSampleId => write!(f, "duplicate sample id"),
            Self::InvalidImage => write!(f, "invalid image metadata"),
            Self::DuplicateObjectId(oid) => write!(f, "duplicate object id {oid}"),
            Self::EmptyName(oid) => write!(f, "empty object name ({oid})"),
            Self::InvalidBBox(oid) => write!(f, "invalid bbox ({oid})"),
            Self::BBoxOutOfBounds(oid) => write!(f, "bbox out of bounds ({oid})"),
            Self::EmptyPredicate(i) => write!(f, "empty predicate (relation {i})"),
            Self::DanglingRelation(i) => write!(f, "dangling relation endpoint (relation {i})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    /// Position of the sample in the validated list.
    pub index: usize,
    pub id: String,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub accepted: usize,
    /// Object, relation and attribute counts over accepted samples.
    pub objects: usize,
    pub relations: usize,
    pub attribute_values: usize,
    pub rejected: Vec<Rejection>,
}

impl ValidationReport {
    pub fn is_rejected(&self, index: usize) -> bool {
        self.rejected.iter().any(|r| r.index == index)
    }
}

/// Invariant violations of one sample, empty when the sample is valid.
pub fn sample_violations<T: Scalar>(sample: &CanonicalSample<T>) -> Vec<RejectReason> {
    let mut reasons = Vec::new();
    if sample.id.trim().is_empty() {
        reasons.push(RejectReason::EmptyId);
    }
    if sample.image.uri.trim().is_empty() || sample.image.width == 0 || sample.image.height == 0 {
        reasons.push(RejectReason::InvalidImage);
    }
    let mut seen = BTreeSet::new();
    for obj in &sample.objects {
        if !seen.insert(obj.oid.as_str()) {
            reasons.push(RejectReason::DuplicateObjectId(obj.oid.clone()));
        }
        if obj.name.trim().is_empty() {
            reasons.push(RejectReason::EmptyName(obj.oid.clone()));
        }
        if !obj.bbox.is_finite() || !obj.bbox.has_positive_extent() {
            reasons.push(RejectReason::InvalidBBox(obj.oid.clone()));
        } else if !obj.bbox.within(&sample.image) {
            reasons.push(RejectReason::BBoxOutOfBounds(obj.oid.clone()));
        }
    }
    for (i, rel) in sample.relations.iter().enumerate() {
        if rel.pred.trim().is_empty() {
            reasons.push(RejectReason::EmptyPredicate(i));
        }
        if !seen.contains(rel.subj.as_str()) || !seen.contains(rel.obj.as_str()) {
            reasons.push(RejectReason::DanglingRelation(i));
        }
    }
    reasons
}

/// Classifies every sample as accepted or rejected. A repeated sample id
/// rejects every occurrence after the first.
pub fn validate_corpus<T: Scalar>(samples: &[CanonicalSample<T>]) -> ValidationReport {
    let mut report = ValidationReport {
        samples: samples.len(),
        ..Default::default()
    };
    let mut ids = BTreeSet::new();
    for (index, sample) in samples.iter().enumerate() {
        let mut reasons = sample_violations(sample);
        if !ids.insert(sample.id.as_str()) {
            reasons.push(RejectReason::DuplicateSampleId);
        }
        if reasons.is_empty() {
            report.accepted += 1;
            report.objects += sample.objects.len();
            report.relations += sample.relations.len();
            report.attribute_values += sample
                .objects
                .iter()
                .map(|o| o.attributes.len())
                .sum::<usize>();
        } else {
            report.rejected.push(Rejection {
                index,
                id: sample.id.clone(),
                reasons: reasons.iter().map(ToString::to_string).collect(),
            });
        }
    }
    report
}

/// Keeps the samples `report` accepted, in order.
pub fn retain_accepted<T: Scalar>(
    samples: Vec<CanonicalSample<T>>,
    report: &ValidationReport,
) -> Vec<CanonicalSample<T>> {
    samples
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !report.is_rejected(*i))
        .map(|(_, s)| s)
        .collect()
}
