//! Taxonomy tagging: object size and location buckets, attribute classes and
//! relation kinds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Mul;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{cosine_similarity, Embedder, EmbeddingError};
use crate::ingestion::{BBox, CanonicalSample, ImageMeta};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("size thresholds must satisfy 0 < small_max < medium_max")]
    InvalidThresholds,
    #[error("attribute prototypes: class `{0}` has no anchors")]
    EmptyPrototypeClass(AttributeClass),
    #[error("attribute prototypes: unknown class `{0}`")]
    UnknownClass(String),
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Object,
    Attribute,
    Relation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocationBucket {
    Center,
    Mid,
    Margin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    Action,
    Spatial,
}

/// Declaration order is the tie-break order for class assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeClass {
    Color,
    Material,
    Size,
    State,
    Action,
}

impl AttributeClass {
    pub const ALL: [AttributeClass; 5] = [
        AttributeClass::Color,
        AttributeClass::Material,
        AttributeClass::Size,
        AttributeClass::State,
        AttributeClass::Action,
    ];
}

macro_rules! label_enum {
    ($ty:ty { $($variant:ident => $label:literal),+ $(,)? }) => {
        impl $ty {
            pub fn label(self) -> &'static str {
                match self { $(Self::$variant => $label),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($label => Ok(Self::$variant),)+
                    other => Err(format!("unknown {} `{other}`", stringify!($ty))),
                }
            }
        }
    };
}

label_enum!(Aspect { Object => "object", Attribute => "attribute", Relation => "relation" });
label_enum!(SizeBucket { Small => "small", Medium => "medium", Large => "large" });
label_enum!(LocationBucket { Center => "center", Mid => "mid", Margin => "margin" });
label_enum!(RelationKind { Action => "action", Spatial => "spatial" });
label_enum!(AttributeClass {
    Color => "color",
    Material => "material",
    Size => "size",
    State => "state",
    Action => "action",
});

/// Full bucket assignment of one probe target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AspectPath {
    pub aspect: Aspect,
    pub size: Option<SizeBucket>,
    pub location: Option<LocationBucket>,
    pub attr_class: Option<AttributeClass>,
    pub rel_kind: Option<RelationKind>,
}

impl AspectPath {
    pub fn object(size: SizeBucket, location: LocationBucket) -> Self {
        Self {
            aspect: Aspect::Object,
            size: Some(size),
            location: Some(location),
            attr_class: None,
            rel_kind: None,
        }
    }

    pub fn attribute(class: AttributeClass) -> Self {
        Self {
            aspect: Aspect::Attribute,
            size: None,
            location: None,
            attr_class: Some(class),
            rel_kind: None,
        }
    }

    pub fn relation(kind: RelationKind) -> Self {
        Self {
            aspect: Aspect::Relation,
            size: None,
            location: None,
            attr_class: None,
            rel_kind: Some(kind),
        }
    }

    /// Attaches image-level geometry of the anchoring object.
    pub fn with_geometry(mut self, size: SizeBucket, location: LocationBucket) -> Self {
        self.size = Some(size);
        self.location = Some(location);
        self
    }

    pub fn is_consistent(&self) -> bool {
        match self.aspect {
            Aspect::Object => self.size.is_some() && self.location.is_some(),
            Aspect::Attribute => self.attr_class.is_some(),
            Aspect::Relation => self.rel_kind.is_some(),
        }
    }

    /// Compact slash-joined label, e.g. `object/large/center`.
    pub fn label(&self) -> String {
        let mut parts = vec![self.aspect.label()];
        if let Some(c) = self.attr_class {
            parts.push(c.label());
        }
        if let Some(k) = self.rel_kind {
            parts.push(k.label());
        }
        if let Some(s) = self.size {
            parts.push(s.label());
        }
        if let Some(l) = self.location {
            parts.push(l.label());
        }
        parts.join("/")
    }
}

// ---------------------------------------------------------------------------
// Object geometry
// ---------------------------------------------------------------------------

/// Area cut-offs in px²: small when `area <= small_max`, medium when
/// `area <= medium_max`, large otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeThresholds<T> {
    #[serde(rename = "size_small_max")]
    pub small_max: T,
    #[serde(rename = "size_medium_max")]
    pub medium_max: T,
}

impl<T: Copy + PartialOrd + num_traits::Zero> SizeThresholds<T> {
    pub fn new(small_max: T, medium_max: T) -> Result<Self, TaxonomyError> {
        if !(T::zero() < small_max && small_max < medium_max) {
            return Err(TaxonomyError::InvalidThresholds);
        }
        Ok(Self {
            small_max,
            medium_max,
        })
    }
}

impl<T: Scalar> Default for SizeThresholds<T> {
    fn default() -> Self {
        Self {
            small_max: T::lit(1024.0),
            medium_max: T::lit(9216.0),
        }
    }
}

/// Half the image diagonal, `sqrt(w² + h²) / 2`.
pub fn half_diagonal<T: Scalar>(image: &ImageMeta) -> T {
    let w = T::lit(f64::from(image.width));
    let h = T::lit(f64::from(image.height));
    (w * w + h * h).sqrt() / T::lit(2.0)
}

/// Distance from the bbox center to the image center.
pub fn center_distance<T: Scalar>(image: &ImageMeta, bbox: &BBox<T>) -> T {
    let (cx, cy) = bbox.center();
    let two = T::lit(2.0);
    let dx = cx - T::lit(f64::from(image.width)) / two;
    let dy = cy - T::lit(f64::from(image.height)) / two;
    (dx * dx + dy * dy).sqrt()
}

/// `center_distance / half_diagonal`, in `[0, 1]` for boxes inside the image.
pub fn location_ratio<T: Scalar>(image: &ImageMeta, bbox: &BBox<T>) -> T {
    center_distance(image, bbox) / half_diagonal(image)
}

/// Bucket for a precomputed ratio. Both cut-offs are inclusive on the
/// lower bucket.
pub fn bucket_for_ratio<T: Scalar>(ratio: T) -> LocationBucket {
    let three = T::lit(3.0);
    if ratio <= T::one() / three {
        LocationBucket::Center
    } else if ratio <= T::lit(2.0) / three {
        LocationBucket::Mid
    } else {
        LocationBucket::Margin
    }
}

/// Compares squared distances, `9·d² ≤ k²·(w² + h²)/4`, so boxes with
/// integer or half-integer coordinates land on the cut-offs exactly.
pub fn location_bucket<T: Scalar>(image: &ImageMeta, bbox: &BBox<T>) -> LocationBucket {
    let (cx, cy) = bbox.center();
    let (w, h) = (T::lit(f64::from(image.width)), T::lit(f64::from(image.height)));
    let two = T::lit(2.0);
    let (dx, dy) = (cx - w / two, cy - h / two);
    let nine_d2 = T::lit(9.0) * (dx * dx + dy * dy);
    let half_diag2 = (w * w + h * h) / T::lit(4.0);
    if nine_d2 <= half_diag2 {
        LocationBucket::Center
    } else if nine_d2 <= T::lit(4.0) * half_diag2 {
        LocationBucket::Mid
    } else {
        LocationBucket::Margin
    }
}

/// Works for any ordered multiplicative type, exact rationals included.
pub fn size_bucket<T>(bbox: &BBox<T>, thresholds: &SizeThresholds<T>) -> SizeBucket
where
    T: Copy + PartialOrd + Mul<Output = T>,
{
    let area = bbox.w * bbox.h;
    if area <= thresholds.small_max {
        SizeBucket::Small
    } else if area <= thresholds.medium_max {
        SizeBucket::Medium
    } else {
        SizeBucket::Large
    }
}

// ---------------------------------------------------------------------------
// Relations
// ---------------------------------------------------------------------------

/// Normalized set of spatial prepositions (single or multi-word).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialLexicon {
    entries: BTreeSet<String>,
    longest: usize,
}

fn normalize_phrase(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

impl SpatialLexicon {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entries: BTreeSet<String> = entries
            .into_iter()
            .map(|e| normalize_phrase(e.as_ref()))
            .filter(|e| !e.is_empty())
            .collect();
        let longest = entries
            .iter()
            .map(|e| e.split(' ').count())
            .max()
            .unwrap_or(0);
        Self { entries, longest }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let path = path.as_ref();
        let file_err = |source: Box<dyn std::error::Error + Send + Sync>| TaxonomyError::File {
            path: path.display().to_string(),
            source,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.into()))?;
        let entries: Vec<String> = serde_json::from_str(&text).map_err(|e| file_err(e.into()))?;
        Ok(Self::new(entries))
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.entries.contains(&normalize_phrase(phrase))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Default for SpatialLexicon {
    fn default() -> Self {
        Self::new([
            "in", "on", "at", "above", "below", "under", "over", "behind", "in front of",
            "beside", "near", "inside", "outside", "next to", "between", "atop", "beneath",
        ])
    }
}

/// Spatial when the longest lexicon entry matching a prefix of the
/// normalized predicate exists (the head word being the shortest prefix).
pub fn classify_predicate(pred: &str, lexicon: &SpatialLexicon) -> RelationKind {
    let normalized = normalize_phrase(pred);
    let tokens: Vec<&str> = normalized.split(' ').filter(|t| !t.is_empty()).collect();
    let max = tokens.len().min(lexicon.longest);
    for n in (1..=max).rev() {
        if lexicon.entries.contains(&tokens[..n].join(" ")) {
            return RelationKind::Spatial;
        }
    }
    RelationKind::Action
}

// ---------------------------------------------------------------------------
// Attributes
// ---------------------------------------------------------------------------

/// Anchor phrases per attribute class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributePrototypes {
    anchors: BTreeMap<AttributeClass, Vec<String>>,
}

impl AttributePrototypes {
    pub fn new(anchors: BTreeMap<AttributeClass, Vec<String>>) -> Result<Self, TaxonomyError> {
        for (class, list) in &anchors {
            if list.iter().all(|a| a.trim().is_empty()) {
                return Err(TaxonomyError::EmptyPrototypeClass(*class));
            }
        }
        Ok(Self { anchors })
    }

    /// Reads a JSON object `{class: [anchor, ...]}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let path = path.as_ref();
        let file_err = |source: Box<dyn std::error::Error + Send + Sync>| TaxonomyError::File {
            path: path.display().to_string(),
            source,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.into()))?;
        Self::from_json(&text).map_err(|e| match e {
            TaxonomyError::File { source, .. } => file_err(source),
            other => other,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let raw: BTreeMap<String, Vec<String>> =
            serde_json::from_str(text).map_err(|e| TaxonomyError::File {
                path: "<inline>".into(),
                source: e.into(),
            })?;
        let mut anchors = BTreeMap::new();
        for (class, list) in raw {
            let class: AttributeClass = class.parse().map_err(|_| TaxonomyError::UnknownClass(class))?;
            anchors.insert(class, list);
        }
        Self::new(anchors)
    }

    pub fn anchors(&self, class: AttributeClass) -> &[String] {
        self.anchors.get(&class).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttributeAssignment {
    Class(AttributeClass),
    Unclassifiable,
}

/// Argmax over classes of the best anchor similarity. Below
/// `min_similarity`, or when the value has no embedding, the value is
/// unclassifiable. Ties keep the earlier class in [`AttributeClass`] order.
pub fn assign_attribute_class<T: Scalar>(
    value: &str,
    prototypes: &AttributePrototypes,
    embedder: &dyn Embedder<T>,
    min_similarity: T,
) -> Result<AttributeAssignment, EmbeddingError> {
    let Some(target) = embedder.embed(value)? else {
        return Ok(AttributeAssignment::Unclassifiable);
    };
    let mut best: Option<(AttributeClass, T)> = None;
    for class in AttributeClass::ALL {
        let mut class_best: Option<T> = None;
        for anchor in prototypes.anchors(class) {
            let Some(anchor_vec) = embedder.embed(anchor)? else {
                continue;
            };
            let sim = cosine_similarity(&target, &anchor_vec)?;
            if class_best.is_none_or(|b| sim > b) {
                class_best = Some(sim);
            }
        }
        if let Some(sim) = class_best {
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((class, sim));
            }
        }
    }
    Ok(match best {
        Some((class, sim)) if sim >= min_similarity => AttributeAssignment::Class(class),
        _ => AttributeAssignment::Unclassifiable,
    })
}

// ---------------------------------------------------------------------------
// Sample tagging
// ---------------------------------------------------------------------------

/// What a taxonomy path was assigned to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TargetRef {
    Object { oid: String },
    Attribute { oid: String, index: usize },
    Relation { index: usize },
}

impl TargetRef {
    /// Stable key used in pair ids.
    pub fn key(&self) -> String {
        match self {
            Self::Object { oid } => format!("obj:{oid}"),
            Self::Attribute { oid, index } => format!("attr:{oid}:{index}"),
            Self::Relation { index } => format!("rel:{index}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedTarget {
    pub target: TargetRef,
    pub path: AspectPath,
}

/// Everything tagging needs besides the sample.
pub struct TaggingContext<'a, T: Scalar> {
    pub thresholds: SizeThresholds<T>,
    pub lexicon: &'a SpatialLexicon,
    pub prototypes: &'a AttributePrototypes,
    pub embedder: &'a dyn Embedder<T>,
    pub min_assign_similarity: T,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleTags {
    pub tagged: Vec<TaggedTarget>,
    /// Attribute values that matched no class.
    pub unclassified: Vec<TargetRef>,
}

/// Tags every object, classified attribute value and relation of a
/// validated sample. Order: objects by oid, then their attribute values,
/// then relations in input order. Attribute paths carry the owning
/// object's geometry; relation paths carry the subject's.
pub fn tag_sample<T: Scalar>(
    sample: &CanonicalSample<T>,
    ctx: &TaggingContext<'_, T>,
) -> Result<SampleTags, EmbeddingError> {
    let mut objects: Vec<_> = sample.objects.iter().collect();
    objects.sort_by(|a, b| a.oid.cmp(&b.oid));

    let geometry = |bbox: &BBox<T>| {
        (
            size_bucket(bbox, &ctx.thresholds),
            location_bucket(&sample.image, bbox),
        )
    };

    let mut tags = SampleTags::default();
    for obj in &objects {
        let (size, loc) = geometry(&obj.bbox);
        tags.tagged.push(TaggedTarget {
            target: TargetRef::Object {
                oid: obj.oid.clone(),
            },
            path: AspectPath::object(size, loc),
        });
    }
    for obj in &objects {
        let (size, loc) = geometry(&obj.bbox);
        for (index, attr) in obj.attributes.iter().enumerate() {
            let target = TargetRef::Attribute {
                oid: obj.oid.clone(),
                index,
            };
            match assign_attribute_class(
                &attr.value,
                ctx.prototypes,
                ctx.embedder,
                ctx.min_assign_similarity,
            )? {
                AttributeAssignment::Class(class) => tags.tagged.push(TaggedTarget {
                    target,
                    path: AspectPath::attribute(class).with_geometry(size, loc),
                }),
                AttributeAssignment::Unclassifiable => tags.unclassified.push(target),
            }
        }
    }
    for (index, rel) in sample.relations.iter().enumerate() {
        let mut path = AspectPath::relation(classify_predicate(&rel.pred, ctx.lexicon));
        if let Some(subj) = sample.object(&rel.subj) {
            let (size, loc) = geometry(&subj.bbox);
            path = path.with_geometry(size, loc);
        }
        tags.tagged.push(TaggedTarget {
            target: TargetRef::Relation { index },
            path,
        });
    }
    Ok(tags)
}
