//! Pairwise accuracy overall and per taxonomy bucket, gap statistics and
//! group averages.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::scoring::ScoredPair;
use crate::taxonomy::{Aspect, AttributeClass, LocationBucket, RelationKind, SizeBucket};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("group `{group}` names unknown model `{model}`")]
    UnknownModel { group: String, model: String },
    #[error("group `{0}` has no members")]
    EmptyGroup(String),
}

/// An aspect total when every dimension is `None`, otherwise exactly one
/// dimension is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BucketKey {
    pub aspect: Aspect,
    pub size: Option<SizeBucket>,
    pub location: Option<LocationBucket>,
    pub attr_class: Option<AttributeClass>,
    pub rel_kind: Option<RelationKind>,
}

impl BucketKey {
    pub fn total(aspect: Aspect) -> Self {
        Self {
            aspect,
            size: None,
            location: None,
            attr_class: None,
            rel_kind: None,
        }
    }

    pub fn size(aspect: Aspect, size: SizeBucket) -> Self {
        Self { size: Some(size), ..Self::total(aspect) }
    }

    pub fn location(aspect: Aspect, location: LocationBucket) -> Self {
        Self { location: Some(location), ..Self::total(aspect) }
    }

    pub fn attr_class(class: AttributeClass) -> Self {
        Self { attr_class: Some(class), ..Self::total(Aspect::Attribute) }
    }

    pub fn rel_kind(kind: RelationKind) -> Self {
        Self { rel_kind: Some(kind), ..Self::total(Aspect::Relation) }
    }

    pub fn is_total(&self) -> bool {
        self.size.is_none() && self.location.is_none() && self.attr_class.is_none() && self.rel_kind.is_none()
    }
}

impl fmt::Display for BucketKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.aspect)?;
        if let Some(s) = self.size {
            write!(f, "/{s}")?;
        }
        if let Some(l) = self.location {
            write!(f, "/{l}")?;
        }
        if let Some(c) = self.attr_class {
            write!(f, "/{c}")?;
        }
        if let Some(k) = self.rel_kind {
            write!(f, "/{k}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BucketAccuracy<T> {
    #[serde(flatten)]
    pub key: BucketKey,
    pub n: usize,
    pub wins: usize,
    /// `wins / n`; `None` when `n == 0`.
    pub acc: Option<T>,
}

impl<T: Scalar> BucketAccuracy<T> {
    pub fn from_counts(key: BucketKey, n: usize, wins: usize) -> Self {
        assert!(wins <= n, "wins must not exceed n");
        let acc = (n > 0).then(|| T::lit(wins as f64) / T::lit(n as f64));
        Self { key, n, wins, acc }
    }
}

/// Eq. 1's indicator: a pair is won only when the positive scores strictly
/// higher. Ties lose.
pub fn wins<T: Scalar>(pair: &ScoredPair<T>) -> bool {
    pair.pos_score > pair.neg_score
}

pub fn pairwise_accuracy<T: Scalar>(pairs: &[ScoredPair<T>]) -> (usize, usize, Option<T>) {
    let n = pairs.len();
    let w = pairs.iter().filter(|p| wins(p)).count();
    let acc = (n > 0).then(|| T::lit(w as f64) / T::lit(n as f64));
    (n, w, acc)
}

/// Every bucket key a pair contributes to: its aspect total, then its size,
/// location, class and kind buckets where the path carries them.
pub fn bucket_keys(path: &crate::taxonomy::AspectPath) -> Vec<BucketKey> {
    let aspect = path.aspect;
    let mut keys = vec![BucketKey::total(aspect)];
    if let Some(s) = path.size {
        keys.push(BucketKey::size(aspect, s));
    }
    if let Some(l) = path.location {
        keys.push(BucketKey::location(aspect, l));
    }
    if let (Aspect::Attribute, Some(c)) = (aspect, path.attr_class) {
        keys.push(BucketKey::attr_class(c));
    }
    if let (Aspect::Relation, Some(k)) = (aspect, path.rel_kind) {
        keys.push(BucketKey::rel_kind(k));
    }
    keys
}

/// One entry per observed key, sorted by key.
pub fn aggregate_by_bucket<T: Scalar>(pairs: &[ScoredPair<T>]) -> Vec<BucketAccuracy<T>> {
    let mut counts: BTreeMap<BucketKey, (usize, usize)> = BTreeMap::new();
    for p in pairs {
        let won = wins(p) as usize;
        for key in bucket_keys(&p.path) {
            let c = counts.entry(key).or_default();
            c.0 += 1;
            c.1 += won;
        }
    }
    counts
        .into_iter()
        .map(|(key, (n, w))| BucketAccuracy::from_counts(key, n, w))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GapStatistic<T> {
    pub label: String,
    /// Percentage points.
    pub lhs: T,
    pub rhs: T,
    pub gap: T,
}

impl<T: Scalar> GapStatistic<T> {
    pub fn new(label: impl Into<String>, lhs: T, rhs: T) -> Self {
        Self {
            label: label.into(),
            lhs,
            rhs,
            gap: lhs - rhs,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GapReport<T> {
    pub gaps: Vec<GapStatistic<T>>,
    pub notes: Vec<String>,
}

impl<T: Scalar> GapReport<T> {
    pub fn get(&self, label: &str) -> Option<&GapStatistic<T>> {
        self.gaps.iter().find(|g| g.label == label)
    }
}

fn percent<T: Scalar>(acc: T) -> T {
    acc * T::lit(100.0)
}

/// Gaps from bucket accuracies given as fractions in [0, 1].
pub fn gaps_from_accuracies<T: Scalar>(acc: &BTreeMap<BucketKey, T>) -> GapReport<T> {
    let specs = [
        (
            "center_vs_margin",
            BucketKey::location(Aspect::Object, LocationBucket::Center),
            BucketKey::location(Aspect::Object, LocationBucket::Margin),
        ),
        (
            "large_vs_small",
            BucketKey::size(Aspect::Object, SizeBucket::Large),
            BucketKey::size(Aspect::Object, SizeBucket::Small),
        ),
    ];
    let mut report = GapReport { gaps: Vec::new(), notes: Vec::new() };
    for (label, lhs, rhs) in specs {
        match (acc.get(&lhs), acc.get(&rhs)) {
            (Some(&l), Some(&r)) => report.gaps.push(GapStatistic::new(label, percent(l), percent(r))),
            (l, r) => {
                let missing: Vec<String> = [(l, lhs), (r, rhs)]
                    .iter()
                    .filter(|(v, _)| v.is_none())
                    .map(|(_, k)| k.to_string())
                    .collect();
                report
                    .notes
                    .push(format!("{label} omitted: no accuracy for {}", missing.join(", ")));
            }
        }
    }
    report
}

/// center_vs_margin and large_vs_small over Object buckets, in percentage
/// points. Buckets that are absent or empty omit their statistic.
pub fn gap_statistics<T: Scalar>(buckets: &[BucketAccuracy<T>]) -> GapReport<T> {
    let acc: BTreeMap<BucketKey, T> = buckets
        .iter()
        .filter_map(|b| b.acc.map(|a| (b.key, a)))
        .collect();
    gaps_from_accuracies(&acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConfidenceInterval<T> {
    pub lo: T,
    pub hi: T,
}

/// Percentile bootstrap of pair-level accuracy.
pub fn bootstrap_interval<T: Scalar>(
    pairs: &[ScoredPair<T>],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Option<ConfidenceInterval<T>> {
    if pairs.is_empty() || resamples == 0 {
        return None;
    }
    let outcomes: Vec<bool> = pairs.iter().map(wins).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = outcomes.len();
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| (0..n).filter(|_| outcomes[rng.gen_range(0..n)]).count() as f64 / n as f64)
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let pick = |q: f64| {
        let idx = ((q * resamples as f64).floor() as usize).min(resamples - 1);
        T::lit(stats[idx])
    };
    Some(ConfidenceInterval {
        lo: pick(tail),
        hi: pick(1.0 - tail),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelSummary<T> {
    pub model: String,
    /// Pair-level accuracy over all pairs of the aspect.
    pub object_avg: Option<T>,
    pub attribute_avg: Option<T>,
    pub relation_avg: Option<T>,
    pub buckets: Vec<BucketAccuracy<T>>,
    pub gaps: GapReport<T>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub intervals: BTreeMap<String, ConfidenceInterval<T>>,
}

impl<T: Scalar> ModelSummary<T> {
    pub fn from_buckets(model: impl Into<String>, mut buckets: Vec<BucketAccuracy<T>>) -> Self {
        buckets.sort_by_key(|b| b.key);
        let total = |aspect| {
            buckets
                .iter()
                .find(|b| b.key == BucketKey::total(aspect))
                .and_then(|b| b.acc)
        };
        Self {
            model: model.into(),
            object_avg: total(Aspect::Object),
            attribute_avg: total(Aspect::Attribute),
            relation_avg: total(Aspect::Relation),
            gaps: gap_statistics(&buckets),
            buckets,
            intervals: BTreeMap::new(),
        }
    }

    pub fn from_pairs(model: impl Into<String>, pairs: &[ScoredPair<T>]) -> Self {
        Self::from_buckets(model, aggregate_by_bucket(pairs))
    }

    /// Adds 95% bootstrap intervals for each aspect total.
    pub fn with_intervals(mut self, pairs: &[ScoredPair<T>], resamples: usize, seed: u64) -> Self {
        for aspect in [Aspect::Object, Aspect::Attribute, Aspect::Relation] {
            let subset: Vec<_> = pairs.iter().filter(|p| p.path.aspect == aspect).cloned().collect();
            if let Some(ci) = bootstrap_interval(&subset, resamples, 0.95, seed) {
                self.intervals.insert(aspect.label().to_string(), ci);
            }
        }
        self
    }

    pub fn bucket(&self, key: &BucketKey) -> Option<&BucketAccuracy<T>> {
        self.buckets.iter().find(|b| &b.key == key)
    }

    pub fn accuracy(&self, key: &BucketKey) -> Option<T> {
        self.bucket(key).and_then(|b| b.acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GroupBucket<T> {
    #[serde(flatten)]
    pub key: BucketKey,
    pub acc: T,
    /// Members that had this bucket.
    pub models: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GroupSummary<T> {
    pub group: String,
    pub members: Vec<String>,
    pub buckets: Vec<GroupBucket<T>>,
    pub gaps: GapReport<T>,
}

impl<T: Scalar> GroupSummary<T> {
    pub fn accuracy(&self, key: &BucketKey) -> Option<T> {
        self.buckets.iter().find(|b| &b.key == key).map(|b| b.acc)
    }
}

/// Unweighted mean of member accuracies per bucket, over the members that
/// have a defined accuracy for it.
pub fn group_average<T: Scalar>(
    summaries: &[ModelSummary<T>],
    groups: &BTreeMap<String, Vec<String>>,
) -> Result<Vec<GroupSummary<T>>, MetricsError> {
    let by_model: BTreeMap<&str, &ModelSummary<T>> =
        summaries.iter().map(|s| (s.model.as_str(), s)).collect();
    let mut out = Vec::new();
    for (group, members) in groups {
        if members.is_empty() {
            return Err(MetricsError::EmptyGroup(group.clone()));
        }
        let mut sums: BTreeMap<BucketKey, (T, usize)> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for model in members {
            let summary = by_model.get(model.as_str()).ok_or_else(|| MetricsError::UnknownModel {
                group: group.clone(),
                model: model.clone(),
            })?;
            if !seen.insert(model.as_str()) {
                continue;
            }
            for b in &summary.buckets {
                if let Some(acc) = b.acc {
                    let e = sums.entry(b.key).or_insert((T::zero(), 0));
                    e.0 = e.0 + acc;
                    e.1 += 1;
                }
            }
        }
        let buckets: Vec<GroupBucket<T>> = sums
            .into_iter()
            .map(|(key, (sum, k))| GroupBucket {
                key,
                acc: sum / T::lit(k as f64),
                models: k,
            })
            .collect();
        let acc: BTreeMap<BucketKey, T> = buckets.iter().map(|b| (b.key, b.acc)).collect();
        out.push(GroupSummary {
            group: group.clone(),
            members: members.clone(),
            gaps: gaps_from_accuracies(&acc),
            buckets,
        });
    }
    Ok(out)
}
