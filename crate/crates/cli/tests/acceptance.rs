//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use vlprobe_core::config::{Overrides, RunConfig};
use vlprobe_core::ingestion::{BBox, CanonicalSample, ImageMeta};
use vlprobe_core::metrics::{aggregate_by_bucket, gaps_from_accuracies, group_average, BucketAccuracy, BucketKey, ModelSummary};
use vlprobe_core::negatives::{bbox_union, LocalMode, ProbePair};
use vlprobe_core::pipeline;
use vlprobe_core::report::{emit_csv_tables, emit_radar_svg, ReportDocument, RunMetadata};
use vlprobe_core::scoring::{
    default_references, score_probe_set, Batching, Capabilities, OracleScorer, ScoreRequest, ScoreResponse,
    ScoredPair, ScorerTransport, ScoringError,
};
use vlprobe_core::taxonomy::{
    location_bucket, size_bucket, Aspect, AspectPath, AttributeClass, LocationBucket, RelationKind, SizeBucket,
    SizeThresholds,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel).canonicalize().unwrap()
}

fn synthetic_config() -> RunConfig {
    RunConfig::load(data("synthetic/run.json")).unwrap()
}

fn synthetic_corpus(cfg: &RunConfig) -> Vec<CanonicalSample<f64>> {
    pipeline::read_corpus(&cfg.corpus, cfg.adapter).unwrap()
}

fn vlprobe(args: &[&str]) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vlprobe"))
        .args(args)
        .env_remove("VLPROBE_SCORER_URL")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("vlprobe {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// ---------------------------------------------------------------------------
// 1. Bucketing oracle
// ---------------------------------------------------------------------------

/// Integer-only reference. With doubled offsets dx = 2·cx − W the ratio test
/// r ≤ k/3 becomes 9·(dx² + dy²) ≤ k²·(W² + H²).
fn oracle_location(w: i64, h: i64, x: i64, y: i64, bw: i64, bh: i64) -> LocationBucket {
    let dx = 2 * x + bw - w;
    let dy = 2 * y + bh - h;
    let lhs = 9 * (dx * dx + dy * dy);
    let diag = w * w + h * h;
    if lhs <= diag {
        LocationBucket::Center
    } else if lhs <= 4 * diag {
        LocationBucket::Mid
    } else {
        LocationBucket::Margin
    }
}

fn oracle_size(bw: i64, bh: i64) -> SizeBucket {
    match bw * bh {
        a if a <= 1024 => SizeBucket::Small,
        a if a <= 9216 => SizeBucket::Medium,
        _ => SizeBucket::Large,
    }
}

#[derive(Debug, Clone, Copy)]
struct Case {
    w: i64,
    h: i64,
    x: i64,
    y: i64,
    bw: i64,
    bh: i64,
}

/// Box of width 1 or 2 whose doubled center offset is (dx, dy), if it fits.
fn boundary_case(w: i64, h: i64, dx: i64, dy: i64) -> Option<Case> {
    let fit = |full: i64, d: i64| {
        let extent = if (full + d) % 2 == 0 { 2 } else { 1 };
        let start = (full + d - extent) / 2;
        (start >= 0 && start + extent <= full).then_some((start, extent))
    };
    let (x, bw) = fit(w, dx)?;
    let (y, bh) = fit(h, dy)?;
    Some(Case { w, h, x, y, bw, bh })
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cases = Vec::new();
    for i in 0..1000 {
        let w = rng.gen_range(1..=4000);
        let h = rng.gen_range(1..=4000);
        let (bw, bh) = if i % 2 == 0 {
            (rng.gen_range(1..=w.min(120)), rng.gen_range(1..=h.min(120)))
        } else {
            (rng.gen_range(1..=w), rng.gen_range(1..=h))
        };
        cases.push(Case { w, h, x: rng.gen_range(0..=w - bw), y: rng.gen_range(0..=h - bh), bw, bh });
    }
    let random = cases.len();

    // Exactly on r = 1/3 and r = 2/3: W = 3a, H = 3b puts (a, b) and its
    // mirror images at one third of the half diagonal.
    let mut on_boundary = 0;
    for _ in 0..200 {
        let (a, b) = (rng.gen_range(1..400i64), rng.gen_range(1..400i64));
        for k in [1, 2] {
            for (dx, dy) in [(a, b), (b, a), (-a, b), (b, -a)] {
                if let Some(c) = boundary_case(3 * a, 3 * b, k * dx, k * dy) {
                    let expected = if k == 1 { LocationBucket::Center } else { LocationBucket::Mid };
                    check!(oracle_location(c.w, c.h, c.x, c.y, c.bw, c.bh) == expected, "oracle self-check {c:?}");
                    cases.push(c);
                    on_boundary += 1;
                }
            }
        }
    }
    for (bw, bh) in [(32, 32), (16, 64), (1, 1024), (31, 33), (25, 41), (96, 96), (48, 192), (5, 1843), (13, 709), (97, 95)] {
        cases.push(Case { w: 2000, h: 2000, x: 0, y: 0, bw, bh });
    }

    let thresholds = SizeThresholds::<f64>::default();
    for c in &cases {
        let image = ImageMeta::new("i", c.w as u32, c.h as u32);
        let bbox = BBox::new(c.x as f64, c.y as f64, c.bw as f64, c.bh as f64);
        let loc = location_bucket(&image, &bbox);
        check!(loc == oracle_location(c.w, c.h, c.x, c.y, c.bw, c.bh), "location mismatch on {c:?}: {loc}");
        let size = size_bucket(&bbox, &thresholds);
        check!(size == oracle_size(c.bw, c.bh), "size mismatch on {c:?}: {size}");
    }
    let elapsed = start.elapsed();
    check!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{random} random + {on_boundary} ratio-boundary + 10 area-boundary cases, {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------
// 2. Metric oracle
// ---------------------------------------------------------------------------

fn random_path(rng: &mut ChaCha8Rng) -> AspectPath {
    let size = [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large][rng.gen_range(0..3)];
    let loc = [LocationBucket::Center, LocationBucket::Mid, LocationBucket::Margin][rng.gen_range(0..3)];
    match rng.gen_range(0..3) {
        0 => AspectPath::object(size, loc),
        1 => AspectPath::attribute(AttributeClass::ALL[rng.gen_range(0..5)]).with_geometry(size, loc),
        _ => {
            let kind = if rng.gen_bool(0.5) { RelationKind::Action } else { RelationKind::Spatial };
            AspectPath::relation(kind).with_geometry(size, loc)
        }
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let pairs: Vec<ScoredPair<f64>> = (0..1000)
        .map(|i| ScoredPair {
            pair_id: format!("p{i}"),
            path: random_path(&mut rng),
            pos_score: grid[rng.gen_range(0..5)],
            neg_score: grid[rng.gen_range(0..5)],
        })
        .collect();

    let mut counts: BTreeMap<BucketKey, (usize, usize)> = BTreeMap::new();
    let mut ties = 0;
    for p in &pairs {
        let a = p.path.aspect;
        let mut keys = vec![BucketKey::total(a)];
        keys.extend(p.path.size.map(|s| BucketKey::size(a, s)));
        keys.extend(p.path.location.map(|l| BucketKey::location(a, l)));
        keys.extend(p.path.attr_class.map(BucketKey::attr_class));
        keys.extend(p.path.rel_kind.map(BucketKey::rel_kind));
        let win = usize::from(p.pos_score > p.neg_score);
        ties += usize::from(p.pos_score == p.neg_score);
        for k in keys {
            let e = counts.entry(k).or_default();
            e.0 += 1;
            e.1 += win;
        }
    }

    let got = aggregate_by_bucket(&pairs);
    check!(got.len() == counts.len(), "{} buckets, oracle has {}", got.len(), counts.len());
    for b in &got {
        let Some(&(n, w)) = counts.get(&b.key) else {
            return Err(format!("unexpected bucket {}", b.key));
        };
        check!((b.n, b.wins) == (n, w), "{}: ({}, {}) vs oracle ({n}, {w})", b.key, b.n, b.wins);
        let acc = b.acc.ok_or(format!("{} has no accuracy", b.key))?;
        check!(acc == w as f64 / n as f64 && (0.0..=1.0).contains(&acc), "{}: acc {acc}", b.key);
    }
    let all_ties: Vec<_> = pairs.iter().map(|p| ScoredPair { neg_score: p.pos_score, ..p.clone() }).collect();
    check!(
        aggregate_by_bucket(&all_ties).iter().all(|b| b.wins == 0 && b.acc == Some(0.0)),
        "ties must count as losses"
    );
    let elapsed = start.elapsed();
    check!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("{} buckets, {ties} ties, {elapsed:.2?}", got.len()))
}

// ---------------------------------------------------------------------------
// 3. Gap arithmetic
// ---------------------------------------------------------------------------

const OBJECT_TABLE: [(&str, [f64; 6]); 7] = [
    // Large, Medium, Small, Center, Mid, Margin
    ("ViLT", [88.58, 85.29, 82.18, 88.61, 86.65, 86.59]),
    ("ALBEF", [84.33, 80.25, 76.92, 82.87, 80.91, 81.19]),
    ("OSCAR", [88.41, 85.40, 78.92, 88.01, 85.50, 80.24]),
    ("UNITER", [85.27, 81.12, 78.06, 85.69, 83.64, 77.84]),
    ("LXMERT", [84.94, 82.05, 79.01, 84.56, 83.84, 79.77]),
    ("TCL", [86.15, 79.96, 74.91, 85.01, 83.21, 80.26]),
    ("CLIP", [88.83, 81.99, 75.70, 88.53, 85.86, 76.66]),
];

fn bucket(key: BucketKey, pct: f64) -> BucketAccuracy<f64> {
    BucketAccuracy::from_counts(key, 10_000, (pct * 100.0).round() as usize)
}

fn object_summary(model: &str, v: [f64; 6]) -> ModelSummary<f64> {
    let o = Aspect::Object;
    let keys = [
        BucketKey::size(o, SizeBucket::Large),
        BucketKey::size(o, SizeBucket::Medium),
        BucketKey::size(o, SizeBucket::Small),
        BucketKey::location(o, LocationBucket::Center),
        BucketKey::location(o, LocationBucket::Mid),
        BucketKey::location(o, LocationBucket::Margin),
    ];
    ModelSummary::from_buckets(model, keys.into_iter().zip(v).map(|(k, p)| bucket(k, p)).collect())
}

fn criterion_3() -> Outcome {
    let o = Aspect::Object;
    let center = BucketKey::location(o, LocationBucket::Center);
    let margin = BucketKey::location(o, LocationBucket::Margin);
    let large = BucketKey::size(o, SizeBucket::Large);
    let small = BucketKey::size(o, SizeBucket::Small);
    // Center, Margin, gap, Large, Small, gap
    let table_loc = [
        ("E2E", [85.50, 82.68, 2.82, 86.35, 78.0, 8.35]),
        ("Region-based", [86.09, 79.28, 6.81, 86.2, 78.66, 7.54]),
        ("CLIP", [88.53, 76.66, 11.87, 88.83, 75.70, 13.13]),
    ];
    let near = |a: f64, b: f64| (a - b).abs() <= 0.005;
    for (name, v) in table_loc {
        let acc = BTreeMap::from([(center, v[0] / 100.0), (margin, v[1] / 100.0), (large, v[3] / 100.0), (small, v[4] / 100.0)]);
        let gaps = gaps_from_accuracies(&acc);
        let cm = gaps.get("center_vs_margin").ok_or("center_vs_margin missing")?.gap;
        let ls = gaps.get("large_vs_small").ok_or("large_vs_small missing")?.gap;
        check!(near(cm, v[2]), "{name} center_vs_margin {cm:.4} vs {}", v[2]);
        check!(near(ls, v[5]), "{name} large_vs_small {ls:.4} vs {}", v[5]);
    }

    let summaries: Vec<_> = OBJECT_TABLE.iter().map(|&(m, v)| object_summary(m, v)).collect();
    let groups = BTreeMap::from([
        ("E2E".to_string(), vec!["ViLT".to_string(), "ALBEF".into(), "TCL".into()]),
        ("Region-based".to_string(), vec!["OSCAR".to_string(), "UNITER".into(), "LXMERT".into()]),
        ("CLIP".to_string(), vec!["CLIP".to_string()]),
    ]);
    let out = group_average(&summaries, &groups).map_err(|e| e.to_string())?;
    let group = |name: &str| out.iter().find(|g| g.group == name).unwrap();
    let e2e_center = group("E2E").accuracy(&center).unwrap() * 100.0;
    let region_center = group("Region-based").accuracy(&center).unwrap() * 100.0;
    check!(near(e2e_center, 85.50), "E2E Center {e2e_center:.4}");
    check!(near(region_center, 86.09), "Region Center {region_center:.4}");
    let clip = &group("CLIP").gaps;
    check!(near(clip.get("center_vs_margin").unwrap().gap, 11.87), "CLIP group center_vs_margin");
    check!(near(clip.get("large_vs_small").unwrap().gap, 13.13), "CLIP group large_vs_small");
    Ok(format!("six gaps within 0.005; E2E Center {e2e_center:.4}, Region Center {region_center:.4}"))
}

// ---------------------------------------------------------------------------
// 4. End-to-end determinism
// ---------------------------------------------------------------------------

fn without_timestamp(text: &str) -> String {
    text.lines().filter(|l| !l.trim_start().starts_with("\"timestamp\"")).collect::<Vec<_>>().join("\n")
}

fn criterion_4() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = data("synthetic/run.json");
    let mut outputs = Vec::new();
    let mut timings = Vec::new();
    for jobs in ["1", "8"] {
        let out = tmp.path().join(format!("jobs{jobs}"));
        let start = Instant::now();
        vlprobe(&["run", "--config", s(&cfg), "--seed", "42", "--jobs", jobs, "--out", s(&out)])?;
        let elapsed = start.elapsed();
        check!(elapsed < Duration::from_secs(10), "--jobs {jobs} took {elapsed:?}");
        timings.push(elapsed);
        let probes = fs::read(out.join("probes.jsonl")).map_err(|e| e.to_string())?;
        let report = fs::read_to_string(out.join("report.json")).map_err(|e| e.to_string())?;
        outputs.push((probes, without_timestamp(&report)));
    }
    check!(outputs[0].0 == outputs[1].0, "probes.jsonl differs between --jobs 1 and --jobs 8");
    check!(outputs[0].1 == outputs[1].1, "report.json differs between --jobs 1 and --jobs 8");
    let n = outputs[0].0.iter().filter(|&&b| b == b'\n').count();
    Ok(format!("{n} pairs identical, runs {:.2?} / {:.2?}", timings[0], timings[1]))
}

// ---------------------------------------------------------------------------
// 5. Analytic accuracy
// ---------------------------------------------------------------------------

/// Twenty images with one spatial relation each. Every predicate is a
/// single token and the pool holds only single tokens, so the negative
/// always swaps a reference token for a non-reference one.
fn relation_fixture(dir: &Path) -> (PathBuf, BTreeMap<String, String>) {
    let subjects = ["man", "boy", "child", "cat", "pilot"];
    let objects = ["table", "car", "bus", "skateboard", "wheel"];
    let preds = ["on", "under", "in", "near", "behind", "above"];
    let mut lines = Vec::new();
    let mut refs = BTreeMap::new();
    for i in 0..20 {
        let (subj, obj, pred) = (subjects[i % 5], objects[(i / 5 + i) % 5], preds[i % 6]);
        let uri = format!("images/rel-{i:02}.jpg");
        lines.push(
            json!({
                "id": format!("rel-{i:02}"),
                "image": {"uri": uri, "width": 640, "height": 480},
                "objects": [
                    {"oid": "s", "name": subj, "bbox": [100, 100, 120, 160]},
                    {"oid": "o", "name": obj, "bbox": [300, 200, 200, 150]},
                ],
                "relations": [{"subj": "s", "pred": pred, "obj": "o"}],
            })
            .to_string(),
        );
        refs.insert(uri, format!("{subj} {pred} {obj}"));
    }
    let corpus = dir.join("relations.jsonl");
    fs::write(&corpus, lines.join("\n") + "\n").unwrap();
    (corpus, refs)
}

fn accuracy_of(scored: &Path) -> Result<(f64, f64), String> {
    let text = fs::read_to_string(scored).map_err(|e| e.to_string())?;
    let pairs = vlprobe_core::scoring::parse_scored_pairs::<f64>(&text).map_err(|e| e.to_string())?;
    let wins = pairs.iter().filter(|p| p.pos_score > p.neg_score).count();
    Ok((wins as f64 / pairs.len() as f64, pairs.len() as f64))
}

fn criterion_5() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let (corpus, refs) = relation_fixture(dir);
    let refs_path = dir.join("refs.json");
    fs::write(&refs_path, serde_json::to_string(&refs).unwrap()).unwrap();
    let cfg = dir.join("run.json");
    let config = json!({
        "corpus": [corpus],
        "seed": 5,
        "lexicon": data("spatial_lexicon.json"),
        "prototypes": data("attribute_prototypes.json"),
        "embeddings": {"vector_file": data("vectors/test50.vec")},
        "scorer": {"oracle": {"references": refs_path}},
        "aspects": ["relation"],
    });
    fs::write(&cfg, config.to_string()).unwrap();

    let out = dir.join("clean");
    let summary = vlprobe(&["run", "--config", s(&cfg), "--out", s(&out)])?;
    check!(summary["pairs"] == 20, "expected 20 pairs, got {}", summary["pairs"]);
    check!(summary["relation"] == 1.0, "clean relation accuracy {}", summary["relation"]);
    let (clean, n) = accuracy_of(&out.join("scored.jsonl"))?;
    check!(clean == 1.0 && n == 20.0, "clean recount {clean} over {n}");

    // Five positives lose every reference token; their negatives keep two.
    let probes = fs::read_to_string(out.join("probes.jsonl")).unwrap();
    let corrupted: Vec<String> = probes
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let mut v: Value = serde_json::from_str(line).unwrap();
            if i % 4 == 0 {
                v["pos"] = json!("something else entirely");
            }
            v.to_string()
        })
        .collect();
    let bad_probes = dir.join("corrupted.jsonl");
    fs::write(&bad_probes, corrupted.join("\n") + "\n").unwrap();
    let bad_scored = dir.join("corrupted-scored.jsonl");
    vlprobe(&["score", "--config", s(&cfg), "--input", s(&bad_probes), "--output", s(&bad_scored)])?;
    let rep = dir.join("corrupted-report");
    vlprobe(&["report", s(&bad_scored), "--out", s(&rep)])?;
    let doc: Value = serde_json::from_str(&fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    let reported = &doc["models"][0]["relation_avg"];
    check!(*reported == 0.75, "corrupted relation accuracy {reported}");
    let (recount, _) = accuracy_of(&bad_scored)?;
    check!(recount == 0.75, "corrupted recount {recount}");
    Ok("20 pairs: clean 1.0, 5 corrupted 0.75".into())
}

// ---------------------------------------------------------------------------
// 6. Negative-generation audit
// ---------------------------------------------------------------------------

struct Vectors(HashMap<String, Vec<f64>>);

impl Vectors {
    fn load(path: &Path) -> Self {
        let text = fs::read_to_string(path).unwrap();
        Self(
            text.lines()
                .skip(1)
                .filter_map(|l| {
                    let mut it = l.split_whitespace();
                    let tok = it.next()?.to_lowercase();
                    Some((tok, it.map(|x| x.parse().unwrap()).collect()))
                })
                .collect(),
        )
    }

    fn phrase(&self, p: &str) -> Option<Vec<f64>> {
        let known: Vec<&Vec<f64>> = p.to_lowercase().split_whitespace().filter_map(|t| self.0.get(t)).collect();
        let first = known.first()?;
        let mut sum = vec![0.0; first.len()];
        for v in &known {
            for (s, x) in sum.iter_mut().zip(v.iter()) {
                *s += x;
            }
        }
        Some(sum)
    }

    fn cosine(&self, a: &str, b: &str) -> Option<f64> {
        let (a, b) = (self.phrase(a)?, self.phrase(b)?);
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        Some(dot / (na * nb))
    }

    /// Nearest class by best anchor similarity, earlier class on ties.
    fn class_of(&self, value: &str, anchors: &BTreeMap<String, Vec<String>>, min: f64) -> Option<AttributeClass> {
        let mut best: Option<(AttributeClass, f64)> = None;
        for class in AttributeClass::ALL {
            let sims = anchors[class.label()].iter().filter_map(|a| self.cosine(value, a));
            if let Some(sim) = sims.fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x)))) {
                if best.is_none_or(|(_, b)| sim > b) {
                    best = Some((class, sim));
                }
            }
        }
        best.filter(|&(_, sim)| sim >= min).map(|(c, _)| c)
    }
}

fn criterion_6() -> Outcome {
    let cfg = synthetic_config();
    let corpus = synthetic_corpus(&cfg);
    let set = pipeline::generate_probes(&cfg, &corpus).map_err(|e| e.to_string())?;
    let vectors = Vectors::load(&data("vectors/test50.vec"));
    let anchors: BTreeMap<String, Vec<String>> =
        serde_json::from_str(&fs::read_to_string(data("attribute_prototypes.json")).unwrap()).unwrap();
    let lexicon: BTreeSet<String> = serde_json::from_str::<Vec<String>>(&fs::read_to_string(data("spatial_lexicon.json")).unwrap())
        .unwrap()
        .into_iter()
        .collect();
    let kind_of = |p: &str| {
        let norm = p.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        if lexicon.contains(&norm) { RelationKind::Spatial } else { RelationKind::Action }
    };
    let names: BTreeSet<&str> = corpus.iter().flat_map(|s| s.objects.iter().map(|o| o.name.as_str())).collect();
    let values: BTreeSet<&str> = corpus
        .iter()
        .flat_map(|s| s.objects.iter().flat_map(|o| o.attributes.iter().map(|a| a.value.as_str())))
        .collect();
    let preds: BTreeSet<&str> = corpus.iter().flat_map(|s| s.relations.iter().map(|r| r.pred.as_str())).collect();

    let mut violations = Vec::new();
    for p in &set.pairs {
        let mut fail = |what: &str| violations.push(format!("{}: {what}", p.pair_id));
        match vectors.cosine(&p.replaced_original, &p.replacement) {
            Some(sim) if sim <= cfg.max_similarity && (sim - p.similarity).abs() < 1e-9 => {}
            other => fail(&format!("similarity {other:?} vs recorded {}", p.similarity)),
        }
        let pos = &p.positive_text;
        let single_span = pos.match_indices(p.replaced_original.as_str()).any(|(i, _)| {
            p.negative_text == format!("{}{}{}", &pos[..i], p.replacement, &pos[i + p.replaced_original.len()..])
        });
        if !single_span {
            fail("not a single-span substitution");
        }
        if p.replacement.eq_ignore_ascii_case(&p.replaced_original) {
            fail("replacement equals original");
        }
        match p.path.aspect {
            Aspect::Object => {
                if !names.contains(p.replacement.as_str()) {
                    fail("object replacement outside the object pool");
                }
            }
            Aspect::Attribute => {
                let want = p.path.attr_class;
                let got = vectors.class_of(&p.replacement, &anchors, cfg.min_assign_similarity);
                let orig = vectors.class_of(&p.replaced_original, &anchors, cfg.min_assign_similarity);
                if !values.contains(p.replacement.as_str()) || got != want || orig != want {
                    fail(&format!("attribute class {orig:?} -> {got:?}, path {want:?}"));
                }
            }
            Aspect::Relation => {
                let want = p.path.rel_kind;
                if !preds.contains(p.replacement.as_str())
                    || Some(kind_of(&p.replacement)) != want
                    || Some(kind_of(&p.replaced_original)) != want
                {
                    fail("predicate kind differs");
                }
            }
        }
    }
    check!(violations.is_empty(), "{} violations, first: {}", violations.len(), violations[0]);
    check!(!set.pairs.is_empty(), "no pairs generated");
    Ok(format!("{} pairs audited, 0 violations", set.pairs.len()))
}

// ---------------------------------------------------------------------------
// 7. Local variants
// ---------------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let random_box = |rng: &mut ChaCha8Rng| -> BBox<f64> {
        BBox::new(
            rng.gen_range(0.0..1000.0),
            rng.gen_range(0.0..1000.0),
            rng.gen_range(0.5..500.0),
            rng.gen_range(0.5..500.0),
        )
    };
    for _ in 0..1000 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let u = bbox_union(&a, &b);
        check!(bbox_union(&a, &a) == a, "union not idempotent on {a:?}");
        check!(bbox_union(&u, &b) == u && bbox_union(&u, &a) == u, "union absorbs its inputs");
        check!(u.contains(&a) && u.contains(&b), "{u:?} does not contain {a:?} and {b:?}");
        check!(
            u.x == a.x.min(b.x)
                && u.y == a.y.min(b.y)
                && (u.right() - a.right().max(b.right())).abs() < 1e-9
                && (u.bottom() - a.bottom().max(b.bottom())).abs() < 1e-9,
            "union of {a:?} and {b:?} is not tight"
        );
    }

    let mut cfg = synthetic_config();
    cfg.apply(&Overrides { local_variant: Some(LocalMode::Union), ..Default::default() });
    let corpus = synthetic_corpus(&cfg);
    let set = pipeline::generate_probes(&cfg, &corpus).map_err(|e| e.to_string())?;
    let by_id: BTreeMap<&str, &ProbePair<f64>> = set.pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect();
    let samples: BTreeMap<&str, &CanonicalSample<f64>> = corpus.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut variants = 0;
    for p in set.pairs.iter().filter(|p| p.path.aspect == Aspect::Relation) {
        let Some(base_id) = p.pair_id.strip_suffix("-local-union") else {
            check!(p.crop.is_none(), "{} is a base pair with a crop", p.pair_id);
            check!(by_id.contains_key(format!("{}-local-union", p.pair_id).as_str()), "{} has no variant", p.pair_id);
            continue;
        };
        variants += 1;
        let base = by_id.get(base_id).ok_or(format!("{} has no base pair", p.pair_id))?;
        check!(p.positive_text == base.positive_text && p.negative_text == base.negative_text, "{} changed text", p.pair_id);
        let crop = p.crop.ok_or(format!("{} has no crop", p.pair_id))?;
        let sample = samples[p.sample_id.as_str()];
        let index: usize = base_id.rsplit(':').next().unwrap().parse().map_err(|_| format!("pair id {base_id}"))?;
        let rel = &sample.relations[index];
        let (sb, ob) = (sample.object(&rel.subj).unwrap().bbox, sample.object(&rel.obj).unwrap().bbox);
        let (x, y) = (sb.x.min(ob.x), sb.y.min(ob.y));
        let expected = BBox::new(x, y, sb.right().max(ob.right()) - x, sb.bottom().max(ob.bottom()) - y);
        check!(crop == expected, "{}: crop {crop:?}, expected {expected:?}", p.pair_id);
    }
    check!(variants > 0, "no union variants generated");
    Ok(format!("1000 box pairs; {variants} union variants with unchanged text and subject∪object crop"))
}

// ---------------------------------------------------------------------------
// 8. Protocol robustness
// ---------------------------------------------------------------------------

/// Wraps the oracle and mangles its replies: every response arrives in
/// reverse batch order, every fifth is sent twice, and every seventh is
/// lost the first time it is requested. Rids in `black_hole` never come back.
struct Mangler {
    inner: OracleScorer,
    queue: Vec<ScoreResponse>,
    counter: usize,
    dropped_once: BTreeSet<String>,
    black_hole: BTreeSet<String>,
}

impl Mangler {
    fn new(inner: OracleScorer, black_hole: BTreeSet<String>) -> Self {
        Self { inner, queue: Vec::new(), counter: 0, dropped_once: BTreeSet::new(), black_hole }
    }
}

impl ScorerTransport<f64> for Mangler {
    fn endpoint(&self) -> String {
        "mangler".into()
    }

    fn hello(&mut self) -> Result<Capabilities, ScoringError> {
        ScorerTransport::<f64>::hello(&mut self.inner)
    }

    fn submit(&mut self, batch: &[ScoreRequest<f64>]) -> Result<(), ScoringError> {
        self.inner.submit(batch)?;
        let mut replies = Vec::new();
        while let Some(r) = ScorerTransport::<f64>::poll(&mut self.inner, Duration::ZERO)? {
            self.counter += 1;
            if self.black_hole.contains(&r.rid) {
                continue;
            }
            if self.counter.is_multiple_of(7) && self.dropped_once.insert(r.rid.clone()) {
                continue;
            }
            if self.counter.is_multiple_of(5) {
                replies.push(r.clone());
            }
            replies.push(r);
        }
        // served from the back, so each batch comes out reversed
        replies.reverse();
        let mut rest = std::mem::take(&mut self.queue);
        rest.reverse();
        replies.extend(rest);
        replies.reverse();
        self.queue = replies;
        Ok(())
    }

    fn poll(&mut self, _timeout: Duration) -> Result<Option<ScoreResponse>, ScoringError> {
        Ok(self.queue.pop())
    }
}

fn criterion_8() -> Outcome {
    let cfg = synthetic_config();
    let corpus = synthetic_corpus(&cfg);
    let pairs = pipeline::generate_probes(&cfg, &corpus).map_err(|e| e.to_string())?.pairs;
    let refs = default_references(&pairs);
    let batching = Batching { batch_size: 16, max_in_flight: 64, max_retries: 2, timeout_ms: 100 };

    let (good, _) = score_probe_set(&pairs, &mut OracleScorer::new(refs.clone()), &batching).map_err(|e| e.to_string())?;
    let mut mangler = Mangler::new(OracleScorer::new(refs.clone()), BTreeSet::new());
    let (mangled, stats) = score_probe_set(&pairs, &mut mangler, &batching).map_err(|e| e.to_string())?;
    check!(mangled == good, "mangled transport changed the scored output");
    check!(!mangler.dropped_once.is_empty() && stats.duplicates_ignored > 0, "the double did not misbehave: {stats:?}");

    let lost: BTreeSet<String> = [format!("{}/neg", pairs[3].pair_id), format!("{}/pos", pairs[40].pair_id)].into();
    let mut hole = Mangler::new(OracleScorer::new(refs), lost.clone());
    match score_probe_set(&pairs, &mut hole, &batching) {
        Err(ScoringError::Unscored { rids, .. }) => {
            let got: BTreeSet<String> = rids.into_iter().collect();
            check!(got == lost, "unscored rids {got:?}, expected {lost:?}");
        }
        other => return Err(format!("expected an unscored error, got {:?}", other.map(|_| ()))),
    }
    Ok(format!(
        "{} pairs identical after {} dropped and {} duplicated responses; lost rids named exactly",
        pairs.len(),
        mangler.dropped_once.len(),
        stats.duplicates_ignored
    ))
}

// ---------------------------------------------------------------------------
// 9. Report output
// ---------------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let o = Aspect::Object;
    let mut vilt = object_summary("ViLT", OBJECT_TABLE[0].1).buckets;
    vilt.push(bucket(BucketKey::total(o), 86.32));
    vilt.push(bucket(BucketKey::total(Aspect::Relation), 62.50));
    vilt.push(bucket(BucketKey::total(Aspect::Attribute), 76.96));
    let doc = ReportDocument::new(RunMetadata::default(), vec![ModelSummary::from_buckets("ViLT", vilt)], vec![], None);
    let tables = emit_csv_tables(&doc);
    let row = tables["object"].lines().find(|l| l.starts_with("ViLT,")).ok_or("no ViLT row")?.to_string();
    check!(row == "ViLT,86.32,88.58,85.29,82.18,88.61,86.65,86.59", "row was {row}");
    let svg = emit_radar_svg(&doc);
    let xml = roxmltree::Document::parse(&svg).map_err(|e| format!("radar.svg: {e}"))?;
    check!(xml.root_element().has_tag_name("svg"), "root is not svg");
    let polygons = xml.descendants().filter(|n| n.attribute("data-model") == Some("ViLT")).count();
    check!(polygons == 1, "{polygons} ViLT polygons");
    Ok(row)
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("bucketing matches integer oracle", criterion_1),
        ("bucket metrics match counting oracle", criterion_2),
        ("gap arithmetic reproduces published table", criterion_3),
        ("run is byte-identical across job counts", criterion_4),
        ("analytic end-to-end accuracy", criterion_5),
        ("negative-generation audit", criterion_6),
        ("local-variant geometry", criterion_7),
        ("protocol robustness", criterion_8),
        ("report golden row and SVG", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail}", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {e}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
