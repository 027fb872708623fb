//! Report emitters. The JSON document is the source of truth; CSV, SVG and
//! Markdown are rendered from it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::{BucketKey, GroupSummary, ModelSummary};
use crate::negatives::GenerationReport;
use crate::scalar::Scalar;
use crate::taxonomy::{Aspect, AttributeClass, LocationBucket, RelationKind, SizeBucket};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub corpus: Vec<String>,
    pub scorer_id: String,
    /// The only field allowed to differ between identical runs.
    pub timestamp: String,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ReportDocument<T> {
    pub metadata: RunMetadata,
    pub models: Vec<ModelSummary<T>>,
    #[serde(default)]
    pub groups: Vec<GroupSummary<T>>,
    pub generation: Option<GenerationReport>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl<T: Scalar> ReportDocument<T> {
    /// Sorts models by name and records a warning for each model the radar
    /// chart must leave out.
    pub fn new(
        metadata: RunMetadata,
        mut models: Vec<ModelSummary<T>>,
        groups: Vec<GroupSummary<T>>,
        generation: Option<GenerationReport>,
    ) -> Self {
        models.sort_by(|a, b| a.model.cmp(&b.model));
        let warnings = models
            .iter()
            .filter(|m| radar_values(m).is_none())
            .map(|m| format!("radar chart omits model `{}`: missing aspect average", m.model))
            .collect();
        Self {
            metadata,
            models,
            groups,
            generation,
            warnings,
        }
    }
}

/// Pretty-printed JSON with sorted keys, shortest round-trip floats and a
/// trailing newline.
pub fn emit_json<T: Scalar>(doc: &ReportDocument<T>) -> String {
    let value = serde_json::to_value(doc).expect("report serializes");
    let mut out = serde_json::to_string_pretty(&value).expect("value serializes");
    out.push('\n');
    out
}

pub fn parse_json<T: Scalar>(text: &str) -> serde_json::Result<ReportDocument<T>> {
    serde_json::from_str(text)
}

/// Accuracy fraction as a percentage with two decimals; empty when absent.
pub fn percent_cell<T: Scalar>(acc: Option<T>) -> String {
    acc.map(|a| format!("{:.2}", a.to_f64_lossy() * 100.0))
        .unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

struct Column {
    header: &'static str,
    key: Option<BucketKey>,
}

fn col(header: &'static str, key: BucketKey) -> Column {
    Column { header, key: Some(key) }
}

fn image_level(aspect: Aspect) -> Vec<Column> {
    vec![
        col("Large", BucketKey::size(aspect, SizeBucket::Large)),
        col("Medium", BucketKey::size(aspect, SizeBucket::Medium)),
        col("Small", BucketKey::size(aspect, SizeBucket::Small)),
        col("Center", BucketKey::location(aspect, LocationBucket::Center)),
        col("Mid", BucketKey::location(aspect, LocationBucket::Mid)),
        col("Margin", BucketKey::location(aspect, LocationBucket::Margin)),
    ]
}

fn table_columns(table: &str) -> Vec<Column> {
    match table {
        "overall" => vec![
            col("Object", BucketKey::total(Aspect::Object)),
            col("Relation", BucketKey::total(Aspect::Relation)),
            col("Attribute", BucketKey::total(Aspect::Attribute)),
        ],
        "object" => {
            let mut c = vec![col("Average", BucketKey::total(Aspect::Object))];
            c.extend(image_level(Aspect::Object));
            c
        }
        "relation" => {
            let mut c = vec![
                col("Average", BucketKey::total(Aspect::Relation)),
                col("Action", BucketKey::rel_kind(RelationKind::Action)),
                col("Spatial", BucketKey::rel_kind(RelationKind::Spatial)),
            ];
            c.extend(image_level(Aspect::Relation));
            c
        }
        "attribute" => {
            let mut c = vec![col("Average", BucketKey::total(Aspect::Attribute))];
            for (header, class) in [
                ("Color", AttributeClass::Color),
                ("Material", AttributeClass::Material),
                ("Size", AttributeClass::Size),
                ("State", AttributeClass::State),
                ("Action", AttributeClass::Action),
            ] {
                c.push(col(header, BucketKey::attr_class(class)));
            }
            c.extend(image_level(Aspect::Attribute));
            c
        }
        other => unreachable!("unknown table {other}"),
    }
}

pub const TABLES: [&str; 4] = ["overall", "object", "relation", "attribute"];

fn table_rows<T: Scalar>(doc: &ReportDocument<T>, table: &str) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let columns = table_columns(table);
    let headers = std::iter::once("Model")
        .chain(columns.iter().map(|c| c.header))
        .collect();
    let rows = doc
        .models
        .iter()
        .map(|m| {
            std::iter::once(m.model.clone())
                .chain(
                    columns
                        .iter()
                        .map(|c| percent_cell(c.key.as_ref().and_then(|k| m.accuracy(k)))),
                )
                .collect()
        })
        .collect();
    (headers, rows)
}

fn render_csv(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = headers.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| csv_field(c)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

const GROUP_HEADERS: [&str; 8] = [
    "Group",
    "Members",
    "Center",
    "Margin",
    "Location Variance",
    "Large",
    "Small",
    "Size Variance",
];

fn group_rows<T: Scalar>(groups: &[GroupSummary<T>]) -> Vec<Vec<String>> {
    let pp = |v: Option<T>| v.map(|v| format!("{:.2}", v.to_f64_lossy())).unwrap_or_default();
    groups
        .iter()
        .map(|g| {
            let acc = |k: BucketKey| percent_cell(g.accuracy(&k));
            let gap = |label: &str| pp(g.gaps.get(label).map(|s| s.gap));
            vec![
                g.group.clone(),
                g.members.join(" "),
                acc(BucketKey::location(Aspect::Object, LocationBucket::Center)),
                acc(BucketKey::location(Aspect::Object, LocationBucket::Margin)),
                gap("center_vs_margin"),
                acc(BucketKey::size(Aspect::Object, SizeBucket::Large)),
                acc(BucketKey::size(Aspect::Object, SizeBucket::Small)),
                gap("large_vs_small"),
            ]
        })
        .collect()
}

/// overall, object, relation and attribute tables, plus groups when the
/// document has any.
pub fn emit_csv_tables<T: Scalar>(doc: &ReportDocument<T>) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for table in TABLES {
        let (headers, rows) = table_rows(doc, table);
        out.insert(table.to_string(), render_csv(&headers, &rows));
    }
    if !doc.groups.is_empty() {
        out.insert("groups".into(), render_csv(&GROUP_HEADERS, &group_rows(&doc.groups)));
    }
    out
}

// ---------------------------------------------------------------------------
// Radar chart
// ---------------------------------------------------------------------------

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const RADAR_AXES: [&str; 3] = ["Object", "Attribute", "Relation"];
const RADAR_CENTER: f64 = 200.0;
const RADAR_RADIUS: f64 = 150.0;

/// Object, Attribute, Relation averages in percent.
pub fn radar_values<T: Scalar>(m: &ModelSummary<T>) -> Option<[f64; 3]> {
    let p = |v: Option<T>| v.map(|v| v.to_f64_lossy() * 100.0);
    Some([p(m.object_avg)?, p(m.attribute_avg)?, p(m.relation_avg)?])
}

/// Vertex positions for values on a 0-100 scale. The first axis points up,
/// the others follow clockwise at 120 degrees.
pub fn radar_points(values: [f64; 3]) -> [(f64, f64); 3] {
    let mut pts = [(0.0, 0.0); 3];
    for (i, v) in values.iter().enumerate() {
        let angle = (-90.0 + 120.0 * i as f64).to_radians();
        let r = RADAR_RADIUS * v.clamp(0.0, 100.0) / 100.0;
        pts[i] = (RADAR_CENTER + r * angle.cos(), RADAR_CENTER + r * angle.sin());
    }
    pts
}

pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn points_attr(pts: &[(f64, f64)]) -> String {
    pts.iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn emit_radar_svg<T: Scalar>(doc: &ReportDocument<T>) -> String {
    let mut svg = String::new();
    let legend_rows = doc.models.len();
    let height = 420 + 20 * legend_rows;
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 400 {height}" width="400" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    for ring in 1..=5 {
        let v = ring as f64 * 20.0;
        let _ = writeln!(
            svg,
            r##"  <polygon class="grid" points="{}" fill="none" stroke="#cccccc"/>"##,
            points_attr(&radar_points([v, v, v]))
        );
    }
    let outer = radar_points([100.0; 3]);
    for (label, (x, y)) in RADAR_AXES.iter().zip(outer) {
        let _ = writeln!(
            svg,
            r##"  <line class="axis" x1="{RADAR_CENTER:.2}" y1="{RADAR_CENTER:.2}" x2="{x:.2}" y2="{y:.2}" stroke="#999999"/>"##
        );
        let (lx, ly) = (
            RADAR_CENTER + (x - RADAR_CENTER) * 1.12,
            RADAR_CENTER + (y - RADAR_CENTER) * 1.12 + 4.0,
        );
        let _ = writeln!(svg, r#"  <text x="{lx:.2}" y="{ly:.2}" text-anchor="middle">{label}</text>"#);
    }
    let mut names: Vec<&str> = doc.models.iter().map(|m| m.model.as_str()).collect();
    names.sort();
    let mut row = 0;
    for name in &names {
        let model = doc.models.iter().find(|m| m.model == *name).expect("model present");
        let Some(values) = radar_values(model) else {
            continue;
        };
        let color = PALETTE[row % PALETTE.len()];
        let escaped = xml_escape(name);
        let _ = writeln!(
            svg,
            r#"  <polygon class="model" data-model="{escaped}" points="{}" fill="{color}" fill-opacity="0.15" stroke="{color}" stroke-width="2"/>"#,
            points_attr(&radar_points(values))
        );
        let ly = 420 + 20 * row;
        let _ = writeln!(
            svg,
            r#"  <rect x="20" y="{}" width="12" height="12" fill="{color}"/><text x="40" y="{ly}">{escaped}</text>"#,
            ly - 10
        );
        row += 1;
    }
    svg.push_str("</svg>\n");
    svg
}

// ---------------------------------------------------------------------------
// Markdown
// ---------------------------------------------------------------------------

fn markdown_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = format!("| {} |\n", headers.join(" | "));
    out.push_str(&format!("|{}\n", "---|".repeat(headers.len())));
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| c.replace('|', "\\|")).collect();
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    out
}

pub fn emit_markdown<T: Scalar>(doc: &ReportDocument<T>) -> String {
    let mut md = String::from("# Probe report\n\n");
    let meta = &doc.metadata;
    let _ = writeln!(md, "- config hash: `{}`", meta.config_hash);
    let _ = writeln!(md, "- seed: {}", meta.seed);
    let _ = writeln!(md, "- scorer: {}", meta.scorer_id);
    if !meta.corpus.is_empty() {
        let _ = writeln!(md, "- corpus: {}", meta.corpus.join(", "));
    }
    if doc.models.is_empty() {
        return md;
    }
    for (table, title) in [
        ("overall", "Overall"),
        ("object", "Object"),
        ("relation", "Relation"),
        ("attribute", "Attribute"),
    ] {
        let (headers, rows) = table_rows(doc, table);
        let _ = write!(md, "\n## {title}\n\n{}", markdown_table(&headers, &rows));
    }

    md.push_str("\n## Gaps\n");
    for label in ["center_vs_margin", "large_vs_small"] {
        let mut entries: Vec<(&str, f64)> = doc
            .models
            .iter()
            .filter_map(|m| m.gaps.get(label).map(|g| (m.model.as_str(), g.gap.to_f64_lossy())))
            .collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let _ = writeln!(md, "\n### {label}\n");
        if entries.is_empty() {
            md.push_str("(none)\n");
        }
        for (model, gap) in entries {
            let _ = writeln!(md, "- {model}: {gap:.2}");
        }
    }
    if !doc.groups.is_empty() {
        let _ = write!(
            md,
            "\n## Groups\n\n{}",
            markdown_table(&GROUP_HEADERS, &group_rows(&doc.groups))
        );
    }
    let notes: Vec<&String> = doc.models.iter().flat_map(|m| &m.gaps.notes).collect();
    if !doc.warnings.is_empty() || !notes.is_empty() {
        md.push_str("\n## Warnings\n\n");
        for w in doc.warnings.iter().chain(notes) {
            let _ = writeln!(md, "- {w}");
        }
    }
    md
}

/// Writes report.json, tables/*.csv, radar.svg and summary.md under `dir`.
pub fn write_report_dir<T: Scalar>(doc: &ReportDocument<T>, dir: &Path) -> io::Result<Vec<PathBuf>> {
    let tables = dir.join("tables");
    fs::create_dir_all(&tables)?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, body: &str| -> io::Result<()> {
        fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    put(dir.join("report.json"), &emit_json(doc))?;
    for (name, body) in emit_csv_tables(doc) {
        put(tables.join(format!("{name}.csv")), &body)?;
    }
    put(dir.join("radar.svg"), &emit_radar_svg(doc))?;
    put(dir.join("summary.md"), &emit_markdown(doc))?;
    Ok(written)
}
