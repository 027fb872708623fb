use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use vlprobe_core::config::{Adapter, Overrides, RunConfig};
use vlprobe_core::negatives::LocalMode;
use vlprobe_core::pipeline::{self, ReportOptions};
use vlprobe_core::scoring::{overlap_score, PROTOCOL_VERSION};
use vlprobe_core::taxonomy::Aspect;

#[derive(Parser)]
#[command(
    name = "vlprobe",
    version,
    about = "Probe vision-language models with taxonomy-tagged hard negatives",
    after_help = "Flags override the config file, which overrides built-in defaults.\nVLPROBE_SCORER_URL replaces the URL of an http scorer."
)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Shared {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for tagging and generation.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a corpus into canonical JSONL.
    Ingest {
        /// Input files; defaults to the config's corpus.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        adapter: Option<Adapter>,
        #[arg(long)]
        allow_rejects: bool,
    },
    /// Generate the probe set from canonical JSONL.
    Generate {
        /// Canonical JSONL; defaults to <out>/canonical.jsonl.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Restrict to these aspects (repeatable).
        #[arg(long = "aspect")]
        aspects: Vec<Aspect>,
        #[arg(long)]
        local_variant: Option<LocalMode>,
    },
    /// Score a probe set through the configured scorer.
    Score {
        /// Probe JSONL; defaults to <out>/probes.jsonl.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Scored JSONL; defaults to <out>/scored.jsonl.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Keep pairs already in the output file and score only the rest.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        scorer_id: Option<String>,
    },
    /// Build report files from one or more scored files.
    Report {
        #[arg(required = true)]
        scored: Vec<PathBuf>,
        /// JSON object mapping group name to model ids.
        #[arg(long)]
        groups: Option<PathBuf>,
        /// Allow scored files from different configs.
        #[arg(long)]
        force: bool,
        /// Bootstrap resamples for aspect confidence intervals.
        #[arg(long)]
        bootstrap: Option<usize>,
    },
    /// ingest, generate, score and report in one go.
    Run {
        #[arg(long)]
        allow_rejects: bool,
        #[arg(long)]
        scorer_id: Option<String>,
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        bootstrap: Option<usize>,
    },
    /// Serve the token-overlap oracle over the JSONL protocol on stdio.
    #[command(hide = true)]
    OracleServe {
        /// JSON object mapping image uri to reference caption.
        #[arg(long)]
        references: PathBuf,
        #[arg(long)]
        no_crop: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(shared: &Shared, extra: Overrides) -> Result<RunConfig> {
    let path = shared.config.as_ref().context("--config is required for this command")?;
    let mut cfg = RunConfig::load(path)?;
    let overrides = Overrides {
        seed: shared.seed,
        jobs: shared.jobs,
        out: shared.out.clone(),
        ..extra
    }
    .with_env();
    cfg.apply(&overrides);
    Ok(cfg)
}

fn out_dir(shared: &Shared, cfg: Option<&RunConfig>) -> Result<PathBuf> {
    shared
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .context("no output directory: pass --out or set `out` in the config")
}

fn print(value: Value) {
    println!("{value}");
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let shared = cli.shared;
    match cli.command {
        Command::Ingest { inputs, adapter, allow_rejects } => {
            let cfg = match &shared.config {
                Some(_) => Some(load_config(&shared, Overrides::default())?),
                None => None,
            };
            let inputs = if inputs.is_empty() {
                cfg.as_ref().map(|c| c.corpus.clone()).context("no input: pass --input or --config")?
            } else {
                inputs
            };
            let adapter = adapter.or(cfg.as_ref().map(|c| c.adapter)).unwrap_or_default();
            let out = out_dir(&shared, cfg.as_ref())?;
            let outcome = pipeline::ingest(&inputs, adapter, &out)?;
            let r = &outcome.report;
            print(json!({
                "samples": r.samples,
                "accepted": r.accepted,
                "rejected": r.rejected.len(),
                "canonical": outcome.canonical,
                "validation": outcome.validation,
            }));
            for rej in &r.rejected {
                eprintln!("rejected sample {} ({}): {}", rej.index, rej.id, rej.reasons.join("; "));
            }
            if !r.rejected.is_empty() && !allow_rejects {
                eprintln!("error: {} sample(s) rejected (use --allow-rejects to accept)", r.rejected.len());
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Generate { input, aspects, local_variant } => {
            let extra = Overrides {
                aspects: (!aspects.is_empty()).then_some(aspects),
                local_variant,
                ..Default::default()
            };
            let cfg = load_config(&shared, extra)?;
            let out = out_dir(&shared, Some(&cfg))?;
            let input = input.unwrap_or_else(|| out.join("canonical.jsonl"));
            let probes = out.join("probes.jsonl");
            let set = pipeline::generate(&cfg, &input, &probes)?;
            print(json!({
                "pairs": set.pairs.len(),
                "probes": probes,
                "generation": set.report,
            }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Score { input, output, resume, scorer_id } => {
            let cfg = load_config(&shared, Overrides { scorer_id, ..Default::default() })?;
            let out = out_dir(&shared, Some(&cfg));
            let input = match input {
                Some(p) => p,
                None => out.as_ref().map_err(|e| anyhow::anyhow!("{e}"))?.join("probes.jsonl"),
            };
            let output = match output {
                Some(p) => p,
                None => out.map_err(|e| anyhow::anyhow!("{e}"))?.join("scored.jsonl"),
            };
            let outcome = pipeline::score(&cfg, &input, &output, resume)
                .with_context(|| format!("scoring {}", input.display()))?;
            print(json!({
                "scored": outcome.scored.len(),
                "resumed": outcome.resumed,
                "requests_sent": outcome.stats.requests_sent,
                "output": output,
            }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { scored, groups, force, bootstrap } => {
            let cfg = match &shared.config {
                Some(_) => Some(load_config(&shared, Overrides::default())?),
                None => None,
            };
            let out = out_dir(&shared, cfg.as_ref())?;
            let opts = ReportOptions {
                groups,
                force,
                bootstrap: bootstrap.or(cfg.as_ref().and_then(|c| c.bootstrap)),
            };
            let doc = pipeline::report(&scored, &out, &opts)?;
            for w in &doc.warnings {
                eprintln!("warning: {w}");
            }
            print(json!({"models": doc.models.len(), "out": out}));
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { allow_rejects, scorer_id, groups, bootstrap } => {
            let cfg = load_config(&shared, Overrides { scorer_id, ..Default::default() })?;
            let out = out_dir(&shared, Some(&cfg))?;
            let opts = ReportOptions { groups, force: false, bootstrap };
            let outcome = pipeline::run(&cfg, &out, allow_rejects, &opts)?;
            let m = &outcome.report.models[0];
            print(json!({
                "samples": outcome.validation.samples,
                "rejected": outcome.validation.rejected.len(),
                "pairs": outcome.pairs,
                "requests_sent": outcome.stats.requests_sent,
                "object": m.object_avg,
                "attribute": m.attribute_avg,
                "relation": m.relation_avg,
                "out": out,
            }));
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleServe { references, no_crop } => {
            oracle_serve(&references, !no_crop)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn oracle_serve(references: &Path, supports_crop: bool) -> Result<()> {
    let text = std::fs::read_to_string(references)
        .with_context(|| format!("reading {}", references.display()))?;
    let refs: BTreeMap<String, String> = serde_json::from_str(&text)?;
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let msg: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("oracle: malformed line: {e}");
                continue;
            }
        };
        let reply = match msg.get("op").and_then(Value::as_str) {
            Some("hello") => json!({"op": "hello", "version": PROTOCOL_VERSION, "supports_crop": supports_crop}),
            Some("score") => {
                let rid = msg.get("rid").and_then(Value::as_str).unwrap_or_default();
                let uri = msg.get("image_uri").and_then(Value::as_str).unwrap_or_default();
                let text = msg.get("text").and_then(Value::as_str).unwrap_or_default();
                match refs.get(uri) {
                    Some(r) => json!({"op": "score", "rid": rid, "score": overlap_score(text, r)}),
                    None => json!({"op": "error", "rid": rid, "reason": format!("unknown image {uri}")}),
                }
            }
            Some("bye") => break,
            _ => {
                eprintln!("oracle: unknown op in {line}");
                continue;
            }
        };
        writeln!(stdout, "{reply}")?;
        stdout.flush()?;
    }
    Ok(())
}
