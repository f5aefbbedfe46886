//! deidkit: command-line interface to the de-identification corpus
//! toolkit.
//!
//! One subcommand per pipeline stage — mask, validate-templates, fill,
//! dedup, mix, tag, evaluate, diagnose, compare — plus a `pipeline`
//! meta-command chaining them for end-to-end runs. Every sampling
//! command requires an explicit seed and reproduces its outputs
//! byte-for-byte; every artifact carries provenance metadata.
//!
//! Exit codes: 0 success, 1 validation findings in the inputs,
//! 2 usage or I/O errors.

mod config;
mod output;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use deidkit_core::corpus::{
    note_to_json, parse_jsonl, parse_jsonl_with, Corpus, CorpusError, Note, OverlapPolicy,
};
use deidkit_core::diagnostics::{
    compare, diagnose, render_composition_table, render_label_table, render_structural_table,
    Diagnostics, DiagnosticsError, ShiftReport,
};
use deidkit_core::metrics::{
    aggregate, evaluate, flatten_metrics, parse_predictions, AggregateReport, EvalReport,
    MetricsError, Prediction,
};
use deidkit_core::mixtures::{
    plan_augment, plan_compute_matched, plan_fixed_n, MixtureError, MixturePlan, MixtureSpec,
    Regime,
};
use deidkit_core::rng::SplitMix64;
use deidkit_core::screening::{dedup as dedup_notes, DedupReport, DropReason, ScreeningError};
use deidkit_core::tagger::{tag_corpus, Gazetteer, TaggerError};
use deidkit_core::templating::{
    fill_template, mask_note, validate_template, EntityPool, Template, TemplateError,
};

use config::{load_pools, load_templates, templates_to_jsonl, RunConfig};
use output::{
    emit, flatten_to_csv, json_report, with_header, write_atomic, write_jsonl_with_meta, Meta,
};

#[derive(Parser)]
#[command(name = "deidkit", version, about = "De-identification corpus toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replace gold spans with numbered placeholders, one template per note
    Mask(MaskArgs),
    /// Check templates against the placeholder grammar, screening rules, and length bounds
    ValidateTemplates(ValidateTemplatesArgs),
    /// Instantiate templates from entity pools into a labeled corpus
    Fill(FillArgs),
    /// Drop exact, near, and seed duplicates from a corpus
    Dedup(DedupArgs),
    /// Plan a real/synthetic training mixture
    Mix(MixArgs),
    /// Tag a corpus with the gazetteer/regex reference tagger
    Tag(TagArgs),
    /// Score predictions against gold spans
    Evaluate(EvaluateArgs),
    /// Corpus composition, structure, and label-distribution reports
    Diagnose(DiagnoseArgs),
    /// Real-vs-synthetic distribution shift report
    Compare(CompareArgs),
    /// Run fill, dedup, mix, tag, evaluate, and diagnose end-to-end
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliRegime {
    Augment,
    FixedN,
    ComputeMatched,
}

impl From<CliRegime> for Regime {
    fn from(value: CliRegime) -> Regime {
        match value {
            CliRegime::Augment => Regime::Augment,
            CliRegime::FixedN => Regime::FixedN,
            CliRegime::ComputeMatched => Regime::ComputeMatched,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
}

impl Format {
    fn resolve(flag: Option<Format>, cfg: &RunConfig) -> Result<Format> {
        if let Some(format) = flag {
            return Ok(format);
        }
        match cfg.report.format.as_deref() {
            None | Some("json") => Ok(Format::Json),
            Some("csv") => Ok(Format::Csv),
            Some("table") => Ok(Format::Table),
            Some(other) => bail!("unknown report format {other:?} in config"),
        }
    }
}

#[derive(Args)]
struct MaskArgs {
    /// Corpus JSONL with gold spans
    #[arg(long)]
    input: PathBuf,
    /// Output templates JSONL (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep the longer of two overlapping gold spans instead of erroring
    #[arg(long)]
    allow_overlaps: bool,
}

#[derive(Args)]
struct ValidateTemplatesArgs {
    /// Templates JSONL to check
    #[arg(long)]
    templates: PathBuf,
    /// Entity pools TOML; when given, placeholder roles must have pools
    #[arg(long)]
    pools: Option<PathBuf>,
    /// Near-duplicate cosine threshold override
    #[arg(long)]
    threshold: Option<f64>,
    /// Character shingle width override
    #[arg(long)]
    shingle: Option<usize>,
    /// Findings report JSON (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run configuration TOML
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FillArgs {
    /// Templates JSONL
    #[arg(long)]
    templates: PathBuf,
    /// Entity pools TOML
    #[arg(long)]
    pools: PathBuf,
    /// Master seed for deterministic filling
    #[arg(long)]
    seed: Option<u64>,
    /// Instantiations per template
    #[arg(long, default_value_t = 1)]
    per_template: usize,
    /// Output corpus JSONL
    #[arg(long)]
    out: PathBuf,
    /// Run configuration TOML
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DedupArgs {
    /// Corpus JSONL to deduplicate
    #[arg(long)]
    input: PathBuf,
    /// Seed-note corpus JSONL to screen against
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Near-duplicate cosine threshold override
    #[arg(long)]
    threshold: Option<f64>,
    /// Character shingle width override
    #[arg(long)]
    shingle: Option<usize>,
    /// Retained corpus JSONL
    #[arg(long)]
    out: PathBuf,
    /// Drop report JSON
    #[arg(long)]
    report: Option<PathBuf>,
    /// Run configuration TOML
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MixArgs {
    /// Real training corpus JSONL
    #[arg(long)]
    real: PathBuf,
    /// Synthetic pool corpus JSONL
    #[arg(long)]
    synthetic: PathBuf,
    /// Mixing regime
    #[arg(long, value_enum)]
    regime: Option<CliRegime>,
    /// Target synthetic fraction (augment, compute-matched)
    #[arg(long)]
    f: Option<f64>,
    /// Real fraction at fixed total size (fixed-n)
    #[arg(long)]
    r: Option<f64>,
    /// Total training size (fixed-n)
    #[arg(long)]
    n: Option<usize>,
    /// No-PII share within the synthetic allotment
    #[arg(long)]
    nu: Option<f64>,
    /// Optimizer steps (compute-matched)
    #[arg(long)]
    steps: Option<usize>,
    /// Batch size (compute-matched)
    #[arg(long)]
    batch: Option<usize>,
    /// Sampling seed
    #[arg(long)]
    seed: Option<u64>,
    /// Plan JSON (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also materialize the planned corpus to this JSONL path
    #[arg(long)]
    emit_corpus: Option<PathBuf>,
    /// Run configuration TOML
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TagArgs {
    /// Corpus JSONL to tag
    #[arg(long)]
    input: PathBuf,
    /// Entity pools TOML the gazetteer is compiled from
    #[arg(long)]
    pools: PathBuf,
    /// Roles to leave out of the gazetteer (ablation)
    #[arg(long)]
    exclude_role: Vec<String>,
    /// Case-insensitive surface matching
    #[arg(long)]
    case_insensitive: bool,
    /// Predictions JSONL
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Gold corpus JSONL
    #[arg(long)]
    gold: PathBuf,
    /// Prediction JSONL files; several files aggregate across runs
    #[arg(long, num_args = 1.., required = true)]
    predictions: Vec<PathBuf>,
    /// Output format
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Report path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run configuration TOML
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Corpus JSONL to describe
    #[arg(long)]
    input: PathBuf,
    /// Output format
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Report path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run configuration TOML
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Real corpus JSONL
    #[arg(long)]
    real: PathBuf,
    /// Synthetic corpus JSONL
    #[arg(long)]
    synthetic: PathBuf,
    /// Output format
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Report path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run configuration TOML
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Run configuration TOML naming all inputs
    #[arg(long)]
    config: PathBuf,
    /// Output directory override
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Marker error: the inputs were readable but failed validation.
#[derive(Debug)]
struct ValidationFindings(String);

impl std::fmt::Display for ValidationFindings {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFindings {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(summary) => {
            eprintln!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Map an error chain to the documented exit codes: validation
/// findings are 1, usage and I/O problems are 2.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CorpusError>() {
            return if matches!(e, CorpusError::Io(_)) { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<MetricsError>() {
            return match e {
                MetricsError::Io(_) | MetricsError::EmptyInput => 2,
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<MixtureError>() {
            return if matches!(e, MixtureError::BadSpec(_)) { 2 } else { 1 };
        }
        if cause.downcast_ref::<TemplateError>().is_some()
            || cause.downcast_ref::<TaggerError>().is_some()
            || cause.downcast_ref::<DiagnosticsError>().is_some()
            || cause.downcast_ref::<ValidationFindings>().is_some()
        {
            return 1;
        }
        if cause.downcast_ref::<ScreeningError>().is_some() {
            return 2;
        }
    }
    2
}

fn run(command: Command) -> Result<String> {
    match command {
        Command::Mask(args) => run_mask(args),
        Command::ValidateTemplates(args) => run_validate_templates(args),
        Command::Fill(args) => run_fill(args),
        Command::Dedup(args) => run_dedup(args),
        Command::Mix(args) => run_mix(args),
        Command::Tag(args) => run_tag(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Diagnose(args) => run_diagnose(args),
        Command::Compare(args) => run_compare(args),
        Command::Pipeline(args) => run_pipeline(args),
    }
}

fn corpus_to_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for note in &corpus.notes {
        out.push_str(&note_to_json(note));
        out.push('\n');
    }
    out
}

fn predictions_to_jsonl(preds: &[Prediction]) -> String {
    let mut out = String::new();
    for pred in preds {
        out.push_str(&serde_json::to_string(pred).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

fn run_mask(args: MaskArgs) -> Result<String> {
    let policy = if args.allow_overlaps {
        OverlapPolicy::KeepLonger
    } else {
        OverlapPolicy::Reject
    };
    let (corpus, overlap_drops) = parse_jsonl_with(&args.input, policy)?;
    let templates: Vec<Template> = corpus.notes.iter().map(mask_note).collect();
    let repeat_bearing = templates.iter().filter(|t| t.repeat_bearing).count();
    let body = templates_to_jsonl(&templates);
    let meta = Meta::new(
        "mask",
        None,
        &[&args.input],
        serde_json::json!({ "allow_overlaps": args.allow_overlaps }),
    );
    match &args.out {
        Some(out) => write_jsonl_with_meta(out, &body, &meta)?,
        None => print!("{body}"),
    }
    let dropped = if overlap_drops.is_empty() {
        String::new()
    } else {
        format!(", {} overlapping spans dropped", overlap_drops.len())
    };
    Ok(format!(
        "masked {} notes -> {} templates ({} repeat-bearing{}){}",
        corpus.len(),
        templates.len(),
        repeat_bearing,
        dropped,
        args.out
            .map(|o| format!(" -> {}", o.display()))
            .unwrap_or_default()
    ))
}

fn run_validate_templates(args: ValidateTemplatesArgs) -> Result<String> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let screening_cfg = cfg.screening(args.threshold, args.shingle)?;
    let templates = load_templates(&args.templates)?;
    let pools = args.pools.as_deref().map(load_pools).transpose()?;

    let mut findings: Vec<serde_json::Value> = Vec::new();
    for (i, template) in templates.iter().enumerate() {
        if let Err(error) =
            validate_template(&template.text, &template.constraints, &screening_cfg)
        {
            findings.push(serde_json::json!({
                "line": i + 1,
                "seed_id": template.seed_id,
                "error": error.to_string(),
            }));
            continue;
        }
        if let Some(pools) = &pools {
            for binding in template.placeholders() {
                if pools.get(&binding.role).is_none() {
                    findings.push(serde_json::json!({
                        "line": i + 1,
                        "seed_id": template.seed_id,
                        "error": format!("role {} has no entity pool", binding.role),
                    }));
                }
            }
        }
    }

    let meta = Meta::new(
        "validate-templates",
        None,
        &[&args.templates],
        serde_json::json!({
            "near_dup_threshold": screening_cfg.near_dup_threshold,
            "shingle_size": screening_cfg.shingle_size,
        }),
    );
    let report = serde_json::json!({
        "checked": templates.len(),
        "findings": findings,
    });
    emit(args.out.as_deref(), &json_report(&meta, &report))?;
    if findings.is_empty() {
        Ok(format!("validated {} templates: all clean", templates.len()))
    } else {
        Err(ValidationFindings(format!(
            "{} finding(s) across {} templates",
            findings.len(),
            templates.len()
        ))
        .into())
    }
}

/// Fill every template `per_template` times with per-instantiation
/// seeds derived from the master seed. Deterministic: the same inputs
/// and seed give byte-identical output.
fn do_fill(
    templates: &[Template],
    pools: &EntityPool,
    master_seed: u64,
    per_template: usize,
    subset_name: &str,
) -> Result<Corpus> {
    pools.validate()?;
    let mut notes: Vec<Note> = Vec::with_capacity(templates.len() * per_template);
    let mut ids: HashSet<String> = HashSet::new();
    for (i, template) in templates.iter().enumerate() {
        for j in 0..per_template {
            let index = (i * per_template + j) as u64;
            let fill_seed = SplitMix64::stream(master_seed, index).next_u64();
            let (mut note, _) = fill_template(template, pools, fill_seed)
                .with_context(|| format!("template on line {}", i + 1))?;
            if !ids.insert(note.id.clone()) {
                // Same seed_id and colliding derived seed; disambiguate
                // deterministically by instantiation index.
                note.id = format!("{}-i{index}", note.id);
                ids.insert(note.id.clone());
            }
            notes.push(note);
        }
    }
    Ok(Corpus::new(subset_name, notes))
}

fn run_fill(args: FillArgs) -> Result<String> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let seed = args
        .seed
        .or(cfg.rng_seed)
        .context("fill requires a seed (flag --seed or config rng_seed)")?;
    if args.per_template == 0 {
        bail!("--per-template must be at least 1");
    }
    let templates = load_templates(&args.templates)?;
    let pools = load_pools(&args.pools)?;
    let subset = args
        .out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "filled".to_string());
    let corpus = do_fill(&templates, &pools, seed, args.per_template, &subset)?;
    let with_spans = corpus.notes.iter().filter(|n| !n.spans.is_empty()).count();
    let meta = Meta::new(
        "fill",
        Some(seed),
        &[&args.templates, &args.pools],
        serde_json::json!({ "per_template": args.per_template, "prng": "splitmix64" }),
    );
    write_jsonl_with_meta(&args.out, &corpus_to_jsonl(&corpus), &meta)?;
    Ok(format!(
        "filled {} templates -> {} notes ({} PII-bearing, {} no-PII) -> {}",
        templates.len(),
        corpus.len(),
        with_spans,
        corpus.len() - with_spans,
        args.out.display()
    ))
}

fn do_dedup(
    corpus: &Corpus,
    seeds: Option<&Corpus>,
    screening_cfg: &deidkit_core::screening::ScreeningConfig,
) -> (Corpus, DedupReport) {
    let pairs: Vec<(String, String)> = corpus
        .notes
        .iter()
        .map(|n| (n.id.clone(), n.sentence.clone()))
        .collect();
    let seed_pairs: Vec<(String, String)> = seeds
        .map(|c| {
            c.notes
                .iter()
                .map(|n| (n.id.clone(), n.sentence.clone()))
                .collect()
        })
        .unwrap_or_default();
    let report = dedup_notes(&pairs, &seed_pairs, screening_cfg);
    let retained: HashSet<&str> = report.retained.iter().map(String::as_str).collect();
    let kept = Corpus::new(
        corpus.subset_name.clone(),
        corpus
            .notes
            .iter()
            .filter(|n| retained.contains(n.id.as_str()))
            .cloned()
            .collect(),
    );
    (kept, report)
}

fn dedup_summary(report: &DedupReport) -> String {
    let count = |pred: fn(&DropReason) -> bool| {
        report.dropped.iter().filter(|d| pred(&d.reason)).count()
    };
    format!(
        "{} exact, {} near, {} seed",
        count(|r| matches!(r, DropReason::ExactDup { .. })),
        count(|r| matches!(r, DropReason::NearDup { .. })),
        count(|r| matches!(r, DropReason::SeedDup { .. })),
    )
}

fn run_dedup(args: DedupArgs) -> Result<String> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let screening_cfg = cfg.screening(args.threshold, args.shingle)?;
    let corpus = parse_jsonl(&args.input)?;
    let seeds = args.seeds.as_deref().map(parse_jsonl).transpose()?;
    let (kept, report) = do_dedup(&corpus, seeds.as_ref(), &screening_cfg);

    let mut inputs: Vec<&Path> = vec![&args.input];
    if let Some(seeds_path) = &args.seeds {
        inputs.push(seeds_path);
    }
    let meta = Meta::new(
        "dedup",
        None,
        &inputs,
        serde_json::json!({
            "near_dup_threshold": screening_cfg.near_dup_threshold,
            "shingle_size": screening_cfg.shingle_size,
        }),
    );
    write_jsonl_with_meta(&args.out, &corpus_to_jsonl(&kept), &meta)?;
    if let Some(report_path) = &args.report {
        write_atomic(report_path, &json_report(&meta, &report))?;
    }
    Ok(format!(
        "retained {} of {} notes ({}) -> {}",
        kept.len(),
        corpus.len(),
        dedup_summary(&report),
        args.out.display()
    ))
}

fn plan_for(
    real: &Corpus,
    pool: &Corpus,
    spec: &MixtureSpec,
    cfg: &RunConfig,
    steps: Option<usize>,
    batch: Option<usize>,
) -> Result<MixturePlan> {
    Ok(match spec.regime {
        Regime::Augment => plan_augment(real, pool, spec)?,
        Regime::FixedN => plan_fixed_n(real, pool, spec)?,
        Regime::ComputeMatched => {
            let budget = cfg.budget(steps, batch)?;
            plan_compute_matched(real, pool, spec, &budget)?
        }
    })
}

/// Materialize a plan's ids against the source corpora, in plan order.
fn materialize_plan(plan: &MixturePlan, real: &Corpus, pool: &Corpus) -> Result<Corpus> {
    if plan.spec.regime == Regime::ComputeMatched {
        bail!("compute-matched plans replay a per-step sequence; there is no fixed corpus to emit");
    }
    let mut by_id: HashMap<&str, &Note> = HashMap::new();
    for note in real.notes.iter().chain(&pool.notes) {
        by_id.insert(note.id.as_str(), note);
    }
    let notes: Vec<Note> = plan
        .ids
        .iter()
        .map(|planned| {
            by_id
                .get(planned.id.as_str())
                .map(|&n| n.clone())
                .with_context(|| format!("planned id {} not found in source corpora", planned.id))
        })
        .collect::<Result<_>>()?;
    Ok(Corpus::new("mixed", notes))
}

fn run_mix(args: MixArgs) -> Result<String> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let spec = cfg.mixture_spec(
        args.regime.map(Regime::from),
        args.f,
        args.r,
        args.n,
        args.nu,
        args.seed,
    )?;
    let real = parse_jsonl(&args.real)?;
    let pool = parse_jsonl(&args.synthetic)?;
    let plan = plan_for(&real, &pool, &spec, &cfg, args.steps, args.batch)?;

    let meta = Meta::new(
        "mix",
        Some(spec.rng_seed),
        &[&args.real, &args.synthetic],
        serde_json::to_value(&spec)?,
    );
    emit(args.out.as_deref(), &json_report(&meta, &plan))?;
    if let Some(corpus_path) = &args.emit_corpus {
        let mixed = materialize_plan(&plan, &real, &pool)?;
        write_jsonl_with_meta(corpus_path, &corpus_to_jsonl(&mixed), &meta)?;
    }
    let c = &plan.counts;
    Ok(format!(
        "{:?} plan: {} real + {} synthetic ({} PII, {} no-PII), realized f={:.3}{}",
        spec.regime,
        c.n_real,
        c.n_syn,
        c.n_syn - c.n_syn_nopii,
        c.n_syn_nopii,
        c.realized_synthetic_fraction,
        args.out
            .map(|o| format!(" -> {}", o.display()))
            .unwrap_or_default()
    ))
}

fn run_tag(args: TagArgs) -> Result<String> {
    let pools = load_pools(&args.pools)?;
    pools.validate()?;
    let gazetteer = Gazetteer::from_pools(&pools, &args.exclude_role, args.case_insensitive)?;
    let corpus = parse_jsonl(&args.input)?;
    let predictions = tag_corpus(&corpus, &gazetteer);
    let n_spans: usize = predictions.iter().map(|p| p.spans.len()).sum();
    let meta = Meta::new(
        "tag",
        None,
        &[&args.input, &args.pools],
        serde_json::json!({
            "gazetteer": gazetteer.info(),
            "exclude_roles": args.exclude_role,
        }),
    );
    write_jsonl_with_meta(&args.out, &predictions_to_jsonl(&predictions), &meta)?;
    Ok(format!(
        "tagged {} notes -> {} spans -> {}",
        corpus.len(),
        n_spans,
        args.out.display()
    ))
}

fn render_metric_lines(report: &EvalReport) -> String {
    let mut out = String::new();
    for (name, value) in flatten_metrics(report) {
        out.push_str(&format!("{name:<28} {value:.4}\n"));
    }
    out
}

fn render_aggregate_lines(agg: &AggregateReport) -> String {
    let mut out = format!("{:<28} {:>8} {:>8} {:>8} {:>3}\n", "metric", "mean", "sd", "ci", "n");
    for (name, s) in &agg.metrics {
        let ci = s
            .ci_half_width
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".to_string());
        out.push_str(&format!(
            "{name:<28} {:>8.4} {:>8.4} {ci:>8} {:>3}\n",
            s.mean, s.sd, s.n
        ));
    }
    out
}

fn run_evaluate(args: EvaluateArgs) -> Result<String> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let format = Format::resolve(args.format, &cfg)?;
    let gold = parse_jsonl(&args.gold)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for path in &args.predictions {
        let preds = parse_predictions(path)
            .with_context(|| format!("predictions {}", path.display()))?;
        reports.push(evaluate(&gold, &preds)?);
    }

    let mut inputs: Vec<&Path> = vec![&args.gold];
    inputs.extend(args.predictions.iter().map(PathBuf::as_path));
    let meta = Meta::new(
        "evaluate",
        None,
        &inputs,
        serde_json::json!({ "n_prediction_sets": reports.len() }),
    );

    let payload = if reports.len() == 1 {
        let report = &reports[0];
        match format {
            Format::Json => json_report(&meta, report),
            Format::Csv => with_header(&meta, &report.to_csv()),
            Format::Table => with_header(&meta, &render_metric_lines(report)),
        }
    } else {
        let agg = aggregate(&reports)?;
        match format {
            Format::Json => json_report(
                &meta,
                &serde_json::json!({ "runs": reports, "aggregate": agg }),
            ),
            Format::Csv => with_header(&meta, &agg.to_csv()),
            Format::Table => with_header(&meta, &render_aggregate_lines(&agg)),
        }
    };
    emit(args.out.as_deref(), &payload)?;

    let first = &reports[0];
    Ok(format!(
        "evaluated {} notes x {} prediction set(s): leakage {:.3}, overlap F1 {:.3}{}",
        first.n_docs,
        reports.len(),
        first.leakage,
        first.span_overlap.f1,
        args.out
            .map(|o| format!(" -> {}", o.display()))
            .unwrap_or_default()
    ))
}

fn render_diagnostics_tables(diag: &Diagnostics) -> String {
    let mut out = render_composition_table(std::slice::from_ref(&diag.stats));
    if let Some(structure) = &diag.structure {
        out.push('\n');
        out.push_str(&render_structural_table(std::slice::from_ref(structure)));
    }
    out.push('\n');
    out.push_str(&render_label_table(std::slice::from_ref(&diag.labels)));
    out
}

fn run_diagnose(args: DiagnoseArgs) -> Result<String> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let format = Format::resolve(args.format, &cfg)?;
    let corpus = parse_jsonl(&args.input)?;
    let diag = diagnose(&corpus)?;
    let meta = Meta::new("diagnose", None, &[&args.input], serde_json::json!({}));
    let payload = match format {
        Format::Json => json_report(&meta, &diag),
        Format::Csv => with_header(&meta, &flatten_to_csv(&diag)),
        Format::Table => with_header(&meta, &render_diagnostics_tables(&diag)),
    };
    emit(args.out.as_deref(), &payload)?;
    Ok(format!(
        "diagnosed {} notes: {:.1}% with spans, {} spans{}",
        diag.stats.n_notes,
        diag.stats.percent_with_span,
        diag.stats.total_spans,
        args.out
            .map(|o| format!(" -> {}", o.display()))
            .unwrap_or_default()
    ))
}

fn render_shift_lines(shift: &ShiftReport) -> String {
    let mut out = String::new();
    let mut line = |name: &str, s: &deidkit_core::diagnostics::Shift| {
        out.push_str(&format!("{name:<24} {:>8.3} ({:?})\n", s.value, s.direction));
    };
    line("words_median_ratio", &shift.words_median_ratio);
    line("chars_median_ratio", &shift.chars_median_ratio);
    line("pii_rate_delta", &shift.pii_rate_delta);
    for (label, delta) in &shift.label_percent_delta {
        line(&format!("{label}_percent_delta"), delta);
    }
    if let Some(rep) = &shift.repetition_delta {
        line("repetition_delta", rep);
    }
    if let Some(no_per) = &shift.no_per_delta {
        line("no_per_delta", no_per);
    }
    out
}

fn run_compare(args: CompareArgs) -> Result<String> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let format = Format::resolve(args.format, &cfg)?;
    let real = diagnose(&parse_jsonl(&args.real)?)?;
    let synthetic = diagnose(&parse_jsonl(&args.synthetic)?)?;
    let shift = compare(&real, &synthetic);
    let meta = Meta::new(
        "compare",
        None,
        &[&args.real, &args.synthetic],
        serde_json::json!({}),
    );
    let payload = match format {
        Format::Json => json_report(
            &meta,
            &serde_json::json!({ "real": real, "synthetic": synthetic, "shift": shift }),
        ),
        Format::Csv => with_header(&meta, &flatten_to_csv(&shift)),
        Format::Table => {
            let mut body = render_composition_table(&[real.stats.clone(), synthetic.stats.clone()]);
            body.push('\n');
            body.push_str(&render_shift_lines(&shift));
            with_header(&meta, &body)
        }
    };
    emit(args.out.as_deref(), &payload)?;
    Ok(format!(
        "compared {} vs {}: chars median ratio {:.2}, PER share delta {:+.1}{}",
        real.stats.subset,
        synthetic.stats.subset,
        shift.chars_median_ratio.value,
        shift.label_percent_delta[&deidkit_core::corpus::Label::PER].value,
        args.out
            .map(|o| format!(" -> {}", o.display()))
            .unwrap_or_default()
    ))
}

fn run_pipeline(args: PipelineArgs) -> Result<String> {
    let cfg = RunConfig::load(Some(&args.config))?;
    let out_dir = args
        .out_dir
        .or(cfg.paths.out_dir.clone())
        .context("pipeline needs an output directory (--out-dir or [paths].out_dir)")?;
    let seed = cfg
        .rng_seed
        .context("pipeline requires rng_seed in the config")?;
    let real_path = cfg
        .paths
        .real
        .clone()
        .context("pipeline requires [paths].real")?;
    let templates_path = cfg
        .paths
        .templates
        .clone()
        .context("pipeline requires [paths].templates")?;
    let pools_path = cfg
        .paths
        .pools
        .clone()
        .context("pipeline requires [paths].pools")?;
    let seeds_path = cfg.paths.seeds.clone().unwrap_or_else(|| real_path.clone());

    let screening_cfg = cfg.screening(None, None)?;
    let meta_for = |command: &str, inputs: &[&Path]| {
        Meta::new(command, Some(seed), inputs, cfg.effective_json())
    };

    // Stage 1: fill templates into a raw synthetic corpus.
    let templates = load_templates(&templates_path)?;
    let pools = load_pools(&pools_path)?;
    let filled = do_fill(&templates, &pools, seed, 1, "filled")?;
    let filled_path = out_dir.join("filled.jsonl");
    write_jsonl_with_meta(
        &filled_path,
        &corpus_to_jsonl(&filled),
        &meta_for("pipeline.fill", &[&templates_path, &pools_path]),
    )?;
    eprintln!("[1/6] filled {} templates -> {}", templates.len(), filled_path.display());

    // Stage 2: deduplicate against itself and the seed notes.
    let real = parse_jsonl(&real_path)?;
    let seeds = if seeds_path == real_path {
        real.clone()
    } else {
        parse_jsonl(&seeds_path)?
    };
    let (pool_corpus, dedup_report) = do_dedup(&filled, Some(&seeds), &screening_cfg);
    let pool_path = out_dir.join("pool.jsonl");
    write_jsonl_with_meta(
        &pool_path,
        &corpus_to_jsonl(&pool_corpus),
        &meta_for("pipeline.dedup", &[&filled_path, &seeds_path]),
    )?;
    write_atomic(
        &out_dir.join("dedup_report.json"),
        &json_report(
            &meta_for("pipeline.dedup", &[&filled_path, &seeds_path]),
            &dedup_report,
        ),
    )?;
    eprintln!(
        "[2/6] retained {} of {} notes ({})",
        pool_corpus.len(),
        filled.len(),
        dedup_summary(&dedup_report)
    );

    // Stage 3: plan the training mixture and materialize it.
    let spec = cfg.mixture_spec(None, None, None, None, None, Some(seed))?;
    let plan = plan_for(&real, &pool_corpus, &spec, &cfg, None, None)?;
    let plan_path = out_dir.join("plan.json");
    write_atomic(
        &plan_path,
        &json_report(&meta_for("pipeline.mix", &[&real_path, &pool_path]), &plan),
    )?;
    let eval_corpus = if spec.regime == Regime::ComputeMatched {
        pool_corpus.clone()
    } else {
        let mixed = materialize_plan(&plan, &real, &pool_corpus)?;
        let mixed_path = out_dir.join("mixed.jsonl");
        write_jsonl_with_meta(
            &mixed_path,
            &corpus_to_jsonl(&mixed),
            &meta_for("pipeline.mix", &[&real_path, &pool_path]),
        )?;
        mixed
    };
    eprintln!(
        "[3/6] {:?} plan: {} real + {} synthetic, realized f={:.3}",
        spec.regime,
        plan.counts.n_real,
        plan.counts.n_syn,
        plan.counts.realized_synthetic_fraction
    );

    // Stage 4: tag the mixed corpus with the pool gazetteer.
    let gazetteer = Gazetteer::from_pools(&pools, &[], false)?;
    let predictions = tag_corpus(&eval_corpus, &gazetteer);
    let preds_path = out_dir.join("predictions.jsonl");
    write_jsonl_with_meta(
        &preds_path,
        &predictions_to_jsonl(&predictions),
        &meta_for("pipeline.tag", &[&pools_path]),
    )?;
    eprintln!(
        "[4/6] tagged {} notes -> {} spans",
        eval_corpus.len(),
        predictions.iter().map(|p| p.spans.len()).sum::<usize>()
    );

    // Stage 5: score the tagger against the gold spans.
    let report = evaluate(&eval_corpus, &predictions)?;
    write_atomic(
        &out_dir.join("eval_report.json"),
        &json_report(&meta_for("pipeline.evaluate", &[&preds_path]), &report),
    )?;
    eprintln!(
        "[5/6] leakage {:.3}, overlap F1 {:.3}",
        report.leakage, report.span_overlap.f1
    );

    // Stage 6: diagnostics for both sides plus the shift report.
    let diag_real = diagnose(&real)?;
    let diag_pool = diagnose(&pool_corpus)?;
    let shift = compare(&diag_real, &diag_pool);
    write_atomic(
        &out_dir.join("diagnostics_real.json"),
        &json_report(&meta_for("pipeline.diagnose", &[&real_path]), &diag_real),
    )?;
    write_atomic(
        &out_dir.join("diagnostics_synthetic.json"),
        &json_report(&meta_for("pipeline.diagnose", &[&pool_path]), &diag_pool),
    )?;
    write_atomic(
        &out_dir.join("shift.json"),
        &json_report(&meta_for("pipeline.compare", &[&real_path, &pool_path]), &shift),
    )?;
    eprintln!("[6/6] diagnostics and shift report written");

    Ok(format!(
        "pipeline complete: leakage {:.3}, overlap F1 {:.3}, artifacts in {}",
        report.leakage,
        report.span_overlap.f1,
        out_dir.display()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_the_documented_flags() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_follow_error_class() {
        let io: anyhow::Error =
            CorpusError::Io(std::io::Error::new(std::io::ErrorKind::NotFound, "gone")).into();
        assert_eq!(exit_code_for(&io), 2);

        let malformed: anyhow::Error = CorpusError::MalformedLine {
            line: 3,
            message: "bad".into(),
        }
        .into();
        assert_eq!(exit_code_for(&malformed), 1);

        let findings: anyhow::Error = ValidationFindings("2 findings".into()).into();
        assert_eq!(exit_code_for(&findings), 1);

        let plain = anyhow::anyhow!("missing flag");
        assert_eq!(exit_code_for(&plain), 2);

        // The class survives context wrapping.
        let wrapped = malformed.context("while reading corpus");
        assert_eq!(exit_code_for(&wrapped), 1);
    }
}
