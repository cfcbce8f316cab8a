//! `care-rag`: index corpora, run the conflict-aware pipeline, repair QA
//! datasets, score traces, and sweep parameters.
//!
//! Exit codes: 0 success, 2 usage/config errors, 3 completed with partial
//! failures.

use anyhow::{anyhow, bail, Context, Result};
use care_rag_core::backend::DiskCache;
use care_rag_core::config::{build_env, Manifest, RunConfig};
use care_rag_core::evaluation::sweep::{
    run_sweep, write_sweep_csv, AblationVariant, SweepSpec, SweepValues,
};
use care_rag_core::evaluation::{evaluate_run, EvalResult};
use care_rag_core::pipeline::runner::run_batch;
use care_rag_core::pipeline::trace::{read_traces_jsonl, write_traces_jsonl};
use care_rag_core::qa_repair::{
    audit_path_for, read_dataset_jsonl, repair_dataset, RepairContext, RepairOptions,
};
use care_rag_core::config::RetrieverKind;
use care_rag_core::retrieval::{read_corpus_jsonl, Bm25Index};
use care_rag_core::util::{sha256_file, today_utc_iso};
use clap::{Parser, Subcommand};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "care-rag", version, about = "Conflict-aware retrieval-augmented generation engine")]
struct Cli {
    #[command(subcommand)]
    command: Commands,

    /// Override the configured RNG seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured concurrency limit
    #[arg(long, global = true)]
    concurrency: Option<usize>,

    /// Force strict output parsing
    #[arg(long, global = true, conflicts_with = "lenient")]
    strict: bool,

    /// Force lenient output parsing
    #[arg(long, global = true)]
    lenient: bool,

    /// Force the completion cache on
    #[arg(long = "cache", global = true, conflicts_with = "no_cache")]
    cache_on: bool,

    /// Force the completion cache off
    #[arg(long = "no-cache", global = true)]
    no_cache: bool,
}

#[derive(Subcommand)]
enum Commands {
    /// Build and persist a BM25 index from a JSONL corpus
    Index {
        /// Corpus file: one {"doc_id", "title"?, "text"} object per line
        #[arg(long)]
        corpus: PathBuf,
        /// Directory to write the index into
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing index
        #[arg(long)]
        force: bool,
    },
    /// Run the pipeline over a dataset, writing traces.jsonl and a manifest
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dataset: one {"id", "question", "answers", "repaired_answers"?} per line
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score traces against a dataset (EM/F1)
    Eval {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Score against repaired answer sets where present
        #[arg(long)]
        use_repaired: bool,
        /// Write the summary JSON here (per-instance rows go to <out>.rows.jsonl)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Flag and repair flawed gold answers in a dataset
    Repair {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// ISO date the repairs are anchored to (default: today, UTC)
        #[arg(long)]
        reference_date: Option<String>,
        /// Repair only a seeded random sample of this many instances
        #[arg(long)]
        sample_limit: Option<usize>,
    },
    /// Run one evaluation per parameter value and emit a CSV table
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Parameter to vary: k, n, or ablation
        #[arg(long)]
        param: String,
        /// Comma-separated values (defaults to all four ablation variants)
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        use_repaired: bool,
    },
    /// Inspect or clear the completion cache
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    /// Entry count and total size
    Stats {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Remove every cached completion
    Gc {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn apply_overrides(config: &mut RunConfig, cli: &Cli) {
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(concurrency) = cli.concurrency {
        config.concurrency = concurrency;
    }
    if cli.strict {
        config.strict_parsing = true;
    }
    if cli.lenient {
        config.strict_parsing = false;
    }
    if cli.cache_on {
        config.cache.enabled = true;
    }
    if cli.no_cache {
        config.cache.enabled = false;
    }
}

fn load_config(path: &Path, cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::from_file(path)?;
    apply_overrides(&mut config, cli);
    Ok(config)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

// The persisted index is a deterministic function of the corpus, so its
// digest stands in for the corpus digest in manifests.
fn attach_corpus_digest(manifest: &mut Manifest, config: &RunConfig) {
    let Some(settings) = &config.retriever else { return };
    if settings.kind == RetrieverKind::Bm25 {
        if let Some(dir) = &settings.index_dir {
            manifest.corpus_sha256 = sha256_file(&Bm25Index::index_file(dir)).ok();
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Commands::Index { corpus, out, force } => cmd_index(corpus, out, *force),
        Commands::Run { config, dataset, out } => cmd_run(config, dataset, out, &cli),
        Commands::Eval { traces, dataset, use_repaired, out } => {
            cmd_eval(traces, dataset, *use_repaired, out.as_deref())
        }
        Commands::Repair { input, output, config, reference_date, sample_limit } => cmd_repair(
            input,
            output,
            config,
            reference_date.as_deref(),
            *sample_limit,
            &cli,
        ),
        Commands::Sweep { config, dataset, param, values, out, use_repaired } => {
            cmd_sweep(config, dataset, param, values.as_deref(), out, *use_repaired, &cli)
        }
        Commands::Cache { action } => cmd_cache(action),
    }
}

fn cmd_index(corpus_path: &Path, out_dir: &Path, force: bool) -> Result<ExitCode> {
    if !corpus_path.is_file() {
        bail!("corpus not found: {}", corpus_path.display());
    }
    let index_file = Bm25Index::index_file(out_dir);
    if index_file.exists() && !force {
        bail!(
            "index already exists at {} (use --force to overwrite)",
            index_file.display()
        );
    }
    let docs = read_corpus_jsonl(corpus_path)?;
    let index = Bm25Index::build(docs)?;
    index.save(out_dir)?;
    print_json(index.stats())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(config_path: &Path, dataset_path: &Path, out_dir: &Path, cli: &Cli) -> Result<ExitCode> {
    let config = load_config(config_path, cli)?.validated()?;
    let dataset = read_dataset_jsonl(dataset_path)
        .with_context(|| format!("reading dataset {}", dataset_path.display()))?;
    let env = build_env(&config)?;
    let mut manifest = Manifest::new("run", &config).with_dataset(dataset_path)?;
    attach_corpus_digest(&mut manifest, &config);

    let outcome = run_batch(&dataset, &config, &env);
    std::fs::create_dir_all(out_dir)?;
    let traces_path = out_dir.join("traces.jsonl");
    write_traces_jsonl(&traces_path, &outcome.traces)?;
    manifest.write(out_dir)?;

    let summary = serde_json::json!({
        "instances": outcome.traces.len(),
        "failed": outcome.failed,
        "traces": traces_path.display().to_string(),
    });
    print_json(&summary)?;
    if outcome.failed > 0 {
        eprintln!(
            "{} of {} instances failed; see error fields in {}",
            outcome.failed,
            outcome.traces.len(),
            traces_path.display()
        );
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(
    traces_path: &Path,
    dataset_path: &Path,
    use_repaired: bool,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let traces = read_traces_jsonl(traces_path)
        .with_context(|| format!("reading traces {}", traces_path.display()))?;
    let dataset = read_dataset_jsonl(dataset_path)?;
    let dataset_id = file_stem(dataset_path);
    let config_id = file_stem(traces_path);
    let result = evaluate_run(&traces, &dataset, use_repaired, &dataset_id, &config_id)?;
    print_json(&result)?;
    if let Some(out) = out {
        write_eval(out, &result)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn write_eval(out: &Path, result: &EvalResult) -> Result<()> {
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out, serde_json::to_vec_pretty(result)?)?;
    let rows_path = PathBuf::from(format!("{}.rows.jsonl", out.display()));
    let mut rows = std::io::BufWriter::new(std::fs::File::create(rows_path)?);
    for row in &result.rows {
        serde_json::to_writer(&mut rows, row)?;
        rows.write_all(b"\n")?;
    }
    rows.flush()?;
    Ok(())
}

fn cmd_repair(
    input: &Path,
    output: &Path,
    config_path: &Path,
    reference_date: Option<&str>,
    sample_limit: Option<usize>,
    cli: &Cli,
) -> Result<ExitCode> {
    let config = load_config(config_path, cli)?.validated_for_repair()?;
    let env = build_env(&config)?;
    let manifest = Manifest::new("repair", &config).with_dataset(input)?;
    let reference_date = reference_date.map(str::to_string).unwrap_or_else(today_utc_iso);
    let plan = config.sampling_plan();
    let cx = RepairContext {
        backend: &env.generator,
        model_id: &config.backend.model_id,
        templates: &env.repair_templates,
        sampling: &plan,
        reference_date: &reference_date,
        strict: config.strict_parsing,
    };
    let options = RepairOptions {
        sample_limit,
        seed: config.seed,
        concurrency: config.concurrency,
    };
    let report = repair_dataset(input, output, &cx, &options)?;
    let manifest_dir = match output.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir,
        _ => Path::new("."),
    };
    manifest.write(manifest_dir)?;
    print_json(&report)?;
    eprintln!("audit log: {}", audit_path_for(output).display());
    if report.errors > 0 {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_sweep_values(param: &str, values: Option<&str>) -> Result<SweepValues> {
    let parse_usizes = |raw: &str| -> Result<Vec<usize>> {
        raw.split(',')
            .map(|v| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| anyhow!("invalid value {v:?} for sweep parameter"))
            })
            .collect()
    };
    match param {
        "k" => {
            let raw = values.ok_or_else(|| anyhow!("--values is required for a k sweep"))?;
            Ok(SweepValues::K(parse_usizes(raw)?))
        }
        "n" => {
            let raw = values.ok_or_else(|| anyhow!("--values is required for an n sweep"))?;
            Ok(SweepValues::N(parse_usizes(raw)?))
        }
        "ablation" => {
            let variants = match values {
                None => AblationVariant::all().to_vec(),
                Some(raw) => raw
                    .split(',')
                    .map(|v| {
                        AblationVariant::parse(v.trim())
                            .ok_or_else(|| anyhow!("unknown ablation variant {v:?}"))
                    })
                    .collect::<Result<Vec<_>>>()?,
            };
            Ok(SweepValues::Ablation(variants))
        }
        other => bail!("unknown sweep parameter {other:?} (expected k, n, or ablation)"),
    }
}

fn cmd_sweep(
    config_path: &Path,
    dataset_path: &Path,
    param: &str,
    values: Option<&str>,
    out_dir: &Path,
    use_repaired: bool,
    cli: &Cli,
) -> Result<ExitCode> {
    let config = load_config(config_path, cli)?.validated()?;
    let sweep_values = parse_sweep_values(param, values)?;
    let dataset = read_dataset_jsonl(dataset_path)?;
    let env = build_env(&config)?;
    let mut manifest = Manifest::new("sweep", &config).with_dataset(dataset_path)?;
    attach_corpus_digest(&mut manifest, &config);

    let spec = SweepSpec {
        values: sweep_values,
        base: config,
    };
    let parameter = spec.values.parameter_name();
    let points = run_sweep(&spec, &dataset, &env, &file_stem(dataset_path), use_repaired)?;

    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("sweep.csv");
    write_sweep_csv(&csv_path, parameter, &points)?;
    let mut any_failed = false;
    for point in &points {
        let value_dir = out_dir.join("values").join(format!("{parameter}_{}", point.value));
        write_traces_jsonl(&value_dir.join("traces.jsonl"), &point.traces)?;
        std::fs::write(
            value_dir.join("eval.json"),
            serde_json::to_vec_pretty(&point.result)?,
        )?;
        any_failed |= point.result.failed > 0;
        println!(
            "{parameter}={} em={} f1={} n={} failed={}",
            point.value, point.result.em, point.result.f1, point.result.n, point.result.failed
        );
    }
    manifest.write(out_dir)?;
    eprintln!("csv: {}", csv_path.display());
    if any_failed {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_cache(action: &CacheAction) -> Result<ExitCode> {
    match action {
        CacheAction::Stats { dir } => {
            let stats = DiskCache::new(dir).stats();
            print_json(&stats)?;
        }
        CacheAction::Gc { dir } => {
            let removed = DiskCache::new(dir).clear()?;
            print_json(&serde_json::json!({ "removed": removed }))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
