use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nbench::bench::{
    builtin_models, execute, plan, prepare_dataset, resolve_models, resolve_tasks, store, ModelSpec, PlanOptions,
    RunOptions, Store, Workspace,
};
use nbench::config::{apply_overrides, builtin_task_registry, TaskSpec, DEFAULT_SUITE};
use nbench::domain::{RunRecord, RunStatus};
use nbench::ranking::{emit_report, Variant};

#[derive(Parser)]
#[command(name = "nb", version, about = "Neural decoding benchmark")]
struct Cli {
    /// Benchmark root for data, caches and results (overrides NB_ROOT).
    #[arg(long, global = true)]
    root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the registered tasks.
    ListTasks,
    /// List the built-in models.
    ListModels,
    /// Plan and run experiments.
    Run(RunArgs),
    /// Write ranking tables and plot data.
    Report(ReportArgs),
    /// Rewrite the results store keeping the latest attempt per experiment.
    Compact,
    /// `nb <modality> <task> [--download | --prepare]`
    #[command(external_subcommand)]
    Modality(Vec<String>),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Comma-separated model ids (default: all built-in models).
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// Comma-separated task ids (default: the five-task suite).
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,
    /// Run seeds 0..N instead of each task's configured seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Task config override, `dotted.key=value` (repeatable).
    #[arg(long = "set")]
    overrides: Vec<String>,
    /// Re-run experiments that already have results.
    #[arg(long)]
    force: bool,
    #[arg(long, default_value = "core")]
    variant: Variant,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    workers: Option<usize>,
    /// External runner, `id=command args...` (repeatable).
    #[arg(long = "runner")]
    runners: Vec<String>,
    /// Seconds to wait for each runner message.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, default_value = "core")]
    variant: Variant,
    /// Output directory (default: <root>/reports/<variant>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Parser)]
#[command(name = "nb <modality>", no_binary_name = true)]
struct ModalityArgs {
    modality: String,
    task: String,
    /// Fetch the dataset (synthetic and local sources need no download).
    #[arg(long, conflicts_with = "prepare")]
    download: bool,
    /// Build the preprocessed cache and split manifest only.
    #[arg(long)]
    prepare: bool,
    #[command(flatten)]
    run: RunArgs,
}

fn workspace(cli_root: &Option<PathBuf>) -> Workspace {
    match cli_root {
        Some(r) => Workspace::new(r),
        None => Workspace::from_env(),
    }
}

fn status_word(r: &RunRecord) -> String {
    match &r.status {
        RunStatus::Ok => r
            .headline()
            .map(|s| format!("{}={:.4} norm={}", s.metric_name, s.value, s.normalized.map_or("-".into(), |v| format!("{v:.4}"))))
            .unwrap_or_default(),
        RunStatus::Failed { reason } => format!("FAILED: {reason}"),
        RunStatus::Declined { reason } => format!("declined: {reason}"),
    }
}

fn tasks_with_overrides(ids: &[String], overrides: &[String]) -> Result<Vec<TaskSpec>> {
    let ids: Vec<String> = if ids.is_empty() { DEFAULT_SUITE.iter().map(|s| s.to_string()).collect() } else { ids.to_vec() };
    resolve_tasks(&ids)?
        .iter()
        .map(|t| apply_overrides(t, overrides).with_context(|| format!("overriding {}", t.task_id)))
        .collect()
}

fn run(ws: &Workspace, args: &RunArgs) -> Result<bool> {
    let extra: Vec<ModelSpec> = args.runners.iter().map(|r| ModelSpec::parse_external(r)).collect::<Result<_, _>>()?;
    let ids: Vec<String> = if args.models.is_empty() {
        builtin_models().into_iter().chain(extra.iter().cloned()).map(|m| m.id).collect()
    } else {
        args.models.clone()
    };
    let models = resolve_models(&ids, &extra)?;
    let tasks = tasks_with_overrides(&args.tasks, &args.overrides)?;
    let mut store = Store::open(&ws.store_path())?;
    for w in &store.warnings {
        eprintln!("warning: {w}");
    }
    let opts = PlanOptions { variant: args.variant, seeds: args.seeds, force: args.force };
    let experiments = plan(&models, &tasks, &opts, store.records());
    println!("{} experiments planned", experiments.len());
    let mut run_opts = RunOptions { runner_timeout: Duration::from_secs(args.timeout), ..RunOptions::default() };
    if let Some(w) = args.workers {
        run_opts.workers = w;
    }
    let summary = execute(ws, &experiments, &run_opts, &mut store, |r| {
        println!("{} {} {} seed={} {}", r.task_id, r.dataset_id, r.model_id, r.seed, status_word(r));
    })?;
    println!("{} ok, {} failed, {} declined", summary.ok, summary.failed, summary.declined);
    Ok(summary.failed == 0)
}

fn report(ws: &Workspace, args: &ReportArgs) -> Result<()> {
    let (records, warnings) = store::read_records(&ws.store_path())?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let bundle = emit_report(&records, args.variant)?;
    let out = args.out.clone().unwrap_or_else(|| ws.root.join("reports").join(args.variant.as_str()));
    bundle.write_to(&out).with_context(|| format!("writing {}", out.display()))?;
    for issue in &bundle.issues {
        eprintln!("note: {issue}");
    }
    println!("rank  model  mean_rank  coverage");
    for (i, r) in bundle.ranking.iter().enumerate() {
        println!("{:>4}  {}  {:.3}  {}/{}", i + 1, r.model, r.mean_rank, r.coverage, r.n_tasks);
    }
    println!("wrote {} files to {}", bundle.files.len(), out.display());
    Ok(())
}

fn modality(ws: &Workspace, argv: &[String]) -> Result<bool> {
    let args = ModalityArgs::try_parse_from(argv).unwrap_or_else(|e| e.exit());
    if args.modality != "eeg" {
        bail!("modality {:?} is not available (supported: eeg)", args.modality);
    }
    let tasks = tasks_with_overrides(std::slice::from_ref(&args.task), &args.run.overrides)?;
    let task = &tasks[0];
    if args.download {
        for s in task.sources() {
            if s.is_synthetic() {
                println!("{}: synthetic, generated on demand", s.dataset_id());
            } else {
                let dir = s.root.clone().unwrap_or_else(|| ws.data_dir()).join(s.dataset_id());
                if !dir.is_dir() {
                    bail!("{} is not present at {}; automatic downloads are not supported", s.dataset_id(), dir.display());
                }
                println!("{}: present at {}", s.dataset_id(), dir.display());
            }
        }
        return Ok(true);
    }
    if args.prepare {
        for s in task.sources() {
            let d = prepare_dataset(ws, task, s)?;
            println!(
                "{}: {} examples, split {:016x} ({:?}), cache {}",
                d.dataset_id,
                d.examples.len(),
                d.manifest.split_hash,
                d.examples.split_counts(),
                d.cache_path.display()
            );
        }
        return Ok(true);
    }
    let mut run_args = args.run.clone();
    run_args.tasks = vec![args.task.clone()];
    run(ws, &run_args)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let ws = workspace(&cli.root);
    let outcome = match &cli.command {
        Command::ListTasks => {
            for t in builtin_task_registry() {
                println!(
                    "{:<28} {:<10} {:<26} {:<12} {} dataset(s)",
                    t.task_id,
                    t.category.as_str(),
                    t.objective.as_str(),
                    t.headline_metric().as_str(),
                    t.sources().count()
                );
            }
            Ok(true)
        }
        Command::ListModels => {
            for m in builtin_models() {
                println!("{:<14} {}", m.id, m.describe());
            }
            Ok(true)
        }
        Command::Run(args) => run(&ws, args),
        Command::Report(args) => report(&ws, args).map(|_| true),
        Command::Compact => Store::open(&ws.store_path()).and_then(|mut s| s.compact()).map(|n| {
            println!("dropped {n} superseded or unreadable lines");
            true
        }).map_err(Into::into),
        Command::Modality(argv) => modality(&ws, argv),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
