//! Command-line entry point: wire JSON configs to the runner, the mock
//! server, and report rendering.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use ttsdiag::dataset::{load_manifest, validate_dataset};
use ttsdiag::mock::{MockConfig, label_map_from_dataset, serve};
use ttsdiag::prompting::Stage1Variant;
use ttsdiag::runner::{ReportFormat, RunConfig, load_run, render_report, run_experiment};

#[derive(Parser)]
#[command(
    name = "ttsdiag",
    version,
    about = "Zero-shot medical image diagnosis with test-time scaling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute (or continue) the experiment described by a JSON config.
    Run(RunArgs),
    /// Run an n sweep for scaling curves (default n: 1,2,4,8,16).
    Sweep(SweepArgs),
    /// Render a finished run directory as a table or CSV curve data.
    Report(ReportArgs),
    /// Serve the deterministic mock endpoint.
    MockServe(MockServeArgs),
    /// Check a dataset directory and print per-class counts.
    Validate(ValidateArgs),
}

/// One JSON config per run; each flag overrides the matching config field
/// for quick ablations without editing files.
#[derive(Args)]
struct RunArgs {
    /// Path to a JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Override output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override dataset_path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Override random_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override prompt_file.
    #[arg(long)]
    prompt_file: Option<PathBuf>,
    /// Override sample_concurrency.
    #[arg(long)]
    sample_concurrency: Option<usize>,
    /// Force this stage-1 prompt variant on every method (prompt-bias
    /// ablation).
    #[arg(long, value_enum)]
    stage1_variant: Option<Stage1Variant>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated aggregation breadths to score.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    n_values: Vec<u32>,
}

#[derive(Args)]
struct ReportArgs {
    /// A completed run directory.
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: ReportFormat,
}

#[derive(Args)]
struct MockServeArgs {
    /// JSON file with MockConfig fields; all-default mock when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory whose images seed the label map.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Port to bind on 127.0.0.1; 0 picks a free one.
    #[arg(long, default_value_t = 0)]
    port: u16,
}

#[derive(Args)]
struct ValidateArgs {
    /// Dataset directory (task.json + samples.jsonl + images).
    #[arg(long)]
    dataset: PathBuf,
}

fn load_config(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let bytes = std::fs::read(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let mut config: RunConfig = serde_json::from_slice(&bytes)
        .with_context(|| format!("malformed config {}", args.config.display()))?;

    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    if let Some(dir) = &args.dataset {
        config.dataset_path = dir.clone();
    }
    if let Some(seed) = args.seed {
        config.random_seed = seed;
    }
    if let Some(path) = &args.prompt_file {
        config.prompt_file = Some(path.clone());
    }
    if let Some(k) = args.sample_concurrency {
        config.sample_concurrency = k;
    }
    if let Some(variant) = args.stage1_variant {
        for mc in &mut config.method_configs {
            mc.stage1_variant = variant;
        }
    }
    Ok(config)
}

fn cmd_run(config: RunConfig) -> anyhow::Result<()> {
    let result = run_experiment(&config)?;
    print!("{}", render_report(&result, ReportFormat::Table));
    println!("\nartifacts written to {}", config.output_dir.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    let result = load_run(&args.output_dir)?;
    print!("{}", render_report(&result, args.format));
    Ok(())
}

fn cmd_mock_serve(args: MockServeArgs) -> anyhow::Result<()> {
    let mut cfg: MockConfig = match &args.config {
        Some(path) => {
            let bytes = std::fs::read(path)
                .with_context(|| format!("reading mock config {}", path.display()))?;
            serde_json::from_slice(&bytes)
                .with_context(|| format!("malformed mock config {}", path.display()))?
        }
        None => serde_json::from_str("{}").expect("all MockConfig fields default"),
    };
    if let Some(dir) = &args.dataset {
        let dataset = load_manifest(dir)?;
        cfg.label_map.extend(label_map_from_dataset(&dataset)?);
    }
    let server = serve(cfg, args.port)?;
    println!("listening on {}", server.base_url());
    std::io::stdout().flush().ok();
    // Hold the server until the process is killed.
    loop {
        std::thread::park();
    }
}

fn cmd_validate(dir: &Path) -> anyhow::Result<()> {
    let dataset = load_manifest(dir)?;
    let report = validate_dataset(&dataset);
    println!(
        "dataset {:?}: {} samples",
        dataset.task.dataset_name,
        dataset.samples.len()
    );
    println!(
        "class 0 ({}): {}",
        dataset.task.class0_name, report.class_counts[0]
    );
    println!(
        "class 1 ({}): {}",
        dataset.task.class1_name, report.class_counts[1]
    );
    for note in &report.notes {
        println!("note: {note}");
    }
    if !report.is_clean() {
        for issue in &report.issues {
            eprintln!("issue: {issue}");
        }
        anyhow::bail!("dataset failed validation with {} issue(s)", report.issues.len());
    }
    println!("ok");
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => cmd_run(load_config(&args)?),
        Command::Sweep(args) => {
            let mut config = load_config(&args.run)?;
            config.n_values = args.n_values;
            cmd_run(config)
        }
        Command::Report(args) => cmd_report(args),
        Command::MockServe(args) => cmd_mock_serve(args),
        Command::Validate(args) => cmd_validate(&args.dataset),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap exits 2 by its own convention; this tool reserves 2 for
            // runtime failures, so usage errors map to 1 and --help/--version
            // to 0.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
