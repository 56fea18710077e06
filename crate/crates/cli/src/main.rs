//! `sm2` — energy-aware hyperparameter optimization runner.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 runtime
//! abort, 4 I/O failure while reading or writing artifacts.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sm2_core::config::{EffectiveConfig, RunConfigFile};
use sm2_core::ledger::{RunLedger, TimestampedEvent};
use sm2_core::report;
use sm2_core::scheduler::{self, RunError};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(
    name = "sm2",
    about = "Energy-aware successive-halving hyperparameter optimization",
    long_about = "Searches over batch-size configurations with cyclical learning-rate \
exploration, scoring each configuration on held-out performance, energy per epoch and \
the selected stable learning rate. Every epoch and decision lands in an append-only \
JSON-lines ledger.\n\nExit codes: 0 success, 2 configuration error, 3 runtime abort, 4 I/O error.",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a full optimization run and write the ledger and reports.
    Run(RunArgs),
    /// Parse and validate a config file, printing the effective settings.
    Validate(ValidateArgs),
    /// Regenerate trace files and a summary from an existing ledger.
    Report(ReportArgs),
    /// Compare the energy totals of an alpha=1 run, an engine run and a
    /// vanilla baseline over the same experiment.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config file's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the ledger and reports; overrides run.out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Power-model override file: a TOML document with the same keys as the
    /// [energy] section.
    #[arg(long)]
    power_model: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Ledger file (JSON lines) produced by `sm2 run`.
    #[arg(long)]
    ledger: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Ledger of the performance-only (alpha = 1) run.
    #[arg(long)]
    alpha1: PathBuf,
    /// Ledger of the energy-aware engine run.
    #[arg(long)]
    sm2: PathBuf,
    /// Ledger of the vanilla baseline run.
    #[arg(long)]
    vanilla: PathBuf,
    /// Optional directory for the comparison CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Report(args) => cmd_report(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}

fn fail(code: u8, message: impl std::fmt::Display) -> u8 {
    eprintln!("error: {message}");
    code
}

fn load_effective(
    config: &Path,
    seed: Option<u64>,
    power_model: Option<&Path>,
) -> Result<EffectiveConfig, u8> {
    let mut text = std::fs::read_to_string(config)
        .map_err(|e| fail(EXIT_CONFIG, format!("cannot read {}: {e}", config.display())))?;
    if let Some(seed) = seed {
        // The CLI seed wins over the file for sweep scripting.
        text = override_seed(&text, seed);
    }
    if let Some(path) = power_model {
        let overlay = std::fs::read_to_string(path)
            .map_err(|e| fail(EXIT_CONFIG, format!("cannot read {}: {e}", path.display())))?;
        text = override_energy_section(&text, &overlay);
    }
    RunConfigFile::parse(&text)
        .and_then(RunConfigFile::effective)
        .map_err(|e| fail(EXIT_CONFIG, e))
}

/// Replaces the `seed = ...` line inside `[run]`, inserting one if absent.
fn override_seed(text: &str, seed: u64) -> String {
    let mut out = String::new();
    let mut in_run = false;
    let mut saw_run = false;
    let mut replaced = false;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            in_run = trimmed == "[run]";
        }
        if in_run && trimmed == "[run]" && !saw_run {
            saw_run = true;
            out.push_str(line);
            out.push('\n');
            continue;
        }
        if in_run && !replaced && trimmed.starts_with("seed") {
            out.push_str(&format!("seed = {seed}\n"));
            replaced = true;
            continue;
        }
        out.push_str(line);
        out.push('\n');
    }
    if !replaced {
        if saw_run {
            // Insert right below the existing [run] header.
            out = out.replacen("[run]\n", &format!("[run]\nseed = {seed}\n"), 1);
        } else {
            out.push_str(&format!("\n[run]\nseed = {seed}\n"));
        }
    }
    out
}

/// Replaces the whole `[energy]` section with the overlay document.
fn override_energy_section(text: &str, overlay: &str) -> String {
    let mut out = String::new();
    let mut skipping = false;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            skipping = trimmed == "[energy]";
        }
        if !skipping {
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str("\n[energy]\n");
    for line in overlay.lines() {
        if line.trim() != "[energy]" {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

fn cmd_run(args: RunArgs) -> Result<(), u8> {
    let effective = load_effective(&args.config, args.seed, args.power_model.as_deref())?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| effective.out_dir.clone())
        .ok_or_else(|| fail(EXIT_CONFIG, "no output directory: pass --out or set run.out_dir"))?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| fail(EXIT_IO, format!("cannot create {}: {e}", out_dir.display())))?;

    let dataset = effective.load_dataset().map_err(|e| fail(EXIT_CONFIG, e))?;
    effective
        .validate_against_dataset(&dataset)
        .map_err(|e| fail(EXIT_CONFIG, e))?;
    let trainers = effective.build_trainers().map_err(|e| fail(EXIT_CONFIG, e))?;
    let mut monitor = effective.build_monitor();
    let ledger_path = out_dir.join("ledger.jsonl");
    let mut ledger = RunLedger::with_file(&ledger_path)
        .map_err(|e| fail(EXIT_IO, format!("cannot open ledger: {e}")))?;

    let outcome = scheduler::run(
        &effective.engine,
        &dataset,
        trainers,
        &mut monitor,
        &mut ledger,
    )
    .map_err(|e| match e {
        RunError::Validation(_) => fail(EXIT_CONFIG, e),
        RunError::Ledger(_) | RunError::Data(_) => fail(EXIT_IO, e),
        _ => fail(EXIT_RUNTIME, e),
    })?;

    let events = ledger.events();
    report::emit_traces(events, &out_dir).map_err(|e| fail(EXIT_IO, e))?;
    report::emit_explore_traces(events, &out_dir).map_err(|e| fail(EXIT_IO, e))?;
    let summary = report::render_run_summary(events);
    std::fs::write(out_dir.join("run_summary.txt"), &summary)
        .map_err(|e| fail(EXIT_IO, e))?;

    let batch = effective.engine.batch_candidates[outcome.final_config_id.0 as usize];
    println!(
        "final config: {} (batch size {batch})",
        outcome.final_config_id
    );
    println!("total energy (Wh): {}", outcome.total_energy_wh);
    println!("total epochs: {}", outcome.total_epochs);
    println!("final performance: {}", outcome.final_performance);
    if outcome.truncated {
        println!("note: run truncated by the epoch cap");
    }
    println!("ledger: {}", ledger_path.display());
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), u8> {
    let effective = load_effective(&args.config, args.seed, None)?;
    // Synthetic data is checked analytically; CSV data is parsed so missing
    // or malformed files surface here.
    let dataset = effective.load_dataset().map_err(|e| fail(EXIT_CONFIG, e))?;
    effective
        .validate_against_dataset(&dataset)
        .map_err(|e| fail(EXIT_CONFIG, e))?;
    print!("{}", effective.render_annotated());
    println!("dataset: {} samples, {} held out", dataset.len(), dataset.holdout_indices().len());
    Ok(())
}

fn read_ledger(path: &Path) -> Result<Vec<TimestampedEvent>, u8> {
    RunLedger::read_jsonl(path)
        .map_err(|e| fail(EXIT_IO, format!("cannot read ledger {}: {e}", path.display())))
}

fn cmd_report(args: ReportArgs) -> Result<(), u8> {
    let events = read_ledger(&args.ledger)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| fail(EXIT_IO, format!("cannot create {}: {e}", args.out.display())))?;
    let traces = report::emit_traces(&events, &args.out).map_err(|e| fail(EXIT_IO, e))?;
    let explores =
        report::emit_explore_traces(&events, &args.out).map_err(|e| fail(EXIT_IO, e))?;
    let summary = report::render_run_summary(&events);
    std::fs::write(args.out.join("run_summary.txt"), &summary)
        .map_err(|e| fail(EXIT_IO, e))?;
    print!("{summary}");
    println!(
        "wrote {} trace files and {} exploration files to {}",
        traces.len(),
        explores.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), u8> {
    let alpha1 = read_ledger(&args.alpha1)?;
    let sm2 = read_ledger(&args.sm2)?;
    let vanilla = read_ledger(&args.vanilla)?;
    let summary = report::compare(&alpha1, &sm2, &vanilla).map_err(|e| match e {
        report::ReportError::Io(_) => fail(EXIT_IO, e),
        _ => fail(EXIT_CONFIG, e),
    })?;
    print!("{}", summary.render_text());
    if let Some(out) = args.out {
        std::fs::create_dir_all(&out)
            .map_err(|e| fail(EXIT_IO, format!("cannot create {}: {e}", out.display())))?;
        let path = out.join("comparison.csv");
        summary.write_csv(&path).map_err(|e| fail(EXIT_IO, e))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
