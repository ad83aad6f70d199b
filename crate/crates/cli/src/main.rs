use std::path::PathBuf;

use anyhow::{Context, Result};
use baco::harness::{run_stage, ExperimentConfig, PipelineReport, Stage};
use clap::{Parser, Subcommand};

/// Base/aligned collaborative decoding experiments.
///
/// HTTP backends read a bearer token from BACO_API_TOKEN.
#[derive(Debug, Parser)]
#[command(name = "baco", version)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true, default_value = "configs/smoke/config.json")]
    config: PathBuf,
    /// Override the generation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Keep finished generation work from an earlier invocation.
    #[arg(long, global = true)]
    resume: bool,
    /// Override the output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Decode every (method, sweep value) for every prompt.
    Generate,
    /// Compute metrics and trade-off points from the traces.
    Evaluate,
    /// Coverage, dominance, rollups and switch statistics.
    Aggregate,
    /// Run one named stage: generate, evaluate, aggregate or all.
    Run {
        #[arg(long, default_value = "all")]
        stage: String,
    },
    /// Run the full pipeline on the configuration (the synthetic smoke
    /// configuration by default) and print the summary.
    Smoke,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = ExperimentConfig::load(&cli.config).with_context(|| format!("loading {}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        cfg.generation.seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(dir) = cli.output_dir {
        cfg.output_dir = dir;
    }
    cfg.validate()?;
    let (stage, resume) = match &cli.command {
        Command::Generate => (Stage::Generate, cli.resume),
        Command::Evaluate => (Stage::Evaluate, cli.resume),
        Command::Aggregate => (Stage::Aggregate, cli.resume),
        Command::Run { stage } => (stage.parse()?, cli.resume),
        Command::Smoke => (Stage::All, false),
    };
    let started = std::time::Instant::now();
    let report = run_stage(&cfg, stage, resume)?;
    print_report(&report);
    log::info!("done in {:.1}s; outputs in {}", started.elapsed().as_secs_f64(), cfg.output_dir.display());
    Ok(())
}

fn print_report(report: &PipelineReport) {
    if let Some(g) = &report.generate {
        println!(
            "generate: {} runs, {} traces ({} groups decoded, {} reused)",
            g.runs, g.traces, g.decoded_groups, g.reused_groups
        );
    }
    if let Some(e) = &report.evaluate {
        println!("evaluate: {} runs, {} spaces", e.runs.len(), e.spaces.len());
    }
    if let Some(a) = &report.aggregate {
        let skipped = a.results.iter().filter(|r| r.skipped.is_some()).count();
        println!("aggregate: {} spaces ({skipped} skipped)", a.results.len());
        println!("{:<16} {:<10} {:>9} {:>9}", "method", "rollup", "coverage", "dominance");
        for r in &a.rows {
            println!("{:<16} {:<10} {:>9.3} {:>8.1}%", r.method, r.rollup.label(), r.coverage, 100.0 * r.dominance);
        }
    }
}
