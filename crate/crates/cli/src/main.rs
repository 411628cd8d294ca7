//! `interference-lab`: generate demand systems, run simulated pricing
//! experiments, infer clusters from clickstreams and compare paired
//! experiments.
//!
//! Exit codes: 0 on success, 1 on runtime errors (one line on stderr),
//! 2 on usage errors.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};
use config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "interference-lab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a demand system and write it as JSON (requires --out)
    Gen,
    /// Monte-Carlo bias of one randomization strategy
    Simulate,
    /// Bias across within-cluster substitution strengths
    Sweep,
    /// Louvain clustering of the co-view graph
    Cluster,
    /// Share of sessions exposed to both arms under one assignment
    Exposure,
    /// Bias/variance/exposure across Louvain resolutions
    Frontier,
    /// Compare paired article-level and clustered experiments
    Meta,
    /// Coverage of naive A/A-calibrated confidence intervals
    Coverage,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if matches!(cli.command, Command::Gen) && cli.opts.out.is_none() {
        Cli::command()
            .error(
                clap::error::ErrorKind::MissingRequiredArgument,
                "gen requires --out <PATH>",
            )
            .exit();
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let msg = format!("{err:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let config = cli.opts.resolve()?;
    let workers = match cli.opts.workers {
        Some(0) => anyhow::bail!("--workers must be at least 1"),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global()?;
    let io = commands::OutputSpec {
        out: cli.opts.out.clone(),
        force: cli.opts.force,
        sessions_out: cli.opts.sessions_out.clone(),
    };
    match cli.command {
        Command::Gen => commands::gen(&config, &io),
        Command::Simulate => commands::simulate(&config, &io),
        Command::Sweep => commands::sweep(&config, &io),
        Command::Cluster => commands::cluster(&config, &io),
        Command::Exposure => commands::exposure(&config, &io),
        Command::Frontier => commands::frontier(&config, &io),
        Command::Meta => commands::meta(&config, &io),
        Command::Coverage => commands::coverage(&config, &io),
    }
}
