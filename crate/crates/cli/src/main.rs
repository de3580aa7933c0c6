use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dempref::dynamics::{self, DOMAINS};
use dempref::harness::{self, ExperimentConfig, ExperimentId};
use dempref::oracle::mpc_demonstration;
use dempref::{OptBudget, WeightVector};

mod session;

#[derive(Parser)]
#[command(name = "dempref", version, about = "Reward learning from demonstrations and ranking queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation experiment and write its results.
    Experiment(ExperimentArgs),
    /// Emit an MPC demonstration for the domain's true weights as JSON.
    Demo(DemoArgs),
    /// Drive a live session stored on disk without the HTTP server.
    #[command(subcommand)]
    Session(session::SessionCommand),
    /// Serve the session API over HTTP.
    Serve(session::ServeArgs),
}

fn parse_domain(s: &str) -> Result<String, String> {
    if DOMAINS.contains(&s) {
        Ok(s.to_string())
    } else {
        Err(format!("unknown domain `{s}`; valid domains: {}", DOMAINS.join(", ")))
    }
}

fn parse_experiment(s: &str) -> Result<ExperimentId, String> {
    s.parse().map_err(|e: dempref::Error| e.to_string())
}

#[derive(Args)]
struct ExperimentArgs {
    /// init_demos, update_func or iterated_corr.
    #[arg(value_parser = parse_experiment)]
    id: ExperimentId,
    #[arg(long, default_value = "driver", value_parser = parse_domain)]
    domain: String,
    #[arg(long, default_value_t = 8)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Results file (JSON lines); the CSV summary is written beside it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Posterior samples per belief.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    /// Sample Plackett-Luce answers instead of sorting by reward.
    #[arg(long)]
    stochastic: bool,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value = "driver", value_parser = parse_domain)]
    domain: String,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn experiment(args: ExperimentArgs) -> anyhow::Result<()> {
    let mut config = ExperimentConfig::new(args.id, args.reps, args.seed);
    config.domain = args.domain;
    let s = &mut config.settings;
    if let Some(q) = args.queries {
        s.n_queries = q;
    }
    if let Some(r) = args.restarts {
        s.budget.restarts = r;
    }
    if let Some(i) = args.iterations {
        s.budget.iterations = i;
    }
    if let Some(m) = args.mc_samples {
        s.budget.mc_samples = m;
    }
    if let Some(n) = args.samples {
        s.sampler.samples = n;
    }
    if let Some(p) = args.pool_size {
        s.pool_size = p;
    }
    s.deterministic_responder = !args.stochastic;
    let table = harness::run_experiment(&config)?;
    harness::write_results(&table, &args.out)?;
    for row in table.summary().iter().filter(|r| r.query_index == config.settings.n_queries) {
        eprintln!("{:<20} m = {:.4} [{:.4}, {:.4}]", row.condition, row.mean, row.ci_low, row.ci_high);
    }
    if !table.failures.is_empty() {
        anyhow::bail!("{} cells failed; see {}", table.failures.len(), args.out.display());
    }
    Ok(())
}

fn demo(args: DemoArgs) -> anyhow::Result<()> {
    let system = dynamics::domain::<f64>(&args.domain)?;
    let w = WeightVector(harness::domain_true_weights(&args.domain)?);
    let traj = mpc_demonstration(system.as_ref(), &w, args.noise, args.seed, &OptBudget::default())?;
    let json = serde_json::to_string_pretty(&traj)?;
    match args.out {
        Some(p) => std::fs::write(p, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Experiment(a) => experiment(a),
        Command::Demo(a) => demo(a),
        Command::Session(c) => session::run(c),
        Command::Serve(a) => session::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
