use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Subcommand};

use dempref::dynamics::Trajectory;
use dempref::harness::domain_true_weights;
use dempref::oracle::mpc_demonstration;
use dempref::{dynamics, OptBudget, SamplerSettings, SimulatedHuman, WeightVector};
use dempref_service::api::{CreateSession, SubmitRanking, VERSION};
use dempref_service::{SessionStore, Status};

#[derive(Args)]
pub struct StoreArgs {
    /// Directory holding one JSON file per session.
    #[arg(long, env = "DEMPREF_DATA_DIR", default_value = "sessions")]
    data_dir: PathBuf,
}

#[derive(Subcommand)]
pub enum SessionCommand {
    /// Create a session and print its id.
    New(NewArgs),
    /// Supply the next demonstration or ranking, then compute the next query.
    Step(StepArgs),
    /// Print the session summary, current query or learning trace.
    Status(StatusArgs),
}

#[derive(Args)]
pub struct NewArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long, default_value = "driver")]
    domain: String,
    #[arg(long, default_value_t = 1)]
    n_dem: usize,
    #[arg(long, default_value_t = 25)]
    queries: usize,
    #[arg(long, default_value_t = 3)]
    n_opt: usize,
    /// Iterated correction.
    #[arg(long)]
    ic: bool,
    #[arg(long, default_value_t = 0.1)]
    beta_demo: f64,
    #[arg(long, default_value_t = 5.0)]
    beta_response: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
pub struct StepArgs {
    #[command(flatten)]
    store: StoreArgs,
    id: String,
    /// JSON file with a control sequence or a trajectory object.
    #[arg(long, conflicts_with_all = ["ranking", "auto"])]
    demo: Option<PathBuf>,
    /// One-based ranking, best first, e.g. `2,1,3`.
    #[arg(long, value_delimiter = ',', conflicts_with = "auto")]
    ranking: Option<Vec<usize>>,
    /// Answer with the simulated human at the domain's true weights.
    #[arg(long)]
    auto: bool,
}

#[derive(Args)]
pub struct StatusArgs {
    #[command(flatten)]
    store: StoreArgs,
    id: String,
    /// Print the current query payload instead of the summary.
    #[arg(long, conflicts_with = "trace")]
    query: bool,
    /// Print the seed-determined learning trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
pub struct ServeArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long, env = "DEMPREF_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "DEMPREF_HOST", default_value = "127.0.0.1")]
    host: IpAddr,
}

fn open(args: &StoreArgs) -> anyhow::Result<SessionStore> {
    SessionStore::open(&args.data_dir).with_context(|| format!("opening {}", args.data_dir.display()))
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn run(cmd: SessionCommand) -> anyhow::Result<()> {
    match cmd {
        SessionCommand::New(a) => new(a),
        SessionCommand::Step(a) => step(a),
        SessionCommand::Status(a) => status(a),
    }
}

fn new(a: NewArgs) -> anyhow::Result<()> {
    let store = open(&a.store)?;
    let mut req = CreateSession::new(a.n_dem, a.queries, a.n_opt);
    req.domain = a.domain;
    req.use_ic = a.ic;
    req.beta_demo = a.beta_demo;
    req.beta_response = a.beta_response;
    req.seed = a.seed;
    if a.restarts.is_some() || a.iterations.is_some() || a.mc_samples.is_some() {
        let d = OptBudget::default();
        req.budget = Some(OptBudget {
            restarts: a.restarts.unwrap_or(d.restarts),
            iterations: a.iterations.unwrap_or(d.iterations),
            mc_samples: a.mc_samples.unwrap_or(d.mc_samples),
            seed: 0,
        });
    }
    if let Some(n) = a.samples {
        req.sampler = Some(SamplerSettings {
            samples: n,
            ..SamplerSettings::default()
        });
    }
    let (id, status) = store.create(&req)?;
    if status == Status::Computing {
        store.settle(&id)?;
    }
    println!("{id}");
    Ok(())
}

fn read_controls(path: &Path) -> anyhow::Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(t) = serde_json::from_str::<Trajectory<f64>>(&text) {
        return Ok(t.controls);
    }
    serde_json::from_str(&text).with_context(|| format!("{}: expected a control sequence or trajectory", path.display()))
}

fn step(a: StepArgs) -> anyhow::Result<()> {
    let store = open(&a.store)?;
    let record = store.record(&a.id)?;
    if record.status == Status::Computing {
        store.settle(&a.id)?;
    }
    let record = store.record(&a.id)?;
    match record.status {
        Status::AwaitingDemo => {
            let controls = if let Some(path) = &a.demo {
                read_controls(path)?
            } else if a.auto {
                let system = dynamics::domain::<f64>(&record.domain)?;
                let w = WeightVector(domain_true_weights(&record.domain)?);
                let index = record.demonstrations.len() as u64;
                let seed = dempref::seed::derive(record.config.seed, dempref::seed::stream::DEMO, index);
                mpc_demonstration(system.as_ref(), &w, 0.0, seed, &OptBudget::default())?.controls
            } else {
                bail!("session {} is awaiting a demonstration; pass --demo FILE or --auto", a.id);
            };
            store.submit_demonstration(&a.id, &controls)?;
        }
        Status::AwaitingResponse => {
            let ranking = if let Some(r) = a.ranking {
                r
            } else if a.auto {
                let w = WeightVector(domain_true_weights(&record.domain)?);
                let c = &record.config;
                let human = SimulatedHuman::new(w, c.beta_demo, c.beta_response, c.seed, true)?;
                let pending = record.pending.as_ref().context("pending query missing")?;
                human.answer_ranking(&pending.query, pending.iteration)?.to_one_based()
            } else {
                bail!("session {} is awaiting a ranking; pass --ranking or --auto", a.id);
            };
            let req = SubmitRanking {
                v: VERSION,
                iteration: record.pending.as_ref().map_or(0, |p| p.iteration),
                ranking,
            };
            store.submit_ranking(&a.id, &req)?;
        }
        Status::Done => bail!("session {} is done", a.id),
        Status::Computing => bail!("session {} is still computing", a.id),
    }
    store.settle(&a.id)?;
    print_json(&store.query(&a.id)?)
}

fn status(a: StatusArgs) -> anyhow::Result<()> {
    let store = open(&a.store)?;
    if a.trace {
        print!("{}", store.trace_json(&a.id)?);
        Ok(())
    } else if a.query {
        print_json(&store.query(&a.id)?)
    } else {
        print_json(&store.summary(&a.id)?)
    }
}

pub fn serve(a: ServeArgs) -> anyhow::Result<()> {
    let store = Arc::new(open(&a.store)?);
    dempref_service::serve_blocking(store, SocketAddr::new(a.host, a.port))?;
    Ok(())
}
