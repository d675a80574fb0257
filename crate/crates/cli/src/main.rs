//! `fmcvrp` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fmcvrp_core::checks::{invariant_check, model_gradient_check};
use fmcvrp_core::config::{Profile, RunConfig};
use fmcvrp_core::datagen::build_fixed_graph;
use fmcvrp_core::pipeline::{self, RunDir};
use fmcvrp_core::teacher::TeacherConfig;
use fmcvrp_core::Error;
use serde_json::json;

/// Maximum relative error accepted by `check grad`.
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "fmcvrp", version, about = "Foundation-model toolkit for fixed-graph CVRP")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON run configuration (merged over the profile defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// desk, paper or custom.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data generation and decoding.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run directory.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    /// Print failures as one JSON object on stderr.
    #[arg(long, global = true)]
    error_json: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Fixed graph.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Training and held-out data.
    #[command(subcommand)]
    Data(DataCmd),
    /// Teacher heuristic.
    #[command(subcommand)]
    Teacher(TeacherCmd),
    #[command(subcommand)]
    Train(TrainCmd),
    #[command(subcommand)]
    Decode(DecodeCmd),
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Self-checks.
    #[command(subcommand)]
    Check(CheckCmd),
    /// Resolved configuration.
    #[command(subcommand)]
    Config(ConfigCmd),
}

#[derive(Subcommand, Debug)]
enum GraphCmd {
    Build,
}

#[derive(Subcommand, Debug)]
enum DataCmd {
    Gen,
}

#[derive(Subcommand, Debug)]
enum TeacherCmd {
    /// Re-solve the held-out set with another teacher setting.
    Solve {
        /// Output name under teacher/.
        #[arg(long, default_value = "alt")]
        name: String,
        /// Savings construction without local search.
        #[arg(long)]
        construction_only: bool,
        /// Local-search wall-clock budget in seconds.
        #[arg(long)]
        budget: Option<f64>,
    },
}

#[derive(Subcommand, Debug)]
enum TrainCmd {
    Run,
}

#[derive(Subcommand, Debug)]
enum DecodeCmd {
    Run,
}

#[derive(Subcommand, Debug)]
enum EvalCmd {
    Report,
}

#[derive(Subcommand, Debug)]
enum CheckCmd {
    /// Finite-difference check of the full model loss in 64-bit.
    Grad {
        #[arg(long, default_value_t = 5)]
        points: usize,
        #[arg(long, default_value_t = 60)]
        coords: usize,
        #[arg(long, default_value_t = 10)]
        customers: usize,
    },
    /// Feasibility of decodes from untrained models, and teacher validity.
    Invariants {
        #[arg(long, default_value_t = 200)]
        count: usize,
    },
}

#[derive(Subcommand, Debug)]
enum ConfigCmd {
    Show,
}

/// Exit status for an error: 2 validation, 3 divergence, 4 I/O.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } => 3,
        Error::Io { .. } | Error::Checkpoint(_) | Error::Csv(_) => 4,
        _ => 2,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidSolution(_) => "invalid_solution",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::Shape { .. } => "shape",
        Error::TokenBudget { .. } => "token_budget",
        Error::Divergence { .. } => "divergence",
        Error::Checkpoint(_) => "checkpoint",
        Error::Config(_) => "config",
        Error::Io { .. } => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

fn resolve(g: &Global) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::resolve(g.config.as_deref(), g.profile, std::env::vars())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = resolve(&cli.global)?;
    let out = &cli.global.out;
    match &cli.cmd {
        Cmd::Config(ConfigCmd::Show) => println!("{}", cfg.to_json()?),
        Cmd::Graph(GraphCmd::Build) => {
            let run = RunDir::open(out, cfg)?;
            let g = pipeline::graph_build(&run)?;
            println!("graph: {} nodes -> {}", g.size(), run.path(pipeline::GRAPH_FILE).display());
        }
        Cmd::Data(DataCmd::Gen) => {
            let run = RunDir::open(out, cfg)?;
            let g = pipeline::load_graph(&run)?;
            let d = pipeline::data_gen(&run, &g)?;
            println!(
                "train: {} records ({} skipped), digest {}",
                d.train.records, d.train.skipped, d.train.content_digest
            );
            println!("heldout digest {}", d.heldout_digest);
        }
        Cmd::Teacher(TeacherCmd::Solve {
            name,
            construction_only,
            budget,
        }) => {
            let mut teacher = if *construction_only {
                TeacherConfig::construction_only()
            } else {
                cfg.data.teacher.clone()
            };
            if let Some(b) = budget {
                teacher.time_budget_s = *b;
            }
            let run = RunDir::open(out, cfg)?;
            let g = pipeline::load_graph(&run)?;
            let recs = pipeline::teacher_solve(&run, &g, name, &teacher)?;
            let mean = recs.iter().map(|r| r.teacher_cost).sum::<f64>() / recs.len().max(1) as f64;
            println!("teacher {name}: {} instances, mean cost {mean:.4}", recs.len());
        }
        Cmd::Train(TrainCmd::Run) => {
            let run = RunDir::open(out, cfg)?;
            let g = pipeline::load_graph(&run)?;
            let (state, log) = pipeline::train_run(&run, &g)?;
            if let Some(last) = log.last() {
                println!(
                    "trained {} steps; last problem loss {:.4}, solution loss {}",
                    state.global_step,
                    last.problem_loss,
                    last.solution_loss.map_or("-".into(), |v| format!("{v:.4}"))
                );
            }
        }
        Cmd::Decode(DecodeCmd::Run) => {
            let run = RunDir::open(out, cfg)?;
            let g = pipeline::load_graph(&run)?;
            for (name, recs) in pipeline::decode_run(&run, &g)? {
                let mean = recs.iter().map(|r| r.cost).sum::<f64>() / recs.len().max(1) as f64;
                println!("{name}: {} instances, mean cost {mean:.4}", recs.len());
            }
        }
        Cmd::Eval(EvalCmd::Report) => {
            let run = RunDir::open(out, cfg)?;
            let g = pipeline::load_graph(&run)?;
            let report = pipeline::eval_report(&run, &g)?;
            println!("{} report lines -> {}", report.len(), run.path(pipeline::REPORT).display());
        }
        Cmd::Check(CheckCmd::Grad {
            points,
            coords,
            customers,
        }) => {
            let s = model_gradient_check(&cfg.model, *points, *coords, *customers, cfg.seed)?;
            println!("{}", serde_json::to_string(&s)?);
            println!("max relative error: {:.3e}", s.max_rel_error);
            if !(s.max_rel_error < GRAD_TOLERANCE) {
                return Err(Error::InvalidArgument(format!(
                    "gradient check failed: {:.3e} >= {GRAD_TOLERANCE:e} in {}",
                    s.max_rel_error, s.worst_param
                )));
            }
        }
        Cmd::Check(CheckCmd::Invariants { count }) => {
            let graph = build_fixed_graph(cfg.data.graph_size, cfg.seed)?;
            let sizes: Vec<usize> = (5..=30).filter(|&n| n < graph.size()).collect();
            let s = invariant_check(&cfg.model, &graph, &sizes, *count, cfg.seed)?;
            println!("{}", serde_json::to_string(&s)?);
            if !s.ok() {
                return Err(Error::InvalidArgument("invariant check failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            if cli.global.error_json {
                eprintln!(
                    "{}",
                    json!({ "error": error_kind(&e), "message": e.to_string(), "exit_code": code })
                );
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(code)
        }
    }
}
