//! `frechet`: semi-supervised Fréchet regression from the command line.

mod fit_predict;
mod graph_stats;
mod output;
mod simulate;
mod table;

use std::process::ExitCode;
use std::str::FromStr;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "frechet", version, about = "Semi-supervised Fréchet regression on metric-space responses")]
struct Cli {
    /// Master seed; overrides the seed in a simulation config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "FRECHET_THREADS")]
    threads: Option<usize>,

    /// Omit timestamps and timings so reruns are byte-identical.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Swiss-roll simulation study from a JSON config.
    Simulate(simulate::SimulateArgs),
    /// Fit a regressor on a training CSV and predict query rows.
    FitPredict(fit_predict::FitPredictArgs),
    /// Build a neighbor graph over a feature CSV and report its structure.
    GraphStats(graph_stats::GraphStatsArgs),
}

/// Shared context for subcommands.
pub struct Global {
    pub seed: Option<u64>,
    pub deterministic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphArg {
    /// Connect points within a radius.
    R,
    /// Connect each point to its k nearest neighbors.
    Knn,
}

/// A fixed value or a keyword such as `cv` or `auto`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Choice<T> {
    Auto,
    Fixed(T),
}

impl<T: FromStr> Choice<T> {
    fn parse(s: &str, keyword: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case(keyword) {
            return Ok(Choice::Auto);
        }
        s.parse().map(Choice::Fixed).map_err(|_| format!("expected a number or `{keyword}`, got {s:?}"))
    }
}

pub fn cv_f64(s: &str) -> Result<Choice<f64>, String> {
    Choice::parse(s, "cv")
}

pub fn cv_usize(s: &str) -> Result<Choice<usize>, String> {
    Choice::parse(s, "cv")
}

pub fn auto_f64(s: &str) -> Result<Choice<f64>, String> {
    Choice::parse(s, "auto")
}

/// Graph options shared by `fit-predict` and `graph-stats`.
#[derive(Args, Debug, Clone)]
pub struct GraphOpts {
    /// Neighbor graph type.
    #[arg(long, value_enum, default_value = "r")]
    pub graph: GraphArg,
    /// Radius for `--graph r`: a number or `auto` (1.2 × largest nearest-neighbor distance).
    #[arg(long, default_value = "auto", value_parser = auto_f64)]
    pub radius: Choice<f64>,
    /// Neighbors per point for `--graph knn`.
    #[arg(long, default_value_t = 4)]
    pub graph_k: usize,
    /// Edge weights are lengths raised to this power (1 = plain lengths).
    #[arg(long, default_value_t = 1.0)]
    pub fermat_s: f64,
}

impl GraphOpts {
    pub fn to_config(&self) -> frechet_core::regression::GraphConfig {
        use frechet_core::regression::{GraphChoice, GraphConfig};
        let rule = match (self.graph, self.radius) {
            (GraphArg::R, Choice::Fixed(r)) => GraphChoice::Radius(Some(r)),
            (GraphArg::R, Choice::Auto) => GraphChoice::Radius(None),
            (GraphArg::Knn, _) => GraphChoice::Knn(self.graph_k),
        };
        GraphConfig { rule, fermat_s: self.fermat_s }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let global = Global { seed: cli.seed, deterministic: cli.deterministic };
    match cli.command {
        Command::Simulate(args) => simulate::run(&args, &global),
        Command::FitPredict(args) => fit_predict::run(&args, &global),
        Command::GraphStats(args) => graph_stats::run(&args, &global),
    }
}

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
            || c.downcast_ref::<csv::Error>().is_some_and(
                |e| matches!(e.kind(), csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe),
            )
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
