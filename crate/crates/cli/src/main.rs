//! `weavecache` command-line driver.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "weavecache",
    version,
    about = "Entropy-gated streaming frame memory"
)]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Machine-readable JSON output instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-relevance stream and its queries.
    Generate(GenerateArgs),
    /// Replay a stream under one recall policy and print its metrics.
    Simulate(SimulateArgs),
    /// Run the gated policy for each threshold and emit a CSV table.
    Sweep(SweepArgs),
    /// Build order-reconstruction training examples from a stream.
    Shuffle(ShuffleArgs),
    /// Score reorder predictions against exported targets.
    EvalReorder(EvalReorderArgs),
    /// Time coarse, coarse-to-fine, and exhaustive retrieval on random data.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct StreamArgs {
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub events: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Tokens per frame.
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub query_tokens: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
    /// Answer options per query.
    #[arg(long)]
    pub options: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_enum)]
    pub horizon: Option<HorizonArg>,
    #[arg(long)]
    pub ambiguity: Option<f64>,
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HorizonArg {
    Current,
    Past,
    Mixed,
}

#[derive(Debug, Clone, Args, Default)]
pub struct EngineArgs {
    /// Local window length C, in frames.
    #[arg(long)]
    pub window: Option<usize>,
    /// Recalled-frame budget.
    #[arg(long)]
    pub k: Option<usize>,
    /// Coarse candidate count.
    #[arg(long)]
    pub m_coarse: Option<usize>,
    /// Mock answerer temperature.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory for stream.jsonl and queries.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub stream: StreamArgs,
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory holding stream.jsonl and queries.jsonl; generated from the
    /// stream flags when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "gated")]
    pub policy: PolicyArg,
    /// Entropy threshold in nats (`inf` never recalls).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Write every answer trace as JSON lines.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub stream: StreamArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum PolicyArg {
    LocalOnly,
    AlwaysRecall,
    Gated,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Comma-separated thresholds in nats.
    #[arg(long, required = true, value_delimiter = ',', num_args = 1..)]
    pub deltas: Vec<f64>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub stream: StreamArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct ShuffleArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Consecutive frames per segment.
    #[arg(long, default_value_t = 1)]
    pub group: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Examples to draw; example `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    pub examples: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalReorderArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 10_000)]
    pub frames: usize,
    #[arg(long, default_value_t = 8)]
    pub tokens: usize,
    #[arg(long, default_value_t = 8)]
    pub query_tokens: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m_coarse: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn init_threads() {
    if let Some(n) = std::env::var("WEAVECACHE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
    {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn main() {
    let cli = Cli::parse();
    init_threads();
    if let Err(e) = commands::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
