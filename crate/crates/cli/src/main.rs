//! `apex`: scene generation, map pregeneration, training, single episodes,
//! benchmark suites, metric recomputation and map inspection.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use apex_core::ApexError;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "apex",
    version,
    about = "Voxel-map object-goal navigation toolkit"
)]
pub struct Cli {
    /// TOML configuration file; defaults apply to every missing key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Simulated-clock scheduler (default).
    #[arg(long, global = true, conflicts_with = "wall_clock")]
    pub lockstep: bool,
    /// Real-time threads for the three workers.
    #[arg(long, global = true)]
    pub wall_clock: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "apex-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate scenes from consecutive seeds.
    Generate(SceneSet),
    /// Fly the coverage pattern and store offline attraction maps.
    Pregen(SceneSet),
    /// Goal-agnostic training stage.
    Pretrain(TrainArgs),
    /// Goal-directed training stage, starting from a pretrained checkpoint.
    Finetune(TrainArgs),
    /// Run one episode with full logging.
    Run(RunArgs),
    /// Run the benchmark suite from the configuration.
    Bench(PolicyArgs),
    /// Recompute the summary from a records file.
    Metrics(MetricsArgs),
    /// Dump one z-slice of a map file as a text or CSV grid.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Clone)]
pub struct SceneSet {
    /// Scene files; when given, the generator options are ignored.
    #[arg(long = "scene")]
    pub scenes: Vec<PathBuf>,
    /// Generator preset: open, trivial or standard.
    #[arg(long, default_value = "trivial")]
    pub preset: String,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub scenes: SceneSet,
    /// Starting parameters.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Train the raw-depth policy instead of the map policy.
    #[arg(long)]
    pub depth: bool,
}

#[derive(Args, Debug, Default)]
pub struct PolicyArgs {
    /// Map-reading policy checkpoint.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Raw-depth policy checkpoint.
    #[arg(long)]
    pub depth_policy: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Scene file; otherwise the scene is generated from the seed.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value = "trivial")]
    pub preset: String,
    #[arg(long, default_value = "w/o-RL-AD")]
    pub variant: String,
    #[command(flatten)]
    pub policies: PolicyArgs,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Records file written by `bench` or `run`.
    pub records: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Text,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Channel {
    Attraction,
    Depth,
    Exploration,
    Obstacle,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    pub map: PathBuf,
    #[arg(long, value_enum, default_value = "attraction")]
    pub channel: Channel,
    /// Slice index along z; defaults to the middle layer.
    #[arg(long)]
    pub z: Option<usize>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

/// Process exit code of a failure category.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<ApexError>().map(ApexError::category) {
        Some("config") | Some("usage") => 2,
        Some("input") | Some("dimension") => 3,
        Some("io") => 4,
        Some("format") => 5,
        Some("generation") | Some("grounding") => 6,
        Some("numeric") => 7,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e
                .downcast_ref::<ApexError>()
                .map_or("error", ApexError::category);
            eprintln!("apex: {category}: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
