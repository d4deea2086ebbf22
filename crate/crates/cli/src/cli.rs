use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "pointprompt", version, about = "Point-prompted segmentation by iterative box refinement")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration (schema_version = 1).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set train.sgd.lr=0.02 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Override rng_seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print errors as a JSON object on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the phantom dataset into paths.data_dir.
    Synth,
    /// Train the refiner on the training split and write paths.checkpoint.
    Train,
    /// Segment one slice and write its mask, trace and optional overlay.
    Infer(InferArgs),
    /// Evaluate the test split and write report.json and report.csv.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Sample id from the dataset manifest; the prompt is its mask's box center.
    #[arg(long, conflicts_with_all = ["image", "mask", "point"])]
    pub id: Option<String>,
    /// Image to segment (PGM).
    #[arg(long, value_name = "PGM", requires = "point")]
    pub image: Option<PathBuf>,
    /// Ground-truth mask (PGM); needed by the oracle backend and the ideal selector.
    #[arg(long, value_name = "PGM", requires = "image")]
    pub mask: Option<PathBuf>,
    /// Prompt point as x,y.
    #[arg(long, value_name = "X,Y", value_parser = parse_point, requires = "image")]
    pub point: Option<(usize, usize)>,
    /// Prompt class (defaults to phantom.class_id).
    #[arg(long)]
    pub class: Option<usize>,
    /// Number of rounds (defaults to inference.rounds).
    #[arg(long = "T", value_name = "T")]
    pub rounds: Option<usize>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "run/infer")]
    pub out: PathBuf,
    /// Also write overlay.ppm.
    #[arg(long)]
    pub overlay: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Round counts to evaluate, e.g. --T 1,5 (defaults to inference.eval_rounds).
    #[arg(long = "T", value_name = "LIST", value_delimiter = ',')]
    pub rounds: Option<Vec<usize>>,
    /// Parallel sample evaluation (defaults to inference.jobs).
    #[arg(long)]
    pub jobs: Option<usize>,
}

fn parse_point(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected X,Y, got {s:?}"))?;
    let coord = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((coord(x)?, coord(y)?))
}
