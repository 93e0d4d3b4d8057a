use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "qubo-cart",
    version,
    about = "Regression trees with exact QUBO categorical splits"
)]
pub struct Cli {
    /// Worker threads. Results do not depend on this value.
    #[arg(long, global = true, env = "QUBO_CART_THREADS")]
    pub threads: Option<usize>,
    /// File of `key = value` lines supplying defaults for the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Command {
    /// Write a synthetic claims dataset as CSV.
    #[command(args_override_self = true)]
    Generate(GenerateArgs),
    /// Grow a tree and save it as JSON.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Train / validation / test protocol with cost-complexity pruning.
    #[command(args_override_self = true)]
    Protocol(ProtocolArgs),
    /// Dinkelbach convergence trace for one categorical column at the root.
    #[command(args_override_self = true)]
    Trace(TraceArgs),
    /// Compare QUBO, exhaustive and greedy partitions of one column.
    #[command(args_override_self = true)]
    Compare(CompareArgs),
    /// Write predictions of a saved model.
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// Mean squared error of a saved model, optionally relative to a baseline.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Df,
    Datagen,
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub kind: GeneratorKind,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 123)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column name.
    #[arg(long)]
    pub response: String,
    /// Feature schema as `name:kind,...` with kind numeric, categorical or binary.
    /// Inferred from the file when omitted.
    #[arg(long)]
    pub schema: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct SolverArgs {
    /// Largest M solved by exhaustive QUBO enumeration; annealing above.
    #[arg(long)]
    pub exact_threshold: Option<usize>,
    #[arg(long)]
    pub anneal_restarts: Option<usize>,
    /// Sweeps per restart (default 200·M).
    #[arg(long)]
    pub anneal_sweeps: Option<usize>,
    #[arg(long)]
    pub anneal_seed: Option<u64>,
    /// `upper`, `zero`, or a non-negative number.
    #[arg(long)]
    pub lambda_init: Option<String>,
    /// Relative Dinkelbach stopping tolerance.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Qubo,
    Exhaustive,
    Greedy,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RoutingArg {
    Complement,
    Majority,
}

#[derive(Debug, Args, Serialize)]
pub struct GrowArgs {
    /// Start from the maximal-tree preset (cp 0, min-split 2, min-bucket 1, depth 64).
    #[arg(long)]
    pub max_tree: bool,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub min_split: Option<usize>,
    #[arg(long)]
    pub min_bucket: Option<usize>,
    #[arg(long)]
    pub cp: Option<f64>,
    #[arg(long, value_enum)]
    pub routing: Option<RoutingArg>,
    /// Categorical split method.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grow: GrowArgs,
    /// Model JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON tree summary.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Optional CSV of every Dinkelbach trace produced while growing.
    #[arg(long)]
    pub traces: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ProtocolArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Grow settings; the maximal-tree preset is the base.
    #[command(flatten)]
    pub grow: GrowArgs,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.5,0.25,0.25")]
    pub fractions: String,
    /// Partition seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Report JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional CSV of the four summary rows.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Optional CSV of every pruning step.
    #[arg(long)]
    pub steps: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TraceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub column: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Trace CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON output with the F values and outcome.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub column: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Comparison JSON output (wall times are printed, not written).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with the model's feature columns; the response column is optional.
    #[arg(long)]
    pub data: PathBuf,
    /// Override the routing stored in the model.
    #[arg(long, value_enum)]
    pub routing: Option<RoutingArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV including the response column.
    #[arg(long)]
    pub data: PathBuf,
    /// Model whose MSE is the denominator of the relative MSE.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Optional JSON output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
