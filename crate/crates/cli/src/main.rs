//! `ingnn` — train, evaluate and probe INGNN from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ingnn", version, about = "Node classification with ego, aggregated and structure features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model on one split; writes runrecord.json, metrics.csv and checkpoint.bin.
    Train(TrainArgs),
    /// Re-score a saved checkpoint on a split.
    Eval(EvalArgs),
    /// Generate synthetic bundles with controlled edge homophily.
    Synth(SynthArgs),
    /// Rook's 4×4 graph vs the Shrikhande graph: 1-WL against neighborhood structure.
    WlDemo(WlDemoArgs),
    /// Misclassification of raw vs mean-aggregated two-class Gaussian features.
    Theory(TheoryArgs),
    /// Seven-variant ablation table.
    Ablation(AblationArgs),
    /// Hyper-parameter grid search over one or more splits.
    Grid(GridArgs),
    /// Branch importance after fusion, one row per dataset.
    Importance(ImportanceArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random choice; never taken from the clock.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory [default: $INGNN_OUT, else ./ingnn-out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Model and schedule settings. Each flag mirrors a key of the `--config`
/// file; flags override the file.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    /// Flat `key=value` file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub prop_steps: Option<String>,
    #[arg(long)]
    pub adj_powers: Option<String>,
    #[arg(long)]
    pub dropout: Option<String>,
    #[arg(long)]
    pub row_normalize_features: Option<String>,
    /// adaptive, equal_sum or concat.
    #[arg(long)]
    pub fusion_mode: Option<String>,
    /// Comma-separated branches to switch off (ego, agg, strc).
    #[arg(long)]
    pub disable: Option<String>,
    #[arg(long)]
    pub self_loops: Option<String>,
    /// factored or dense_literal.
    #[arg(long)]
    pub structure_mode: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<String>,
    #[arg(long)]
    pub bilevel: Option<String>,
    #[arg(long)]
    pub w_epochs: Option<String>,
    #[arg(long)]
    pub p_epochs: Option<String>,
    #[arg(long)]
    pub p_lr: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub max_epochs: Option<String>,
}

impl ModelFlags {
    pub fn pairs(&self) -> Vec<(&'static str, &str)> {
        let fields = [
            ("hidden", &self.hidden),
            ("prop_steps", &self.prop_steps),
            ("adj_powers", &self.adj_powers),
            ("dropout", &self.dropout),
            ("row_normalize_features", &self.row_normalize_features),
            ("fusion_mode", &self.fusion_mode),
            ("disable", &self.disable),
            ("self_loops", &self.self_loops),
            ("structure_mode", &self.structure_mode),
            ("lr", &self.lr),
            ("weight_decay", &self.weight_decay),
            ("bilevel", &self.bilevel),
            ("w_epochs", &self.w_epochs),
            ("p_epochs", &self.p_epochs),
            ("p_lr", &self.p_lr),
            ("patience", &self.patience),
            ("max_epochs", &self.max_epochs),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }
}

#[derive(Args, Debug, Clone)]
pub struct SplitFlags {
    /// Used when the bundle has no splits.json.
    #[arg(long, default_value = "fractional")]
    pub split_policy: String,
    /// Which split to use.
    #[arg(long, default_value_t = 0)]
    pub split_index: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ingnn,
    Mlp,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Bundle directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "ingnn")]
    pub model: ModelKind,
    #[command(flatten)]
    pub split: SplitFlags,
    #[command(flatten)]
    pub flags: ModelFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory holding runrecord.json and checkpoint.bin [default: the output directory].
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Target edge homophily in [0, 1].
    #[arg(long, conflicts_with = "sweep", required_unless_present = "sweep")]
    pub h: Option<f64>,
    /// Eleven bundles, h = 0.0, 0.1, …, 1.0.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, default_value_t = 1490)]
    pub nodes: usize,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 4.0)]
    pub avg_degree: f64,
    /// Feature dimension.
    #[arg(long, default_value_t = 50)]
    pub dim: usize,
    /// Distance scale between class means.
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Fractional splits stored in splits.json.
    #[arg(long, default_value_t = 5)]
    pub num_splits: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pair {
    /// Rook's 4×4 graph vs Shrikhande.
    RookShrikhande,
    /// Rook's graph against itself.
    #[value(name = "self")]
    SelfPair,
}

#[derive(Args, Debug)]
pub struct WlDemoArgs {
    #[arg(long, value_enum, default_value = "rook-shrikhande")]
    pub pair: Pair,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum McKind {
    /// Sample the aggregated Gaussians directly.
    Aggregated,
    /// Build a regular graph and mean-aggregate its features.
    Graph,
}

#[derive(Args, Debug)]
pub struct TheoryArgs {
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub mu1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma1: f64,
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    pub mu2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 5)]
    pub degree: usize,
    /// Grid intervals on [0, 1].
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Add Monte-Carlo columns with this many samples per grid point.
    #[arg(long)]
    pub monte_carlo: Option<usize>,
    #[arg(long, value_enum, default_value = "aggregated")]
    pub mc_source: McKind,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct AblationArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Repeat the suite with this many derived seeds.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[command(flatten)]
    pub split: SplitFlags,
    #[command(flatten)]
    pub flags: ModelFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// Only the configuration given by flags.
    Base,
    /// 192 configurations around it.
    Full,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "base")]
    pub grid: GridKind,
    /// Number of splits to average over.
    #[arg(long, default_value_t = 1)]
    pub splits: usize,
    #[arg(long, default_value = "fractional")]
    pub split_policy: String,
    #[command(flatten)]
    pub flags: ModelFlags,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct ImportanceArgs {
    /// Bundle directories; repeat the flag for several datasets.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[command(flatten)]
    pub split: SplitFlags,
    #[command(flatten)]
    pub flags: ModelFlags,
    #[command(flatten)]
    pub common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::WlDemo(a) => commands::wl_demo(a),
        Command::Theory(a) => commands::theory(a),
        Command::Ablation(a) => commands::ablation(a),
        Command::Grid(a) => commands::grid(a),
        Command::Importance(a) => commands::importance(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
