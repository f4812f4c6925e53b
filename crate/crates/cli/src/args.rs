use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use embalign::alignment::{OtMode, WassersteinInit};
use embalign::gmm::SymmetricMode;
use embalign::io::FileFormat;
use embalign::metrics::Pooling;

#[derive(Debug, Parser)]
#[command(
    name = "embalign",
    version,
    about = "Align embedding spaces and measure how well aligned embeddings spoof a verifier"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Top-level seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for output files (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Embedding file format for written sets.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    /// Also print results as a text table.
    #[arg(long, global = true)]
    pub table: bool,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Bin,
}

impl From<FormatArg> for FileFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => FileFormat::Csv,
            FormatArg::Bin => FileFormat::Bin,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-encoder world.
    Synth(SynthArgs),
    /// Fit a rotation mapping target embeddings onto attacker embeddings.
    Align(AlignArgs),
    /// Score a rotation as a spoofing attack.
    Eval(EvalArgs),
    /// Run every alignment method on one synthetic world.
    Experiment(ExperimentArgs),
    /// Fit a diagonal GMM to an embedding set.
    GmmFit(GmmFitArgs),
}

/// World settings shared by `synth` and `experiment`. Unset flags fall back
/// to the config file, then to built-in defaults.
#[derive(Debug, Args, Default)]
pub struct WorldArgs {
    /// JSON world config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub records_per_user: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of classes; 0 disables class structure.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub class_scale: Option<f64>,
    #[arg(long)]
    pub user_scale: Option<f64>,
    #[arg(long)]
    pub record_scale: Option<f64>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long)]
    pub nonlinearity: Option<f64>,
    #[arg(long)]
    pub spectrum_decay: Option<f64>,
    #[arg(long)]
    pub residual_frequency: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub world: WorldArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Identity,
    #[value(name = "procrustes-cluster")]
    ProcrustesCluster,
    #[value(name = "procrustes-cluster+finetune")]
    ProcrustesClusterFinetune,
    Wasserstein,
    Oracle,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Max,
    Min,
}

impl From<ModeArg> for SymmetricMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Max => SymmetricMode::Max,
            ModeArg::Min => SymmetricMode::Min,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OtArg {
    Auto,
    Exact,
    Sinkhorn,
}

impl From<OtArg> for OtMode {
    fn from(m: OtArg) -> Self {
        match m {
            OtArg::Auto => OtMode::Auto,
            OtArg::Exact => OtMode::Exact,
            OtArg::Sinkhorn => OtMode::Sinkhorn,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Identity,
    ClusterCenters,
    Landmark,
}

impl From<InitArg> for WassersteinInit {
    fn from(m: InitArg) -> Self {
        match m {
            InitArg::Identity => WassersteinInit::Identity,
            InitArg::ClusterCenters => WassersteinInit::ClusterCenters,
            InitArg::Landmark => WassersteinInit::Landmark,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PoolingArg {
    PerRecord,
    MeanPerUser,
}

impl From<PoolingArg> for Pooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::PerRecord => Pooling::PerRecord,
            PoolingArg::MeanPerUser => Pooling::MeanPerUser,
        }
    }
}

/// Tuning knobs for the iterative methods.
#[derive(Debug, Args, Default)]
pub struct TuningArgs {
    /// Fine-tuning iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub gmm_components: Option<usize>,
    #[arg(long, value_enum)]
    pub symmetric_mode: Option<ModeArg>,
    #[arg(long)]
    pub initial_batch: Option<usize>,
    #[arg(long)]
    pub batch_growth_factor: Option<f64>,
    #[arg(long)]
    pub epochs_per_stage: Option<usize>,
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long, value_enum)]
    pub ot_mode: Option<OtArg>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long)]
    pub landmarks: Option<usize>,
    /// Force det = +1 for cluster-center Procrustes.
    #[arg(long)]
    pub proper_rotation: Option<bool>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Embeddings to be mapped (stolen target templates).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Embeddings defining the destination space (attacker's encoder).
    #[arg(long)]
    pub attack: Option<PathBuf>,
    /// Record pairing `target_row,attack_row`; required by `oracle`.
    #[arg(long)]
    pub pairing: Option<PathBuf>,
    /// JSON experiment config supplying `finetune`/`wasserstein` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Output file (default: <out-dir>/alignment.json).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Target templates that get spoofed.
    #[arg(long)]
    pub target: PathBuf,
    /// Alignment JSON as written by `align`.
    #[arg(long)]
    pub rotation: PathBuf,
    /// Attacker-space embeddings of the same records as `--target`.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Pairing `target_row,attack_row` into `--reference`; rows are taken
    /// in order when omitted.
    #[arg(long)]
    pub pairing: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PoolingArg::PerRecord)]
    pub pooling: PoolingArg,
    /// Output file (default: <out-dir>/report.json).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON experiment spec; flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Comma-separated method list, run in the given order.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<MethodArg>>,
    #[arg(long)]
    pub attack_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub pooling: Option<PoolingArg>,
    #[command(flatten)]
    pub world: WorldArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
pub struct GmmFitArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Components (default: one per class, else 8).
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Output file (default: <out-dir>/gmm.json).
    #[arg(long)]
    pub output: Option<PathBuf>,
}
