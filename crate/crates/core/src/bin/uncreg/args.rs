use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "uncreg",
    version,
    about = "Uncertainty propagation for coordinate-regression registration",
    propagate_version = true
)]
pub struct Cli {
    /// Worker threads (outputs do not depend on this)
    #[arg(long, global = true, env = "UNCREG_THREADS")]
    pub threads: Option<usize>,

    /// `key = value` file supplying defaults for the subcommand's flags
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic ground truth and noisy coordinate predictions
    Synth {
        #[command(subcommand)]
        cmd: SynthCmd,
    },
    /// Fit a transformation posterior to a mean/std field
    Fit {
        #[command(subcommand)]
        cmd: FitCmd,
    },
    /// Draw transformation samples from a fitted posterior
    Sample(SampleArgs),
    /// Per-coefficient posterior variance diag(c^Σ)
    Variance(VarianceArgs),
    /// Leading modes of variation of a parametric posterior
    Modes(ModesArgs),
    /// Warp an atlas segmentation through one field or a sample ensemble
    WarpLabels(WarpArgs),
    /// Per-voxel label entropy of a label distribution
    Entropy(EntropyArgs),
    /// Evaluation statistics
    Metrics {
        #[command(subcommand)]
        cmd: MetricsCmd,
    },
    /// Training-loss evaluators
    Loss {
        #[command(subcommand)]
        cmd: LossCmd,
    },
    /// Convert containers or assemble a mean/std field
    Convert(ConvertArgs),
}

#[derive(Debug, Subcommand)]
pub enum SynthCmd {
    /// Generate a synthetic data set into a directory
    Gen(SynthGenArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Pattern {
    Constant,
    Radial,
    Cortex,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CalibrationArg {
    Calibrated,
    Scaled,
    Flat,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AtlasArg {
    Shells,
    Stripes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Uaf,
    Nii,
}

impl Format {
    pub fn ext(self) -> &'static str {
        match self {
            Format::Uaf => "uaf",
            Format::Nii => "nii",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// JSON synthesis spec; other geometry/noise flags are ignored when given
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Voxels per axis
    #[arg(long, default_value_t = 32)]
    pub dims: usize,
    /// Voxel spacing (mm)
    #[arg(long, default_value_t = 2.0)]
    pub spacing: f64,
    /// Radius of the spherical mask (mm)
    #[arg(long, default_value_t = 28.0)]
    pub radius: f64,
    /// Row-major 3×4 affine "a11,a12,a13,t1,a21,...,t3"
    #[arg(long, allow_hyphen_values = true)]
    pub affine: Option<String>,
    /// Number of random Gaussian bumps added to the affine map
    #[arg(long, default_value_t = 0)]
    pub bumps: usize,
    #[arg(long, value_enum, default_value_t = Pattern::Cortex)]
    pub pattern: Pattern,
    #[arg(long, default_value_t = 0.5)]
    pub sigma_min: f64,
    #[arg(long, default_value_t = 5.0)]
    pub sigma_max: f64,
    /// Cortex shell position as a fraction of the mask radius
    #[arg(long, default_value_t = 0.85)]
    pub shell_fraction: f64,
    /// Cortex shell width (mm)
    #[arg(long, default_value_t = 3.0)]
    pub shell_width: f64,
    #[arg(long, value_enum, default_value_t = CalibrationArg::Calibrated)]
    pub calibration: CalibrationArg,
    /// Reported std = factor × true σ (with --calibration scaled)
    #[arg(long, default_value_t = 2.0)]
    pub calibration_factor: f64,
    #[arg(long, value_enum, default_value_t = AtlasArg::Shells)]
    pub atlas: AtlasArg,
    #[arg(long, default_value_t = 4)]
    pub labels: u16,
    /// Stripe width (mm) for the striped atlas
    #[arg(long, default_value_t = 6.0)]
    pub stripe_width: f64,
    #[arg(long, value_enum, default_value_t = Format::Uaf)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum FitCmd {
    /// Affine weighted least squares
    Affine(FitArgs),
    /// Cubic B-spline weighted least squares
    Bspline(BsplineArgs),
    /// Kernel-smoothed (non-parametric) estimate
    Demons(DemonsArgs),
}

#[derive(Debug, Args)]
pub struct Weighting {
    /// Weight voxels by their precision σ⁻² (default)
    #[arg(long, conflicts_with = "unweighted")]
    pub weighted: bool,
    /// Ordinary least squares (all precisions 1)
    #[arg(long)]
    pub unweighted: bool,
}

impl Weighting {
    pub fn is_weighted(&self) -> bool {
        !self.unweighted
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Mean/std field (6 channels plus mask companion)
    #[arg(long)]
    pub field: PathBuf,
    /// Posterior file to write
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub weighting: Weighting,
    /// Tikhonov ε [default: 1e-8·trace(φᵀWφ)/B]
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Also write the most likely field φc^μ
    #[arg(long, value_name = "FILE")]
    pub field_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Linear {
    /// B-spline columns only
    None,
    /// Affine and B-spline columns fitted together
    Joint,
    /// Affine first, B-spline on the residual (`<out>.affine.utp` holds the affine part)
    Sequential,
}

#[derive(Debug, Args)]
pub struct BsplineArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Control-point spacing (mm)
    #[arg(long, default_value_t = 10.0)]
    pub spacing: f64,
    #[arg(long, value_enum, default_value_t = Linear::None)]
    pub linear: Linear,
    /// Refuse bases with more columns than this
    #[arg(long, default_value_t = 200_000)]
    pub max_columns: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Plain,
    Precision,
}

#[derive(Debug, Args)]
pub struct DemonsArgs {
    #[arg(long)]
    pub field: PathBuf,
    /// Output prefix: writes <out>.mean.uaf, <out>.var.uaf, <out>.mask.uaf, <out>.meta
    #[arg(long)]
    pub out: PathBuf,
    /// Gaussian kernel standard deviation (mm)
    #[arg(long, default_value_t = 3.0)]
    pub kernel_sigma: f64,
    /// Kernel cut-off in multiples of its sigma
    #[arg(long, default_value_t = 3.0)]
    pub truncation: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Precision)]
    pub mode: ModeArg,
    /// Precision mode: report (K⊙K)⋆σ² instead of the estimator's own variance
    #[arg(long)]
    pub plain_kernel_variance: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Parametric posterior
    #[arg(long, required_unless_present = "demons", conflicts_with = "demons")]
    pub posterior: Option<PathBuf>,
    /// Non-parametric posterior prefix
    #[arg(long)]
    pub demons: Option<PathBuf>,
    /// The field the posterior was fitted to
    #[arg(long)]
    pub field: PathBuf,
    /// Number of samples
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    /// Samples file (3 channels per sample)
    #[arg(long)]
    pub out: PathBuf,
    /// Perturb with σ²⊙g instead of σ⊙g
    #[arg(long)]
    pub literal_paper_noise: bool,
    /// Also write the sample mean/std field
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VarianceArgs {
    #[arg(long)]
    pub posterior: PathBuf,
    /// `.txt` for a table; otherwise a volume on the control-point lattice (B-spline only)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ModesArgs {
    #[arg(long)]
    pub posterior: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    /// Number of modes
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub oversample: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Displacement scales k
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "-3,-2,-1,0,1,2,3"
    )]
    pub scales: Vec<f64>,
    /// Scale modes by √λ instead of λ
    #[arg(long)]
    pub sqrt_scaling: bool,
}

#[derive(Debug, Args)]
pub struct WarpArgs {
    /// Single transformation field (3 channels)
    #[arg(long, required_unless_present = "samples", conflicts_with = "samples")]
    pub field: Option<PathBuf>,
    /// Sample ensemble (3·S channels); writes a label distribution
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub atlas: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// With --samples: also write the majority-vote segmentation
    #[arg(long, requires = "samples")]
    pub majority: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EntropyArgs {
    /// Label distribution
    #[arg(long)]
    pub dist: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub majority: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum MetricsCmd {
    /// Per-label and mean Dice
    Dice(DiceArgs),
    /// Spearman/Pearson correlation of variance with squared error
    Corr(CorrArgs),
}

#[derive(Debug, Args)]
pub struct DiceArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Labels to score [default: all non-background labels present]
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<u16>>,
}

#[derive(Debug, Args)]
pub struct CorrArgs {
    /// Mean/std field
    #[arg(long, required_unless_present = "demons", conflicts_with = "demons")]
    pub field: Option<PathBuf>,
    /// Non-parametric posterior prefix
    #[arg(long)]
    pub demons: Option<PathBuf>,
    /// True coordinates (3 channels)
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum LossCmd {
    Coord(LossCoordArgs),
    Mask(LossMaskArgs),
    Seg(LossSegArgs),
    Uncer(LossUncerArgs),
    Total(LossTotalArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormArg {
    L1,
    L2,
}

#[derive(Debug, Args)]
pub struct LossCoordArgs {
    /// Predicted coordinates (3 channels)
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, value_enum, default_value_t = NormArg::L2)]
    pub norm: NormArg,
}

#[derive(Debug, Args)]
pub struct LossMaskArgs {
    /// Foreground probabilities (1 channel)
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Debug, Args)]
pub struct LossSegArgs {
    #[arg(long)]
    pub warped: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LikelihoodArg {
    Gaussian,
    Laplace,
}

#[derive(Debug, Args)]
pub struct LossUncerArgs {
    /// Mean/std field
    #[arg(long)]
    pub field: PathBuf,
    /// Log-variance channels (3) replacing the field's std
    #[arg(long)]
    pub log_variance: Option<PathBuf>,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, value_enum, default_value_t = LikelihoodArg::Gaussian)]
    pub likelihood: LikelihoodArg,
}

#[derive(Debug, Args)]
pub struct LossTotalArgs {
    #[arg(long)]
    pub coord: f64,
    #[arg(long)]
    pub mask_loss: Option<f64>,
    #[arg(long)]
    pub seg: Option<f64>,
    #[arg(long)]
    pub uncer: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub lambda_mask: f64,
    #[arg(long, default_value_t = 5.0)]
    pub lambda_seg: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda_uncer: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Float,
    Label,
    Mask,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Volume to re-encode into the container implied by --out
    #[arg(long = "in", conflicts_with_all = ["mean", "std", "log_variance", "mask"])]
    pub input: Option<PathBuf>,
    /// Value type used for the output container
    #[arg(long, value_enum, default_value_t = KindArg::Float)]
    pub kind: KindArg,
    /// Mean coordinates (3 channels) for assembling a field
    #[arg(long, required_unless_present = "input", requires = "mask")]
    pub mean: Option<PathBuf>,
    /// Standard deviations (3 channels)
    #[arg(long, conflicts_with = "log_variance")]
    pub std: Option<PathBuf>,
    /// Log-variances (3 channels), converted to std = exp(v/2)
    #[arg(long)]
    pub log_variance: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
