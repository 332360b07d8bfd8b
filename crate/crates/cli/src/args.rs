use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use handseg::annotation::{AnnotationParams, HsvThresholds};
use handseg::loss::{ContourInput, LossConfig};
use handseg::net::AttentionMode;
use handseg::train::TrainConfig;

/// Hand/object segmentation from depth maps.
///
/// Every subcommand also accepts `--config FILE`, a `key = value` file whose
/// keys are the long flag names (dashes or underscores). Flags given on the
/// command line take precedence over the file. Set `HANDSEG_LOG` (for
/// example `HANDSEG_LOG=info`) to change log verbosity.
#[derive(Debug, Parser)]
#[command(name = "handseg", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of depth/color/label triples.
    Synth(SynthArgs),
    /// Auto-annotate the frames of a manifest from depth and color.
    Annotate(AnnotateArgs),
    /// Train a segmentation network on the labelled frames of a manifest.
    Train(TrainArgs),
    /// Report segmentation metrics against ground-truth labels.
    Eval(EvalArgs),
    /// Compute every loss term for one logits/label pair.
    Loss(LossArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Serve the review API for a dataset directory.
    ReviewServe(ReviewServeArgs),
    /// Write the accepted frames of a reviewed dataset to a new manifest.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// `key = value` file with defaults for the other flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of frames.
    #[arg(long, default_value_t = 10)]
    pub frames: usize,
    /// Side length of the square frames, pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Seed of the scene generator.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; receives depth/, color/, label/ and manifest.tsv.
    #[arg(long)]
    pub out: PathBuf,
    /// Isolated color-noise pixels flipped per frame.
    #[arg(long, default_value_t = 0)]
    pub color_noise: usize,
    /// Skin-colored background slivers injected per frame.
    #[arg(long, default_value_t = 0)]
    pub slivers: usize,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// Input manifest; frames need a color image.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; receives auto/ and manifest.tsv.
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum segment area, pixels (segments must be larger).
    #[arg(long, default_value_t = AnnotationParams::default().theta)]
    pub theta: f64,
    /// Maximum segment compactness perimeter²/area (segments must be below).
    #[arg(long, default_value_t = AnnotationParams::default().phi)]
    pub phi: f64,
    /// Depth range kept behind the nearest valid pixel, millimetres.
    #[arg(long, default_value_t = AnnotationParams::default().range_mm)]
    pub range_mm: f64,
    /// Radius of the opening/closing structuring element.
    #[arg(long, default_value_t = AnnotationParams::default().morph_radius)]
    pub morph_radius: usize,
    /// Skin hue interval start, degrees; wraps through 0 when above --hue-hi.
    #[arg(long, default_value_t = HsvThresholds::default().hue_lo)]
    pub hue_lo: f64,
    /// Skin hue interval end, degrees.
    #[arg(long, default_value_t = HsvThresholds::default().hue_hi)]
    pub hue_hi: f64,
    /// Skin saturation lower bound, 0 to 1.
    #[arg(long, default_value_t = HsvThresholds::default().sat_lo)]
    pub sat_lo: f64,
    /// Skin saturation upper bound, 0 to 1.
    #[arg(long, default_value_t = HsvThresholds::default().sat_hi)]
    pub sat_hi: f64,
    /// Skin value lower bound, 0 to 1.
    #[arg(long, default_value_t = HsvThresholds::default().val_lo)]
    pub val_lo: f64,
    /// Skin value upper bound, 0 to 1.
    #[arg(long, default_value_t = HsvThresholds::default().val_hi)]
    pub val_hi: f64,
    /// Accepted for uniformity; annotation does not draw random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArg,
}

impl AnnotateArgs {
    pub fn params(&self) -> AnnotationParams {
        AnnotationParams {
            thresholds: HsvThresholds {
                hue_lo: self.hue_lo,
                hue_hi: self.hue_hi,
                sat_lo: self.sat_lo,
                sat_hi: self.sat_hi,
                val_lo: self.val_lo,
                val_hi: self.val_hi,
            },
            theta: self.theta,
            phi: self.phi,
            range_mm: self.range_mm,
            morph_radius: self.morph_radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContourSource {
    Softmax,
    RawLogits,
}

#[derive(Debug, Args)]
pub struct LossKeys {
    /// Cross-entropy class weights `background,hand,object`.
    #[arg(long, value_parser = parse_weights, default_value_t = Weights(LossConfig::default().class_weights))]
    pub class_weights: Weights,
    /// Weight of the cross-entropy term during fine-tuning.
    #[arg(long, default_value_t = LossConfig::default().alpha)]
    pub alpha: f64,
    /// Weight of the contour term during fine-tuning.
    #[arg(long, default_value_t = LossConfig::default().beta)]
    pub beta: f64,
    /// Standard deviation of the contour blur.
    #[arg(long, default_value_t = LossConfig::default().gaussian_sigma)]
    pub gaussian_sigma: f64,
    /// Odd side length of the contour blur kernel.
    #[arg(long, default_value_t = LossConfig::default().gaussian_size)]
    pub gaussian_size: usize,
    /// Added under the square root of the edge magnitude.
    #[arg(long, default_value_t = LossConfig::default().sobel_epsilon)]
    pub sobel_epsilon: f64,
    /// Prediction-side input of the contour term.
    #[arg(long, value_enum, default_value_t = ContourSource::Softmax)]
    pub contour_input: ContourSource,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights(pub [f64; 3]);

impl std::fmt::Display for Weights {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let [a, b, c] = self.0;
        write!(f, "{a},{b},{c}")
    }
}

fn parse_weights(s: &str) -> Result<Weights, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v)
        .map(Weights)
        .map_err(|v| format!("expected 3 comma-separated weights, got {}", v.len()))
}

impl LossKeys {
    pub fn config(&self) -> LossConfig {
        LossConfig {
            class_weights: self.class_weights.0,
            alpha: self.alpha,
            beta: self.beta,
            gaussian_sigma: self.gaussian_sigma,
            gaussian_size: self.gaussian_size,
            sobel_epsilon: self.sobel_epsilon,
            contour_input: match self.contour_input {
                ContourSource::Softmax => ContourInput::Softmax,
                ContourSource::RawLogits => ContourInput::RawLogits,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Small network and short schedule for CPU runs.
    Toy,
    /// Six-level network and long schedule.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Attention {
    Dense,
    Disabled,
}

impl From<Attention> for AttentionMode {
    fn from(a: Attention) -> Self {
        match a {
            Attention::Dense => AttentionMode::Dense,
            Attention::Disabled => AttentionMode::Disabled,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest; frames need a label and must not be rejected.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for checkpoints and the JSON-lines log.
    #[arg(long)]
    pub out: PathBuf,
    /// Network size and default schedule.
    #[arg(long, value_enum, default_value_t = Preset::Toy)]
    pub preset: Preset,
    /// Skip-connection attention; `disabled` trains the ablation.
    #[arg(long, value_enum, default_value_t = Attention::Dense)]
    pub attention: Attention,
    /// Seed of initialization, shuffling and augmentation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Frames per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr0: Option<f64>,
    /// Learning-rate multiplier applied every --decay-every steps.
    #[arg(long)]
    pub decay_factor: Option<f64>,
    /// Optimizer steps between learning-rate decays.
    #[arg(long)]
    pub decay_every: Option<u64>,
    /// Epochs of cross-entropy training.
    #[arg(long)]
    pub epochs_base: Option<u32>,
    /// Epochs of fine-tuning with the contour term.
    #[arg(long)]
    pub epochs_finetune: Option<u32>,
    /// Maximum absolute augmentation rotation, degrees.
    #[arg(long)]
    pub rotation_deg: Option<f64>,
    /// Standard deviation of augmentation depth noise, millimetres.
    #[arg(long)]
    pub depth_noise_mm: Option<f64>,
    /// Weight of the squared-norm penalty on normalization parameters.
    #[arg(long)]
    pub norm_penalty: Option<f64>,
    #[command(flatten)]
    pub loss: LossKeys,
    #[command(flatten)]
    pub config: ConfigArg,
}

impl TrainArgs {
    pub fn train_config(&self) -> TrainConfig {
        let base = match self.preset {
            Preset::Toy => TrainConfig::toy(),
            Preset::Full => TrainConfig::full(),
        };
        TrainConfig {
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr0: self.lr0.unwrap_or(base.lr0),
            decay_factor: self.decay_factor.unwrap_or(base.decay_factor),
            decay_every_steps: self.decay_every.unwrap_or(base.decay_every_steps),
            epochs_base: self.epochs_base.unwrap_or(base.epochs_base),
            epochs_finetune: self.epochs_finetune.unwrap_or(base.epochs_finetune),
            rotation_range_deg: self.rotation_deg.unwrap_or(base.rotation_range_deg),
            depth_noise_sigma_mm: self.depth_noise_mm.unwrap_or(base.depth_noise_sigma_mm),
            norm_penalty_weight: self.norm_penalty.unwrap_or(base.norm_penalty_weight),
            seed: self.seed,
            loss: self.loss.config(),
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Manifest with ground-truth labels.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Predict with this checkpoint.
    #[arg(long, conflicts_with = "pred_manifest", required_unless_present = "pred_manifest")]
    pub checkpoint: Option<PathBuf>,
    /// Use the labels of this manifest as predictions, matched by frame id.
    #[arg(long)]
    pub pred_manifest: Option<PathBuf>,
    /// Also write the report as JSON.
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
    /// Accepted for uniformity; evaluation does not draw random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Checkpoint container holding one N×3×H×W tensor of logits.
    #[arg(long, conflicts_with_all = ["checkpoint", "depth"], required_unless_present = "checkpoint")]
    pub logits: Option<PathBuf>,
    /// Compute logits with this checkpoint instead (needs --depth).
    #[arg(long, requires = "depth")]
    pub checkpoint: Option<PathBuf>,
    /// Depth PNG fed to --checkpoint.
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Label PNG.
    #[arg(long)]
    pub label: PathBuf,
    /// Accepted for uniformity; this command draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub loss: LossKeys,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seed of the random inputs and weights.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct ReviewServeArgs {
    /// Dataset directory containing manifest.tsv.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Port to bind; 0 picks a free one.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory of client assets served for non-API paths.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Accepted for uniformity; this command draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Reviewed dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output manifest path.
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for uniformity; this command draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArg,
}

/// Problems with the command line or config file, reported with exit code 1.
#[derive(Debug)]
pub enum ArgsError {
    Clap(clap::Error),
    Config(String),
}

fn command() -> clap::Command {
    use clap::CommandFactory;
    Cli::command().mut_subcommands(|s| s.args_override_self(true))
}

/// Parses `argv`, splicing in entries from any `--config` file ahead of the
/// explicit flags so that the latter win.
pub fn parse(argv: Vec<OsString>) -> Result<Cli, ArgsError> {
    use clap::FromArgMatches;
    let argv = expand_config(argv)?;
    let matches = command().try_get_matches_from(argv).map_err(ArgsError::Clap)?;
    Cli::from_arg_matches(&matches).map_err(ArgsError::Clap)
}

fn config_path(rest: &[OsString]) -> Result<Option<PathBuf>, ArgsError> {
    let mut found = None;
    let mut it = rest.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        let path = if s == "--config" {
            match it.next() {
                Some(p) => PathBuf::from(p),
                None => return Ok(None),
            }
        } else if let Some(p) = s.strip_prefix("--config=") {
            PathBuf::from(p)
        } else {
            continue;
        };
        if found.replace(path).is_some() {
            return Err(ArgsError::Config("--config given more than once".into()));
        }
    }
    Ok(found)
}

fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, ArgsError> {
    let Some(sub_name) = argv.get(1).map(|s| s.to_string_lossy().into_owned()) else {
        return Ok(argv);
    };
    let cmd = command();
    let Some(sub) = cmd.find_subcommand(&sub_name) else {
        return Ok(argv);
    };
    let Some(path) = config_path(&argv[2..])? else {
        return Ok(argv);
    };
    let entries = handseg::io::load_config(&path).map_err(|e| ArgsError::Config(e.to_string()))?;
    let mut injected = Vec::new();
    for (key, value) in entries {
        let long = key.replace('_', "-");
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(long.as_str()) && long != "config" && long != "help")
            .ok_or_else(|| ArgsError::Config(format!("{}: unknown key `{key}` for `{sub_name}`", path.display())))?;
        if arg.get_action().takes_values() {
            injected.push(OsString::from(format!("--{long}={value}")));
        } else {
            match value.as_str() {
                "true" => injected.push(OsString::from(format!("--{long}"))),
                "false" => {}
                _ => {
                    return Err(ArgsError::Config(format!(
                        "{}: key `{key}` takes true or false, got `{value}`",
                        path.display()
                    )))
                }
            }
        }
    }
    let mut out = argv[..2].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}
