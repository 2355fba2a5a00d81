//! Flag surface.

use std::path::PathBuf;

use clap::builder::PossibleValuesParser;
use clap::{Args, Parser, Subcommand, ValueEnum};
use swag_core::diagnostics::TrackRule;
use swag_core::imageio::ResizeMode;
use swag_core::optim::{Init, Optimizer};
use swag_core::zoo::Preset;

#[derive(Debug, Parser)]
#[command(name = "swag", version, about = "Style transfer with activation smoothing, plus activation diagnostics")]
pub struct Cli {
    /// Worker threads for independent (image, seed) pairs.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub jobs: u32,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize an image to match a content image's features and a style image's Gram matrices.
    Stylize(StylizeArgs),
    /// Activation and Gram statistics over a directory of images.
    Probe(ProbeArgs),
    /// Activation values at random image positions across the stage taps.
    Tracks(TracksArgs),
    /// Invert one tap's features starting from noise.
    Reconstruct(ReconstructArgs),
    /// Style-only optimization from noise.
    Synthesize(SynthesizeArgs),
    /// Re-run the job recorded in a manifest.json.
    Replay(ReplayArgs),
}

fn arch_parser() -> PossibleValuesParser {
    PossibleValuesParser::new(Preset::ALL.map(|p| p.name()))
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("invalid dimension {v:?}"))
    };
    Ok((parse(w)?, parse(h)?))
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    #[arg(long, value_parser = arch_parser())]
    pub arch: String,
    /// Seed for network initialization and noise images.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = swag_core::zoo::DESK_WIDTH_SCALE)]
    pub width_scale: f64,
    /// Weight bundle to load instead of random initialization.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ImageArgs {
    /// Working resolution; inputs are resized to it.
    #[arg(long, value_parser = parse_size, default_value = "128x128")]
    pub size: (usize, usize),
    #[arg(long, value_enum, default_value_t = ResizeArg::Bilinear)]
    pub resize: ResizeArg,
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Keep pixels inside the displayable range after every step.
    #[arg(long)]
    pub clamp: bool,
}

#[derive(Debug, Clone, Args)]
pub struct LossArgs {
    /// Use the softmax-smoothed (SWAG) losses.
    #[arg(long)]
    pub swag: bool,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Style weight; defaults to the architecture family's value.
    #[arg(long)]
    pub beta: Option<f64>,
    /// SWAG softmax temperature.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
}

#[derive(Debug, Args)]
pub struct StylizeArgs {
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub image: ImageArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, value_enum, default_value_t = InitArg::Content)]
    pub init: InitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub style: PathBuf,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub image: ImageArgs,
    #[command(flatten)]
    pub loss: LossArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub tap: String,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub image_opts: ImageArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, value_enum, default_value_t = InitArg::Noise)]
    pub init: InitArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long, value_parser = arch_parser())]
    pub arch: String,
    #[arg(long)]
    pub images: PathBuf,
    /// Also emit statistics of the softmax-smoothed features.
    #[arg(long)]
    pub swag_stats: bool,
    /// Number of network seeds, starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = swag_core::zoo::DESK_WIDTH_SCALE)]
    pub width_scale: f64,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Comma-separated taps; defaults to the last tap of each stage.
    #[arg(long, value_delimiter = ',')]
    pub taps: Vec<String>,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[command(flatten)]
    pub image: ImageArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TracksArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub image_opts: ImageArgs,
    /// Number of sampled positions.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Comma-separated taps; defaults to the last tap of each stage.
    #[arg(long, value_delimiter = ',')]
    pub taps: Vec<String>,
    #[arg(long, value_enum, default_value_t = RuleArg::ChannelMax)]
    pub rule: RuleArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ResizeArg {
    Nearest,
    Bilinear,
}

impl From<ResizeArg> for ResizeMode {
    fn from(r: ResizeArg) -> Self {
        match r {
            ResizeArg::Nearest => ResizeMode::Nearest,
            ResizeArg::Bilinear => ResizeMode::Bilinear,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    Content,
    Noise,
}

impl From<InitArg> for Init {
    fn from(i: InitArg) -> Self {
        match i {
            InitArg::Content => Init::Content,
            InitArg::Noise => Init::Noise,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Lbfgs,
}

impl OptimArgs {
    pub fn optimizer(&self) -> Optimizer {
        match (self.optimizer, Optimizer::adam()) {
            (OptimizerArg::Adam, Optimizer::Adam { beta1, beta2, eps, .. }) => Optimizer::Adam {
                lr: self.lr,
                beta1,
                beta2,
                eps,
            },
            _ => Optimizer::lbfgs(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RuleArg {
    ChannelMax,
    RandomChannel,
}

impl From<RuleArg> for TrackRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::ChannelMax => TrackRule::ChannelMax,
            RuleArg::RandomChannel => TrackRule::RandomChannel,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("128x96"), Ok((128, 96)));
        assert!(parse_size("128").is_err());
        assert!(parse_size("0x4").is_err());
    }

    #[test]
    fn cli_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
