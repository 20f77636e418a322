//! `focusfuse`: fuse, sweep, synth and eval subcommands.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use focusfuse::pipeline::{DumpDirs, PipelineConfig, ReferenceChoice, SweepAxis};
use focusfuse::registration::Aggregation;
use focusfuse::FuseError;

#[derive(Parser)]
#[command(name = "focusfuse", version, about = "Registration-aware multi-focus image fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align and fuse a focal stack.
    Fuse(FuseArgs),
    /// Run the pipeline over a parameter grid and write a CSV table.
    Sweep(SweepArgs),
    /// Generate a synthetic misaligned stack with ground truth.
    Synth(SynthArgs),
    /// Score a fused image against synthetic ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Scale-space octaves.
    #[arg(long, default_value_t = 5)]
    octaves: usize,
    /// Detection layers per octave.
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Descriptor dimension (16, 36, 64, 100 or 144).
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Nearest/second-nearest distance ratio threshold.
    #[arg(long, default_value_t = focusfuse::matching::DEFAULT_RATIO)]
    ratio: f64,
    /// Matches kept for voting.
    #[arg(long, default_value_t = focusfuse::matching::DEFAULT_TOP_K)]
    top_k: usize,
    /// Hough cell side in pixels.
    #[arg(long, default_value_t = focusfuse::registration::DEFAULT_CELL_SIZE)]
    cell_size: f64,
    /// Inlier aggregation: l1 (median) or l2 (mean).
    #[arg(long, default_value = "l1")]
    agg: Aggregation,
    /// Detection threshold on the Hessian response.
    #[arg(long, default_value_t = focusfuse::features::DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Guided filter radius.
    #[arg(long, default_value_t = focusfuse::fusion::DEFAULT_GF_RADIUS)]
    gf_radius: usize,
    /// Guided filter regularisation.
    #[arg(long, default_value_t = focusfuse::fusion::DEFAULT_GF_EPSILON)]
    gf_eps: f64,
    /// Reference image: `auto` or a zero-based index.
    #[arg(long, default_value = "auto")]
    reference: ReferenceChoice,
    /// Drop sensed images that cannot be registered instead of failing.
    #[arg(long)]
    skip_unregistrable: bool,
}

impl ConfigArgs {
    fn config(&self, dumps: DumpDirs) -> PipelineConfig {
        PipelineConfig {
            octaves: self.octaves,
            layers: self.layers,
            descriptor_dim: self.dim,
            ratio_threshold: self.ratio,
            top_k: self.top_k,
            cell_size: self.cell_size,
            aggregation: self.agg,
            threshold: self.threshold,
            gf_radius: self.gf_radius,
            gf_epsilon: self.gf_eps,
            reference: self.reference,
            skip_unregistrable: self.skip_unregistrable,
            dumps,
            ..PipelineConfig::default()
        }
    }
}

#[derive(Args)]
struct FuseArgs {
    /// A directory of images or an explicit list of files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Fused image path.
    #[arg(long, default_value = "fused.png")]
    out: PathBuf,
    /// JSON run report path.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    save_saliency: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    save_weights: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    save_keypoints: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    save_responses: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Swept axis as `name=v1,v2,...` with name octaves, layers or dim; repeatable.
    #[arg(long = "axis", required = true)]
    axes: Vec<SweepAxis>,
    #[arg(long)]
    out_csv: PathBuf,
    /// Also write each grid point's fused image here.
    #[arg(long, value_name = "DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Base image; a procedural texture of `--size` is used when absent.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Side of the procedural base.
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 30)]
    max_shift: i64,
    #[arg(long, default_value_t = 3.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    fused: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// JSON report written by `fuse`.
    #[arg(long)]
    report: PathBuf,
    /// Stack manifest; defaults to `synth.json` beside the truth image.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Where to write the quality report; printed when absent.
    #[arg(long)]
    out_json: Option<PathBuf>,
}

fn exit_code(err: &FuseError) -> u8 {
    if err.is_registration_failure() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fuse(args) => commands::fuse(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Synth(args) => commands::synth(args),
        Command::Eval(args) => commands::eval(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_reach_the_pipeline_config() {
        let cli = Cli::try_parse_from([
            "focusfuse", "fuse", "stack", "--octaves", "3", "--dim", "36", "--agg", "l2", "--reference", "2",
            "--gf-eps", "0.01",
        ])
        .unwrap();
        let Command::Fuse(args) = cli.command else { panic!("expected fuse") };
        let cfg = args.config.config(DumpDirs::default());
        assert_eq!((cfg.octaves, cfg.layers, cfg.descriptor_dim), (3, 2, 36));
        assert_eq!(cfg.aggregation, Aggregation::L2);
        assert_eq!(cfg.reference, ReferenceChoice::Index(2));
        assert_eq!(cfg.gf_epsilon, 0.01);
        assert_eq!(cfg.ratio_threshold, PipelineConfig::default().ratio_threshold);
    }

    #[test]
    fn registration_failures_map_to_exit_three() {
        let err = FuseError::RegistrationFailed {
            image: "a.png".into(),
            reason: "no matches".into(),
        };
        assert_eq!(exit_code(&err), 3);
        assert_eq!(exit_code(&FuseError::InvalidConfig("x".into())), 2);
    }
}
