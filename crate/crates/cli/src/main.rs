//! `c2b`: simulate coded/blurred captures, train the fusion model, and
//! reconstruct videos from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod failure;

use failure::Failure;

#[derive(Debug, Parser)]
#[command(name = "c2b", version, about = "Video extraction from coded and fully exposed images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Pair,
    Coded,
    Blurred,
}

impl From<Variant> for c2b_model::ModelVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Pair => Self::Pair,
            Variant::Coded => Self::CodedOnly,
            Variant::Blurred => Self::BlurredOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Shape {
    Rect,
    Pan,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic moving-texture clips as frame directories.
    GenData(GenDataArgs),
    /// Simulate coded, fully exposed and bucket images from a clip.
    Simulate(SimulateArgs),
    /// Recover the low-resolution video from a coded or blurred image.
    Invert(InvertArgs),
    /// Train a model and write a checkpoint plus loss log.
    Train(TrainArgs),
    /// Reconstruct a full-resolution video with a trained checkpoint.
    Reconstruct(ReconstructArgs),
    /// Compare predicted and ground-truth frame directories.
    Eval(EvalArgs),
    /// Export the attention map of a pair checkpoint.
    Attention(AttentionArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 72)]
    height: usize,
    #[arg(long, default_value_t = 72)]
    width: usize,
    /// Frames per clip.
    #[arg(long, default_value_t = 9)]
    length: usize,
    /// Pixels per frame as `x,y`; positive x moves right.
    #[arg(long, default_value = "2,0", allow_hyphen_values = true)]
    velocity: String,
    #[arg(long, value_enum, default_value_t = Shape::Rect)]
    shape: Shape,
    /// Side of the moving square.
    #[arg(long, default_value_t = 36)]
    size: usize,
}

#[derive(Debug, Args)]
struct CodeArg {
    /// Exposure code file; defaults to the 3x3x9 sequential impulse.
    #[arg(long)]
    code: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Directory holding the clip's frames.
    #[arg(long)]
    frames: PathBuf,
    #[command(flatten)]
    code: CodeArg,
    #[arg(long)]
    out: PathBuf,
    /// Also write both complementary bucket images.
    #[arg(long)]
    buckets: bool,
}

#[derive(Debug, Args)]
struct InvertArgs {
    #[arg(long, conflicts_with = "blurred", required_unless_present = "blurred")]
    coded: Option<PathBuf>,
    #[arg(long)]
    blurred: Option<PathBuf>,
    #[command(flatten)]
    code: CodeArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Frame directory, or a directory of frame directories.
    #[arg(long)]
    frames: PathBuf,
    /// Output directory for `model.c2b` and `loss.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    variant: Option<Variant>,
    #[command(flatten)]
    code: CodeArg,
    /// Config override `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Write an intermediate checkpoint every this many steps.
    #[arg(long)]
    save_every: Option<u64>,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    coded: Option<PathBuf>,
    #[arg(long)]
    blurred: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AttentionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    coded: PathBuf,
    #[arg(long)]
    blurred: PathBuf,
    /// Output image path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run(cli: Cli) -> failure::Outcome {
    match cli.command {
        Command::GenData(a) => {
            let velocity = commands::parse_velocity(&a.velocity)?;
            let shape = match a.shape {
                Shape::Rect => c2b_train::SynthShape::Rect {
                    height: a.size,
                    width: a.size,
                },
                Shape::Pan => c2b_train::SynthShape::Pan,
            };
            let spec = c2b_train::SynthSpec {
                count: a.count,
                height: a.height,
                width: a.width,
                frames: a.length,
                shape,
                velocity,
                seed: a.seed,
            };
            commands::gen_data(&spec, &a.out)
        }
        Command::Simulate(a) => commands::simulate(&a.frames, a.code.code.as_deref(), &a.out, a.buckets),
        Command::Invert(a) => {
            let input = match (a.coded, a.blurred) {
                (Some(p), None) => commands::Capture::Coded(p),
                (None, Some(p)) => commands::Capture::Blurred(p),
                _ => return Err(Failure::usage("give exactly one of --coded and --blurred")),
            };
            commands::invert(&input, a.code.code.as_deref(), &a.out)
        }
        Command::Train(a) => commands::train(&commands::TrainRequest {
            config: a.config,
            frames: a.frames,
            out: a.out,
            seed: a.seed,
            variant: a.variant.map(Into::into),
            code: a.code.code,
            overrides: a.overrides,
            save_every: a.save_every,
        }),
        Command::Reconstruct(a) => {
            commands::reconstruct(&a.checkpoint, a.coded.as_deref(), a.blurred.as_deref(), &a.out)
        }
        Command::Eval(a) => commands::eval(&a.pred, &a.truth, a.out.as_deref()),
        Command::Attention(a) => commands::attention(&a.checkpoint, &a.coded, &a.blurred, &a.out),
        Command::Gradcheck(a) => commands::gradcheck(a.seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(failure::USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
