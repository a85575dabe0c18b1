use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;

/// Face deblurring with semantic priors.
#[derive(Parser, Debug)]
#[command(name = "facedeblur", version, about)]
struct Cli {
    /// Seed for every random choice; commands fall back to their config files' seed when unset.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a bank of camera-shake blur kernels.
    SynthKernels(SynthKernels),
    /// Render labelled synthetic faces with landmarks.
    SynthFaces(SynthFaces),
    /// Align faces and write an image x kernel dataset manifest.
    BuildDataset(BuildDataset),
    /// Train (or fine-tune) the face parsing network.
    TrainParse(TrainParse),
    /// Per-class parsing F-scores in a component x setting table.
    EvalParse(EvalParse),
    /// Train the two-scale deblurring generator.
    TrainDeblur(TrainDeblur),
    /// PSNR/SSIM and identity distances over a dataset.
    Evaluate(Evaluate),
    /// Deblur one image.
    Deblur(Deblur),
    /// Aggregate evaluation outputs and draw plots.
    Report(Report),
}

#[derive(Args, Debug, Serialize)]
struct SynthKernels {
    /// Number of kernels.
    #[arg(long, default_value_t = 80)]
    count: usize,
    /// Odd kernel sizes, assigned round-robin.
    #[arg(long, value_delimiter = ',', default_value = "13,15,17,19,21,23,25,27")]
    sizes: Vec<usize>,
    /// Output bank file.
    #[arg(long)]
    out: PathBuf,
    /// Also write each kernel as a grayscale PNG into this directory.
    #[arg(long)]
    dump_png: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SynthFaces {
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 4)]
    identities: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Writes clear/, labels/ and landmarks/ under this directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct BuildDataset {
    /// Directory of clear face PNGs named `<identity>_<n>.png`.
    #[arg(long)]
    clear: PathBuf,
    /// Directory of label-map PNGs with matching stems.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Directory of five-point landmark files with matching stems.
    #[arg(long)]
    landmarks: Option<PathBuf>,
    /// Kernel bank file.
    #[arg(long)]
    kernels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Kernels per image; the full cross product when omitted.
    #[arg(long)]
    pairs_per_image: Option<usize>,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long, default_value_t = 0.01)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 128)]
    image_size: usize,
    /// Write the blurred images as PNGs next to the manifest.
    #[arg(long)]
    materialize: bool,
}

#[derive(Args, Debug, Serialize)]
struct TrainParse {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training config (TOML or JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from this parsing checkpoint (fine-tuning).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Train on the degraded images with unchanged labels.
    #[arg(long)]
    blurred: bool,
    /// Iterations [config default: 60000].
    #[arg(long)]
    iters: Option<u64>,
    /// Learning rate [config default: 5e-6].
    #[arg(long)]
    lr: Option<f64>,
    /// Batch size [config default: 16].
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct EvalParse {
    #[arg(long)]
    manifest: PathBuf,
    /// Parser trained on clear images.
    #[arg(long)]
    pretrained: PathBuf,
    /// Parser fine-tuned on blurred images.
    #[arg(long)]
    finetuned: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    report: PathBuf,
    /// Print the table as JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
enum Semantics {
    Parser,
    GroundTruth,
    Uniform,
}

#[derive(Args, Debug, Serialize)]
struct TrainDeblur {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training config (TOML or JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a training-state checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Frozen parsing checkpoint; required for parser semantics.
    #[arg(long)]
    parse_ckpt: Option<PathBuf>,
    /// Semantic input source [config default: parser].
    #[arg(long, value_enum)]
    semantics: Option<Semantics>,
    /// Total iterations [config default: 17000000].
    #[arg(long)]
    iters: Option<u64>,
    /// Batch size [config default: 16].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Generator learning rate [config default: 4e-5].
    #[arg(long)]
    lr: Option<f64>,
    /// Use every kernel size from the start.
    #[arg(long)]
    no_incremental: bool,
}

#[derive(Args, Debug, Serialize)]
struct Evaluate {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    gen_ckpt: PathBuf,
    /// Parsing checkpoint for the semantic input; uniform semantics when omitted.
    #[arg(long)]
    parse_ckpt: Option<PathBuf>,
    /// Writes metrics.csv, metrics.json and identity.csv here.
    #[arg(long)]
    out: PathBuf,
    /// Print the aggregates as JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug, Serialize)]
#[command(group = clap::ArgGroup::new("semantic_input").required(true).args(["parse_ckpt", "semantics"]))]
struct Deblur {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    gen_ckpt: PathBuf,
    #[arg(long)]
    parse_ckpt: Option<PathBuf>,
    /// Label-map PNG used as the semantic input.
    #[arg(long)]
    semantics: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct Report {
    /// `name=metrics.csv`, repeatable.
    #[arg(long = "metrics", value_parser = named_path)]
    metrics: Vec<(String, PathBuf)>,
    /// `name=identity.csv`, repeatable.
    #[arg(long = "identity", value_parser = named_path)]
    identity: Vec<(String, PathBuf)>,
    #[arg(long)]
    out: PathBuf,
    /// Draw PSNR/SSIM-vs-kernel-size and identity-distance plots.
    #[arg(long)]
    plot: bool,
    /// Print the summary as JSON on stdout.
    #[arg(long)]
    json: bool,
}

fn named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected name=path, got `{s}`")),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp_secs().init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
