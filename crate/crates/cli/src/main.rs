//! `icad`: train, evaluate and apply image-completion anomaly detectors.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use icad_core::checkpoint::Checkpoint;
use icad_core::commands::{cmd_eval, cmd_infer, cmd_synth, cmd_train};
use icad_core::config::RunConfig;
use icad_core::model::ModelKind;
use icad_core::net::Architecture;
use icad_core::Error;

/// Relative output directories are resolved against this directory when set.
const OUTPUT_ROOT_VAR: &str = "ICAD_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "icad", version, about = "Surface anomaly detection by image completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a completion network or the autoencoder baseline.
    Train(Box<TrainArgs>),
    /// Scan a labelled test split and report pixel-level ROC / PR metrics.
    Eval(EvalArgs),
    /// Scan a single image and write its anomaly map.
    Infer(InferArgs),
    /// Generate a synthetic surface dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the desk-scale profile instead of the full-size defaults.
    #[arg(long)]
    desk: bool,
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    #[arg(long, value_parser = parse_arch)]
    arch: Option<Architecture>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    init_sigma: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    augment_rotation: Option<bool>,
    #[arg(long)]
    augment_flip: Option<bool>,
    #[arg(long)]
    augment_scale: Option<bool>,
    #[arg(long)]
    augment_brightness: Option<bool>,
    #[arg(long)]
    train_dir: Option<PathBuf>,
    #[arg(long)]
    val_dir: Option<PathBuf>,
    #[arg(long)]
    test_dir: Option<PathBuf>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    validate_every: Option<usize>,
    #[arg(long)]
    val_patches: Option<usize>,
    #[arg(long)]
    scan_batch: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the test directory recorded in the checkpoint.
    #[arg(long)]
    test_dir: Option<PathBuf>,
    #[arg(long, default_value = "eval")]
    out_dir: PathBuf,
    #[arg(long)]
    stride: Option<usize>,
    /// Skip the SVG curve plots.
    #[arg(long)]
    no_plots: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value = "infer")]
    out_dir: PathBuf,
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML dataset spec.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Replace the contents of a non-empty output directory.
    #[arg(long)]
    force: bool,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    match s {
        "completion" => Ok(ModelKind::Completion),
        "autoencoder" => Ok(ModelKind::Autoencoder),
        _ => Err(format!("unknown model '{s}' (completion | autoencoder)")),
    }
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    match s {
        "canonical" => Ok(Architecture::Canonical),
        "desk" => Ok(Architecture::Desk),
        _ => Err(format!("unknown architecture '{s}' (canonical | desk)")),
    }
}

fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if p.is_relative() => Path::new(&root).join(p),
        _ => p.to_path_buf(),
    }
}

macro_rules! override_fields {
    ($cfg:ident, $args:ident, $($field:ident),*) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })*
    };
}

fn run_config(args: &TrainArgs) -> Result<RunConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None if args.desk => RunConfig::desk(),
        None => RunConfig::default(),
    };
    override_fields!(
        cfg, args, model, arch, lambda, alpha, beta1, beta2, eps, init_sigma, batch_size, batches, seed,
        augment_rotation, augment_flip, augment_scale, augment_brightness, train_dir, val_dir, test_dir,
        stride, out_dir, checkpoint_every, validate_every, val_patches, scan_batch
    );
    cfg.out_dir = output_path(&cfg.out_dir);
    cfg.validate()?;
    Ok(cfg)
}

fn train(args: TrainArgs) -> Result<(), Error> {
    let cfg = run_config(&args)?;
    eprintln!(
        "training {:?} ({:?}) for {} batches of {} into {}",
        cfg.model,
        cfg.arch,
        cfg.batches,
        cfg.batch_size,
        cfg.out_dir.display()
    );
    let summary = cmd_train(&cfg)?;
    if let Some(last) = summary.losses.last() {
        println!("final train loss {:.6}", last.train_loss);
    }
    if let Some((batch, loss)) = summary.best {
        println!("best validation loss {loss:.6} at batch {batch}");
    }
    for p in &summary.checkpoints {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Error> {
    let test_dir = match args.test_dir {
        Some(d) => d,
        None => Checkpoint::load(&args.checkpoint)?.config.test_dir,
    };
    let out_dir = output_path(&args.out_dir);
    let report = cmd_eval(&args.checkpoint, &test_dir, &out_dir, args.stride, !args.no_plots)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let s = &report.summary;
    println!("AUROC {:.4}  AUPRC {:.4}", s.auroc, s.auprc);
    println!(
        "{} positive / {} negative pixels, {} unscored",
        s.positives, s.negatives, s.excluded_pixels
    );
    println!("results in {}", out_dir.display());
    Ok(())
}

fn infer(args: InferArgs) -> Result<(), Error> {
    let out_dir = output_path(&args.out_dir);
    let r = cmd_infer(&args.checkpoint, &args.image, &out_dir, args.stride)?;
    println!(
        "{} windows at {:.1} patches/s",
        r.windows, r.patches_per_second
    );
    println!("wrote {}", r.amap.display());
    println!("wrote {}", r.png.display());
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Error> {
    let out_dir = output_path(&args.out_dir);
    let spec = cmd_synth(&args.spec, &out_dir, args.force)?;
    println!(
        "wrote {} train, {} val, {} test images to {}",
        spec.n_train,
        spec.n_val,
        spec.n_test,
        out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(*a),
        Command::Eval(a) => eval(a),
        Command::Infer(a) => infer(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
