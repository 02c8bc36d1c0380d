use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use preimage_forge::cnn::{
    save_model, synth_dataset, train, Architecture, Dataset, TrainReport,
    REFERENCE_DATASET_SIZE, REFERENCE_TRAIN_SIZE,
};
use preimage_forge::config::{ObjectiveName, RunConfig};
use preimage_forge::demons::metrics_csv;
use preimage_forge::evaluate::{evaluate, EvaluateOptions, Preset};
use preimage_forge::grid::encode_ppm;
use preimage_forge::kernels::{
    dirac, fitted_kernel, smoothing_kernel, SmoothingKind, DEFAULT_SUPPORT_THRESHOLD,
};
use preimage_forge::{Error, Image};

const THREADS_VAR: &str = "PREIMAGE_FORGE_THREADS";

#[derive(Parser)]
#[command(name = "preimage-forge", version, about = "Regularized pre-images of small CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a smoothing kernel and write it as CSV plus a PGM rendering.
    Kernel(KernelArgs),
    /// Train a reference architecture on the synthetic shape dataset.
    Train(TrainArgs),
    /// Activation maximization from a JSON run config.
    Maximize(RunArgs),
    /// Feature inversion from a JSON run config.
    Invert(RunArgs),
    /// Cross-model classification of reconstructions.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelKindArg {
    Dirac,
    Gaussian,
    Sobolev,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, value_enum)]
    kind: KernelKindArg,
    /// Odd window side.
    #[arg(long)]
    side: usize,
    /// Explicit σ (gaussian) or γ (sobolev); overrides the threshold fit.
    #[arg(long, visible_aliases = ["sigma", "gamma"])]
    parameter: Option<f64>,
    /// Largest admissible weight on the outer ring when fitting.
    #[arg(long, default_value_t = DEFAULT_SUPPORT_THRESHOLD)]
    threshold: f64,
    /// CSV destination; the rendering goes next to it with a `.pgm` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    arch: Architecture,
    /// Seed of the dataset and of the weight initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// JSON accuracy report.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Also write the dataset as PGM files plus a label index.
    #[arg(long)]
    dump_dataset: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model_a: PathBuf,
    #[arg(long)]
    model_b: PathBuf,
    #[arg(long, default_value_t = 30)]
    n_images: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Presets to run, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    presets: Option<Vec<Preset>>,
    #[arg(long)]
    layer_a: Option<usize>,
    #[arg(long)]
    layer_b: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    /// JSON report destination; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    arch: Architecture,
    seed: u64,
    train_size: usize,
    val_size: usize,
    train_acc: f64,
    val_acc: Option<f64>,
    #[serde(flatten)]
    report: &'a TrainReport,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Kernel(a) => cmd_kernel(a),
        Command::Train(a) => cmd_train(a),
        Command::Maximize(a) => cmd_run(a, ObjectiveName::ActivationMax),
        Command::Invert(a) => cmd_run(a, ObjectiveName::Inversion),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Numerical(_) => 3,
                _ => 2,
            })
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("{THREADS_VAR} must be a non-negative integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn write_text(path: &Path, text: &str) -> preimage_forge::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn cmd_kernel(a: KernelArgs) -> preimage_forge::Result<()> {
    let kernel = match (a.kind, a.parameter) {
        (KernelKindArg::Dirac, _) => dirac(a.side)?,
        (KernelKindArg::Gaussian, Some(p)) => smoothing_kernel(SmoothingKind::Gaussian, a.side, p)?,
        (KernelKindArg::Sobolev, Some(p)) => smoothing_kernel(SmoothingKind::Sobolev, a.side, p)?,
        (KernelKindArg::Gaussian, None) => fitted_kernel(SmoothingKind::Gaussian, a.side, a.threshold)?,
        (KernelKindArg::Sobolev, None) => fitted_kernel(SmoothingKind::Sobolev, a.side, a.threshold)?,
    };
    write_text(&a.out, &kernel.to_csv())?;
    let image = kernel.to_image();
    let lo = image.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = image.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let rendering = Image::new(
        kernel.side(),
        kernel.side(),
        1,
        image
            .as_slice()
            .iter()
            .map(|w| if span > 0.0 { (w - lo) / span } else { 1.0 })
            .collect(),
    )?;
    encode_ppm(&rendering, a.out.with_extension("pgm"))?;
    println!(
        "{:?} kernel, side {}, parameter {}, center {}, ring max {}",
        kernel.kind(),
        kernel.side(),
        kernel.parameter(),
        kernel.center_weight(),
        kernel.ring_max()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> preimage_forge::Result<()> {
    let data = synth_dataset(a.seed, REFERENCE_DATASET_SIZE)?;
    if let Some(dir) = &a.dump_dataset {
        data.save_dir(dir)?;
    }
    let (train_set, val_set): (Dataset, Dataset) = data.split_at(REFERENCE_TRAIN_SIZE);
    let mut options = a.arch.train_options();
    options.seed = a.seed;
    if let Some(e) = a.epochs {
        options.epochs = e;
    }
    let net = a.arch.build(a.seed)?;
    let (net, report) = train(&net, &train_set, Some(&val_set), &options)?;
    save_model(&net, &a.out)?;
    let summary = TrainSummary {
        arch: a.arch,
        seed: a.seed,
        train_size: train_set.len(),
        val_size: val_set.len(),
        train_acc: report.final_train_acc(),
        val_acc: report.final_val_acc(),
        report: &report,
    };
    if let Some(path) = &a.report {
        write_text(path, &to_json(&summary))?;
    }
    println!(
        "{}: train_acc {:.4}, val_acc {:.4}",
        a.arch,
        summary.train_acc,
        summary.val_acc.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_run(a: RunArgs, expected: ObjectiveName) -> preimage_forge::Result<()> {
    let config = RunConfig::load(&a.config)?;
    if config.objective.kind != expected {
        let command = match expected {
            ObjectiveName::Inversion => "invert",
            ObjectiveName::ActivationMax => "maximize",
        };
        return Err(Error::Config(format!(
            "`{command}` cannot run an objective of kind {:?}",
            config.objective.kind
        )));
    }
    let prepared = config.prepare()?;
    if a.dry_run {
        println!("{}", prepared.config.to_json());
        return Ok(());
    }
    let result = prepared.execute()?;
    let output = &prepared.config.output;
    encode_ppm(&result.final_image, &output.image)?;
    if let Some(path) = &output.metrics {
        write_text(path, &metrics_csv(&result.metrics))?;
    }
    if let (Some(first), Some(last)) = (result.metrics.first(), result.metrics.last()) {
        println!(
            "{} steps: total {} -> {}",
            result.metrics.len(),
            first.total,
            last.total
        );
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> preimage_forge::Result<()> {
    let model_a = preimage_forge::cnn::load_model(&a.model_a)?;
    let model_b = preimage_forge::cnn::load_model(&a.model_b)?;
    let mut options = EvaluateOptions {
        n_images: a.n_images,
        seed: a.seed,
        layer_a: a.layer_a,
        layer_b: a.layer_b,
        ..EvaluateOptions::default()
    };
    if let Some(p) = a.presets {
        options.presets = p;
    }
    if let Some(s) = a.steps {
        options.settings.steps = s;
    }
    if let Some(t) = a.tau {
        options.settings.step_size = t;
    }
    let report = evaluate(&model_a, &model_b, &options)?;
    let json = to_json(&report);
    match &a.out {
        Some(path) => {
            write_text(path, &json)?;
            for e in &report.results {
                println!("{} {} layer {}: top-1 {:.4}", e.direction, e.preset.name(), e.layer, e.top1);
            }
        }
        None => print!("{json}"),
    }
    Ok(())
}
