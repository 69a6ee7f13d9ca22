//! `c2f`: verification, data generation, training and evaluation of the
//! coarse-to-fine shallow-water interpolant.

mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use c2f_core::dataset::{generate_dataset, manifest_path};
use c2f_core::trainer::{dataset_flow, evaluate, train_with, Widths};
use c2f_core::{
    verify, Dataset, DatasetConfig, EvalConfig, ModelParams, NeuralInterpolant, PhysicsParams,
    TrainConfig,
};
use clap::{Args, Parser, Subcommand};

use settings::ConfigFile;

/// Error caused by how the program was invoked; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(
    name = "c2f",
    version,
    about = "Neural coarse-to-fine interpolation for the linear rotating shallow-water equations"
)]
struct Cli {
    /// Flat `key = value` settings file; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores); 1 gives bitwise-reproducible training
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the conservation, duality, prolongation, flow-map and gradient checks
    Verify(VerifyArgs),
    /// Generate paired coarse/fine trajectories
    Gendata(GendataArgs),
    /// Train the interpolant on a dataset
    Train(TrainArgs),
    /// Per-level error and energy statistics on validation batches
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Fine mesh elements; the coarse mesh has a quarter as many [default: 300]
    #[arg(long)]
    mesh: Option<usize>,
    /// Seed for the random test states [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GendataArgs {
    /// Output dataset file; a `<out>.manifest` is written next to it
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of trajectory pairs [default: 1000; 200 with --desk-scale]
    #[arg(long)]
    count: Option<usize>,
    /// Coarse mesh elements M_c [default: 75]
    #[arg(long)]
    coarse_elems: Option<usize>,
    /// Fine mesh elements M_f [default: 300]
    #[arg(long)]
    fine_elems: Option<usize>,
    /// Stored time levels N per trajectory [default: 10]
    #[arg(long)]
    levels: Option<usize>,
    /// Time step τ [default: 0.01]
    #[arg(long)]
    time_step: Option<f64>,
    /// Coriolis parameter f [default: 0.1]
    #[arg(long)]
    coriolis: Option<f64>,
    /// Gravity g [default: 1]
    #[arg(long)]
    gravity: Option<f64>,
    /// Master seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Reduced sample count for quick runs
    #[arg(long)]
    desk_scale: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset produced by `gendata`
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output model file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss history CSV [default: <out>.loss.csv]
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    /// Energy penalty weight σ [default: 0]
    #[arg(long)]
    sigma: Option<f64>,
    /// Mini-batch size [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training epochs [default: 300; 100 with --desk-scale]
    #[arg(long)]
    epochs: Option<usize>,
    /// Base learning rate [default: 1e-3]
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs between learning-rate decays [default: 30; 10 with --desk-scale]
    #[arg(long)]
    decay_period: Option<usize>,
    /// Learning-rate divisor at each decay [default: 10]
    #[arg(long)]
    decay_factor: Option<f64>,
    /// First hidden width s₁ [default: 8N; 2N with --desk-scale]
    #[arg(long)]
    s1: Option<usize>,
    /// Second hidden width s₂ [default: 64N; 8N with --desk-scale]
    #[arg(long)]
    s2: Option<usize>,
    /// Master seed for initialisation and shuffling [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Narrow network, 100 epochs, decay every 10
    #[arg(long)]
    desk_scale: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset produced by `gendata`; its validation split is used
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model produced by `train`
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of random validation batches [default: 3]
    #[arg(long)]
    batches: Option<usize>,
    /// Samples per batch [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seed for batch selection [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} {} does not exist", path.display())).into())
    }
}

fn cmd_verify(args: VerifyArgs, cfg: &ConfigFile) -> Result<ExitCode> {
    let mesh = cfg.pick(args.mesh, "mesh", 300)?;
    let seed = cfg.pick(args.seed, "seed", 0)?;
    let results = verify::run_suite(mesh, seed)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {failed} failed", results.len());
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_gendata(args: GendataArgs, cfg: &ConfigFile) -> Result<ExitCode> {
    let out = cfg.path(args.out, "out")?;
    let desk = cfg.flag(args.desk_scale, "desk-scale")?;
    let defaults = DatasetConfig::default();
    let physics = PhysicsParams {
        coriolis: cfg.pick(args.coriolis, "coriolis", defaults.physics.coriolis)?,
        gravity: cfg.pick(args.gravity, "gravity", defaults.physics.gravity)?,
        time_step: cfg.pick(args.time_step, "time-step", defaults.physics.time_step)?,
    };
    let config = DatasetConfig {
        coarse_elems: cfg.pick(args.coarse_elems, "coarse-elems", defaults.coarse_elems)?,
        fine_elems: cfg.pick(args.fine_elems, "fine-elems", defaults.fine_elems)?,
        levels: cfg.pick(args.levels, "levels", defaults.levels)?,
        physics,
        count: cfg.pick(args.count, "count", if desk { 200 } else { defaults.count })?,
        seed: cfg.pick(args.seed, "seed", defaults.seed)?,
    };
    let start = Instant::now();
    let dataset = generate_dataset(&config)?;
    dataset.save(&out)?;
    println!(
        "wrote {} ({} samples: {} train / {} validation, D={}, max energy drift {:.3e}, {:.1}s)",
        out.display(),
        config.count,
        dataset.train().len(),
        dataset.validation().len(),
        config.dim(),
        dataset.max_energy_drift(),
        start.elapsed().as_secs_f64()
    );
    println!("manifest {}", manifest_path(&out).display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs, cfg: &ConfigFile) -> Result<ExitCode> {
    let data = cfg.path(args.data, "data")?;
    let out = cfg.path(args.out, "out")?;
    require_file(&data, "dataset")?;
    let loss_csv = cfg
        .pick_opt(args.loss_csv, "loss-csv")?
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", out.display())));
    let desk = cfg.flag(args.desk_scale, "desk-scale")?;
    let sigma = cfg.pick(args.sigma, "sigma", 0.0)?;
    let base = if desk {
        TrainConfig::desk(sigma)
    } else {
        TrainConfig::full(sigma)
    };
    let s1 = cfg.pick_opt(args.s1, "s1")?;
    let s2 = cfg.pick_opt(args.s2, "s2")?;
    let dataset = Dataset::load(&data)?;
    let levels = dataset.config.levels;
    let preset = base.widths.architecture(levels, dataset.config.fine_elems);
    let widths = match (s1, s2) {
        (None, None) => base.widths,
        _ => Widths::Explicit {
            s1: s1.unwrap_or(preset.s1),
            s2: s2.unwrap_or(preset.s2),
        },
    };
    let config = TrainConfig {
        sigma,
        batch_size: cfg.pick(args.batch_size, "batch-size", base.batch_size)?,
        epochs: cfg.pick(args.epochs, "epochs", base.epochs)?,
        learning_rate: cfg.pick(args.lr, "lr", base.learning_rate)?,
        decay_period: cfg.pick(args.decay_period, "decay-period", base.decay_period)?,
        decay_factor: cfg.pick(args.decay_factor, "decay-factor", base.decay_factor)?,
        seed: cfg.pick(args.seed, "seed", base.seed)?,
        widths,
    };
    let arch = widths.architecture(levels, dataset.config.fine_elems);
    eprintln!(
        "training sigma={} on {} samples, N={} L={} s1={} s2={}, {} epochs",
        config.sigma,
        dataset.train().len(),
        arch.levels,
        arch.length,
        arch.s1,
        arch.s2,
        config.epochs
    );
    let start = Instant::now();
    let flow = dataset_flow(&dataset)?;
    let (model, report) = train_with(&dataset, &config, flow, |r| {
        eprintln!(
            "epoch {:>4}  lr {:.1e}  loss {:.6e}  data {:.6e}  penalty {:.6e}  [{:.0}s]",
            r.epoch,
            r.lr,
            r.mean_loss,
            r.data_term,
            r.penalty_term,
            start.elapsed().as_secs_f64()
        );
    })?;
    model.params.save(&out)?;
    std::fs::write(&loss_csv, report.to_csv())
        .with_context(|| format!("writing {}", loss_csv.display()))?;
    println!("final_loss {:e}", report.final_loss());
    println!("model {}", out.display());
    println!("loss_csv {}", loss_csv.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: EvalArgs, cfg: &ConfigFile) -> Result<ExitCode> {
    let data = cfg.path(args.data, "data")?;
    let model_path = cfg.path(args.model, "model")?;
    require_file(&data, "dataset")?;
    require_file(&model_path, "model")?;
    let defaults = EvalConfig::default();
    let config = EvalConfig {
        batches: cfg.pick(args.batches, "batches", defaults.batches)?,
        batch_size: cfg.pick(args.batch_size, "batch-size", defaults.batch_size)?,
        seed: cfg.pick(args.seed, "seed", defaults.seed)?,
    };
    let dataset = Dataset::load(&data)?;
    let params = ModelParams::load(&model_path)?;
    if params.arch.levels != dataset.config.levels
        || params.arch.length != dataset.config.fine_elems
    {
        anyhow::bail!(
            "model expects N={} levels on {} fine elements but dataset has N={} on {}",
            params.arch.levels,
            params.arch.length,
            dataset.config.levels,
            dataset.config.fine_elems
        );
    }
    let model = NeuralInterpolant::new(params, dataset_flow(&dataset)?)?;
    let mesh = dataset.config.fine_mesh()?;
    let report = evaluate(
        &model,
        dataset.validation(),
        dataset.config.physics.gravity,
        &mesh,
        &config,
    )?;
    match cfg.pick_opt(args.out, "out")? {
        Some(path) => {
            std::fs::write(&path, report.to_csv())
                .with_context(|| format!("writing {}", path.display()))?;
            println!(
                "wrote {} ({} rows, mean squared error {:.3e}, mean energy std {:.3e})",
                path.display(),
                report.records.len(),
                report.mean_l2sq_error(),
                report.mean_energy_std()
            );
        }
        None => print!("{}", report.to_csv()),
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    if let Some(n) = cfg.pick_opt(cli.threads, "threads")? {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Verify(a) => cmd_verify(a, &cfg),
        Command::Gendata(a) => cmd_gendata(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg),
    }
}

fn exit_status(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        e.is::<UsageError>()
            || matches!(
                e.downcast_ref::<c2f_core::Error>(),
                Some(c2f_core::Error::Config(_) | c2f_core::Error::Usage(_))
            )
    });
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_status(&err))
        }
    }
}
