//! `mcgan`: train, evaluate and inspect feature matching GANs on 2D data.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure,
//! 4 flagged oracle identity, 1 anything else.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use mcgan_core::data::{builtin, sample_real};
use mcgan_core::eval::{
    levelset, mode_coverage, oracle_report, GridSpec, LevelSetMode, DEFAULT_MIN_FRACTION, DEFAULT_RADIUS_MULT,
};
use mcgan_core::features::median_heuristic;
use mcgan_core::plot::{parse_trace_csv, plot_file, render_heatmap, render_loss_plot};
use mcgan_core::rng::{stream, StreamId};
use mcgan_core::{Error, FeatureMap, MlpFeatureMap, Norm, RandomFourierMap, Tensor, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "mcgan", version, about = "Mean and covariance feature matching GANs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes config, trace, loss plot and checkpoint.
    Train(TrainArgs),
    /// Mode coverage of a trained generator.
    Eval(EvalArgs),
    /// Critic level sets on a 2D grid (CSV and heatmap).
    Levelset(LevelsetArgs),
    /// Primal/dual identity checks on one instance.
    Oracle(OracleArgs),
    /// Render a trace CSV (loss curve) or grid CSV (heatmap) to PNG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config; keys mirror the training config fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set lr=1e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue from a checkpoint (its stored config is used).
    #[arg(long, conflicts_with_all = ["config", "overrides"])]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_RADIUS_MULT)]
    radius_mult: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_FRACTION)]
    min_fraction: f64,
    /// Seed of the evaluation noise stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Mean,
    Cov,
}

#[derive(Args)]
struct Instance {
    /// Builtin real distribution.
    #[arg(long, default_value = "bimodal2d")]
    real: String,
    /// Builtin fake distribution (ignored with `--checkpoint`).
    #[arg(long, default_value = "unimodal2d")]
    fake: String,
    /// Samples per side.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Random Fourier feature count.
    #[arg(long, default_value_t = 512)]
    features: usize,
    /// Kernel bandwidth; median heuristic over both batches when omitted.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Use the trained critic features and generator samples of a checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LevelsetArgs {
    #[command(flatten)]
    instance: Instance,
    #[arg(long, value_enum, default_value_t = Mode::Cov)]
    mode: Mode,
    /// Number of covariance directions.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Primal norm for the mean direction (1, 2 or inf).
    #[arg(long, default_value = "2")]
    p: Norm,
    #[arg(long, default_value_t = 200)]
    nx: usize,
    #[arg(long, default_value_t = 200)]
    ny: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    instance: Instance,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value = "2")]
    p: Norm,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    input: PathBuf,
    output: PathBuf,
}

/// Failure carrying its process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<Error>() {
            Some(Error::Config(_)) => 2,
            Some(Error::Numeric(_)) => 3,
            _ => 1,
        };
        Self { code, error }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Levelset(a) => run_levelset(a),
        Command::Oracle(a) => oracle(a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

/// Creates `out` and records provenance of the invocation in `run.toml`.
fn prepare_out(out: &Path, seed: u64) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let args: Vec<String> = std::env::args().collect();
    let mut text = String::new();
    writeln!(text, "git_describe = {:?}", git_describe())?;
    writeln!(text, "seed = {seed}")?;
    writeln!(text, "command = {:?}", args.join(" "))?;
    fs::write(out.join("run.toml"), text)?;
    Ok(())
}

fn load_config(args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    for o in &args.overrides {
        cfg.set(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut trainer = match &args.resume {
        Some(path) => Trainer::resume(path)?,
        None => {
            let mut cfg = load_config(&args)?;
            if cfg.checkpoint_path.is_none() {
                cfg.checkpoint_path = Some(args.out.join("checkpoint.bin"));
            }
            Trainer::new(cfg)?
        }
    };
    let cfg = trainer.config().clone();
    prepare_out(&args.out, cfg.seed)?;
    fs::write(args.out.join("config.toml"), cfg.to_toml())?;

    let outcome = trainer.run();
    trainer.trace().write_csv(args.out.join("trace.csv"))?;
    outcome?;
    trainer.save_checkpoint(args.out.join("final.bin"))?;
    let rows = parse_trace_csv(&trainer.trace().to_csv())?;
    if !rows.is_empty() {
        render_loss_plot(&rows)?.save_png(args.out.join("loss.png"))?;
    }
    if let Some(last) = trainer.trace().records().last() {
        println!("{} generator updates, last critic loss {:.6}", trainer.step(), last.loss);
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let trainer = Trainer::resume(&args.checkpoint)?;
    prepare_out(&args.out, args.seed)?;
    let samples = trainer.sample_generator(args.samples, args.seed)?;
    let report = mode_coverage(&samples, trainer.spec(), args.radius_mult, args.min_fraction)?;
    print!("{report}");
    let mut csv = String::from("mode,fraction\n");
    for (i, f) in report.fractions.iter().enumerate() {
        writeln!(csv, "{i},{f}").expect("string write");
    }
    fs::write(args.out.join("coverage.csv"), csv)?;
    fs::write(
        args.out.join("coverage.toml"),
        format!("covered = {}\nmodes = {}\nhigh_quality = {}\n", report.covered, report.modes(), report.high_quality),
    )?;
    Ok(())
}

/// Real and fake batches plus the feature map they are compared under.
fn build_instance(inst: &Instance) -> Result<(Tensor, Tensor, Box<dyn FeatureMap>), Failure> {
    if let Some(path) = &inst.checkpoint {
        let trainer = Trainer::resume(path)?;
        let real = sample_real(trainer.spec(), inst.n, &mut stream(inst.seed, StreamId::Real))?.points;
        let fake = trainer.sample_generator(inst.n, inst.seed)?;
        let phi: MlpFeatureMap = trainer.models().phi.clone();
        return Ok((real, fake, Box::new(phi)));
    }
    let real = sample_real(&builtin(&inst.real)?, inst.n, &mut stream(inst.seed, StreamId::Real))?.points;
    let fake = sample_real(&builtin(&inst.fake)?, inst.n, &mut stream(inst.seed, StreamId::Noise))?.points;
    let bandwidth = match inst.bandwidth {
        Some(b) => b,
        None => median_heuristic(&Tensor::vstack(&[&real, &fake])?)?,
    };
    let dim = real.cols();
    let phi = RandomFourierMap::from_seed(dim, inst.features, bandwidth, inst.seed)?;
    Ok((real, fake, Box::new(phi)))
}

fn run_levelset(args: LevelsetArgs) -> Result<(), Failure> {
    prepare_out(&args.out, args.instance.seed)?;
    let (real, fake, phi) = build_instance(&args.instance)?;
    let mode = match args.mode {
        Mode::Mean => LevelSetMode::Mean(args.p),
        Mode::Cov => LevelSetMode::Cov(args.k),
    };
    let grid = GridSpec { nx: args.nx, ny: args.ny, ..GridSpec::default() };
    let g = levelset(&real, &fake, phi.as_ref(), mode, &grid)?;
    fs::write(args.out.join("grid.csv"), g.to_csv())?;
    render_heatmap(&g)?.save_png(args.out.join("levelset.png"))?;
    if !g.sigmas.is_empty() {
        let s: Vec<String> = g.sigmas.iter().map(|s| format!("{s:.6}")).collect();
        println!("sigma: {}", s.join(" "));
    }
    println!("channels: {}", g.names.join(" "));
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<(), Failure> {
    prepare_out(&args.out, args.instance.seed)?;
    let (real, fake, phi) = build_instance(&args.instance)?;
    let report = oracle_report(phi.as_ref(), &real, &fake, args.k, args.p)?;
    print!("{report}");
    let mut csv = String::from("identity,lhs,rhs,gap,tolerance,ok\n");
    for r in &report.rows {
        writeln!(csv, "{},{},{},{},{},{}", r.name, r.lhs, r.rhs, r.gap, r.tolerance, r.ok).expect("string write");
    }
    fs::write(args.out.join("oracle.csv"), csv)?;
    if !report.all_ok() {
        return Err(Failure { code: 4, error: anyhow::anyhow!("oracle identity flagged") });
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<(), Failure> {
    plot_file(&args.input, &args.output)?;
    println!("wrote {}", args.output.display());
    Ok(())
}
