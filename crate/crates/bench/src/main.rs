//! `odernn-bench`: train and time ODE-RNN batching strategies on irregular
//! series, and tabulate the resulting reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use odernn::data::{generate_sine_dataset, write_dataset, SineDatasetConfig};
use odernn::evolver::{EvolverConfig, EvolverMode};
use odernn::experiment::{compare, read_report, render_table, run_experiment_with, write_csv, DatasetSource, ExperimentConfig, RunStatus};
use odernn::models::ModelKind;
use odernn::training::TrainConfig;
use odernn::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "odernn-bench", version, about = "Train and time ODE-RNN models on irregular series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write a run report.
    Run(RunArgs),
    /// Summarise two or more run reports.
    Compare(CompareArgs),
    /// Write a synthetic sine dataset to a file.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    SimpleRnn,
    Odernn,
    CombinedTime,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    FixedDt,
    AdaptiveFixed,
    AdaptiveGeometric,
}

impl From<ModeArg> for EvolverMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::FixedDt => EvolverMode::FixedDt,
            ModeArg::AdaptiveFixed => EvolverMode::AdaptiveFixed,
            ModeArg::AdaptiveGeometric => EvolverMode::AdaptiveGeometric,
        }
    }
}

#[derive(Args)]
struct SineArgs {
    /// Time rounding grid of the synthetic data.
    #[arg(long, default_value_t = 0.001)]
    rounding: f64,
    #[arg(long, default_value_t = 10_000)]
    num_sequences: usize,
    #[arg(long, default_value_t = 50)]
    points: usize,
}

#[derive(Args)]
struct RunArgs {
    /// `sine` or `file:PATH`.
    #[arg(long, default_value = "sine")]
    dataset: String,
    #[command(flatten)]
    sine: SineArgs,
    #[arg(long, value_enum, default_value = "odernn")]
    model: ModelArg,
    /// Evolver mode (ODE-RNN only; combined-time is always fixed-dt).
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Euler step for fixed-dt [default: 0.1].
    #[arg(long)]
    step_size: Option<f64>,
    /// Steps per gap for adaptive-fixed [default: 5].
    #[arg(long)]
    num_steps: Option<usize>,
    /// Initial step for adaptive-geometric [default: 0.001].
    #[arg(long)]
    s0: Option<f64>,
    /// Growth factor for adaptive-geometric [default: 1.5].
    #[arg(long)]
    growth: Option<f64>,
    #[arg(long, default_value_t = 10)]
    hidden: usize,
    #[arg(long, default_value_t = 50)]
    batch: usize,
    /// Learning rate [default: 0.01 for combined-time, 0.001 otherwise].
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 50)]
    min_epochs: usize,
    #[arg(long, default_value_t = 1000)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path (line-delimited JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Report files.
    #[arg(required = true, num_args = 2..)]
    reports: Vec<PathBuf>,
    /// Index of the report that speed-ups are measured against.
    #[arg(long, default_value_t = 0)]
    baseline: usize,
    /// Also write the summary as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    sine: SineArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

impl SineArgs {
    fn config(&self, seed: u64) -> SineDatasetConfig {
        SineDatasetConfig {
            num_sequences: self.num_sequences,
            points_per_sequence: self.points,
            rounding: self.rounding,
            seed,
            ..SineDatasetConfig::default()
        }
    }
}

fn reject(flag: &str, model: &str) -> Error {
    Error::Config(format!("--{flag} does not apply to {model}"))
}

impl RunArgs {
    fn model_kind(&self) -> Result<ModelKind, Error> {
        let step_size = self.step_size.unwrap_or(0.1);
        match self.model {
            ModelArg::SimpleRnn => {
                let evolver_flags = [
                    ("mode", self.mode.is_some()),
                    ("step-size", self.step_size.is_some()),
                    ("num-steps", self.num_steps.is_some()),
                    ("s0", self.s0.is_some()),
                    ("growth", self.growth.is_some()),
                ];
                match evolver_flags.iter().find(|(_, set)| *set) {
                    Some((flag, _)) => Err(reject(flag, "simple-rnn")),
                    None => Ok(ModelKind::SimpleRnn),
                }
            }
            ModelArg::CombinedTime => {
                if matches!(self.mode, Some(m) if !matches!(m, ModeArg::FixedDt)) {
                    return Err(Error::Config("combined-time only supports --mode fixed-dt".into()));
                }
                let extra = [
                    ("num-steps", self.num_steps.is_some()),
                    ("s0", self.s0.is_some()),
                    ("growth", self.growth.is_some()),
                ];
                if let Some((flag, _)) = extra.iter().find(|(_, set)| *set) {
                    return Err(reject(flag, "combined-time"));
                }
                Ok(ModelKind::CombinedTime { step_size })
            }
            ModelArg::Odernn => {
                let mode = self.mode.map_or(EvolverMode::FixedDt, EvolverMode::from);
                let stray: &[(&str, bool)] = match mode {
                    EvolverMode::FixedDt => &[
                        ("num-steps", self.num_steps.is_some()),
                        ("s0", self.s0.is_some()),
                        ("growth", self.growth.is_some()),
                    ],
                    EvolverMode::AdaptiveFixed => &[
                        ("step-size", self.step_size.is_some()),
                        ("s0", self.s0.is_some()),
                        ("growth", self.growth.is_some()),
                    ],
                    EvolverMode::AdaptiveGeometric => &[
                        ("step-size", self.step_size.is_some()),
                        ("num-steps", self.num_steps.is_some()),
                    ],
                };
                if let Some((flag, _)) = stray.iter().find(|(_, set)| *set) {
                    return Err(reject(flag, mode.as_str()));
                }
                let evolver = match mode {
                    EvolverMode::FixedDt => EvolverConfig::FixedDt { step_size },
                    EvolverMode::AdaptiveFixed => EvolverConfig::AdaptiveFixed {
                        num_steps: self.num_steps.unwrap_or(5),
                    },
                    EvolverMode::AdaptiveGeometric => EvolverConfig::AdaptiveGeometric {
                        initial_step: self.s0.unwrap_or(0.001),
                        growth_factor: self.growth.unwrap_or(1.5),
                    },
                };
                Ok(ModelKind::Odernn { evolver })
            }
        }
    }

    fn experiment(&self) -> Result<ExperimentConfig, Error> {
        let model = self.model_kind()?;
        let dataset = match self.dataset.as_str() {
            "sine" => DatasetSource::Sine(self.sine.config(self.seed)),
            other => match other.strip_prefix("file:") {
                Some(path) if !path.is_empty() => DatasetSource::File { path: path.into() },
                _ => return Err(Error::Config(format!("--dataset must be `sine` or `file:PATH`, got `{other}`"))),
            },
        };
        let defaults = TrainConfig::for_model(&model);
        let cfg = ExperimentConfig {
            dataset,
            model,
            train: TrainConfig {
                learning_rate: self.lr.unwrap_or(defaults.learning_rate),
                batch_size: self.batch,
                min_epochs: self.min_epochs,
                max_epochs: self.max_epochs,
                patience: self.patience,
                seed: self.seed,
            },
            hidden: self.hidden,
            seed: self.seed,
            out: self.out.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::FAILURE,
    }
}

fn run(args: RunArgs) -> Result<ExitCode, Error> {
    let cfg = args.experiment()?;
    let quiet = args.quiet;
    let report = run_experiment_with(&cfg, |r| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  train {:.6}  val {:.6}  {:.3}s",
                r.epoch + 1,
                r.train_loss,
                r.val_loss,
                r.wall_time_secs
            );
        }
    })?;
    let s = &report.summary;
    if s.status == RunStatus::Diverged {
        eprintln!("error: {}", s.message.as_deref().unwrap_or("training diverged"));
        return Ok(ExitCode::from(EXIT_DIVERGED));
    }
    let timing = s
        .timing
        .map_or_else(|| "-".to_string(), |t| format!("{:.4}±{:.4}s", t.mean_secs, t.sd_secs));
    println!(
        "{} {}: test mse {:.6}, {} epochs, epoch time {}",
        cfg.model.name(),
        match cfg.model {
            ModelKind::Odernn { evolver } => evolver.mode().as_str(),
            ModelKind::CombinedTime { .. } => "fixed-dt",
            ModelKind::SimpleRnn => "-",
        },
        s.test_mse.unwrap_or(f64::NAN),
        s.total_epochs,
        timing
    );
    Ok(ExitCode::SUCCESS)
}

fn compare_cmd(args: CompareArgs) -> Result<ExitCode, Error> {
    let reports = args
        .reports
        .iter()
        .map(|p| Ok((p.display().to_string(), read_report(p)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let rows = compare(&reports, args.baseline)?;
    print!("{}", render_table(&rows));
    if let Some(path) = &args.csv {
        let file = std::fs::File::create(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        write_csv(file, &rows)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn generate(args: GenerateArgs) -> Result<ExitCode, Error> {
    let series = generate_sine_dataset(&args.sine.config(args.seed))?;
    write_dataset(&args.out, &series)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Generate(a) => generate(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    })
}
