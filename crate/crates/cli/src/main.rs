use clap::{Args, Parser, Subcommand, ValueEnum};
use lrxxz_cli::commands::{self, FitArgs, FitName, RunOptions};
use lrxxz_cli::config::{ExperimentConfig, Overrides};
use lrxxz_cli::{exit, CliError};
use lrxxz_core::dmrg::Preset;
use lrxxz_core::fit::ScanSide;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lrxxz", version, about = "Ground states and two-spin entanglement of long-range XXZ chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Below,
    Above,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum FitArg {
    ExpDecay,
    PowerLaw,
    LogScaling,
    KbiFine,
    Piecewise,
    Proportionality,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// DMRG parameter preset; explicit [dmrg] entries still win.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Parallel workers; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Seed for the random initial MPS.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue the named run, reusing finished points and checkpoints.
    #[arg(long, value_name = "RUN_ID")]
    resume: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one model and write its profile, totals and checkpoint.
    Ground {
        #[command(flatten)]
        run: RunArgs,
        /// Compare against exact diagonalization (N <= 14).
        #[arg(long)]
        oracle_check: bool,
    },
    /// Solve every point of the config's [sweep] block.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        oracle_check: bool,
    },
    /// Compare DMRG against exact diagonalization for every point.
    Oracle {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Fit a model to CSV outputs.
    Fit {
        #[arg(value_enum)]
        name: FitArg,
        /// Input CSV files (profile, scan or totals, depending on the fit).
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        /// Directory for fits.csv and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        j_star: Option<f64>,
        #[arg(long, default_value_t = 2.0)]
        window_steps: f64,
        #[arg(long, value_enum, default_value = "below")]
        side: SideArg,
        /// Nearest-neighbour concurrence for the power-law fit.
        #[arg(long)]
        c1: Option<f64>,
    },
    /// Check CSV schemas and run-directory manifests.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

fn load(run: &RunArgs) -> Result<ExperimentConfig, CliError> {
    let overrides = Overrides {
        preset: run.preset.map(|p| match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }),
        seed: run.seed,
        run_id: run.resume.clone(),
    };
    Ok(ExperimentConfig::load(&run.config, &overrides)?)
}

fn run_command(run: &RunArgs, oracle_check: bool, name: &str) -> Result<(), CliError> {
    let cfg = load(run)?;
    let opts = RunOptions { workers: run.workers, oracle_check, resume: run.resume.is_some() };
    let report = commands::run(&cfg, &opts, name)?;
    println!("{}: {} files in {}", name, report.manifest.files.len(), report.dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ground { run, oracle_check } => {
            let cfg = load(&run)?;
            if cfg.sweep.is_some() {
                return Err(CliError::Usage("config has a [sweep] block; use the sweep subcommand".into()));
            }
            let opts = RunOptions { workers: run.workers, oracle_check, resume: run.resume.is_some() };
            let report = commands::run(&cfg, &opts, "ground")?;
            if let Some(p) = report.manifest.points.first() {
                println!("energy {}", p.energy.map_or("n/a".into(), |e| e.to_string()));
            }
            println!("wrote {}", report.dir.display());
            Ok(())
        }
        Command::Sweep { run, oracle_check } => run_command(&run, oracle_check, "sweep"),
        Command::Oracle { run } => run_command(&run, true, "oracle"),
        Command::Fit { name, inputs, out, j_star, window_steps, side, c1 } => {
            let name = match name {
                FitArg::ExpDecay => FitName::ExpDecay,
                FitArg::PowerLaw => FitName::PowerLaw,
                FitArg::LogScaling => FitName::LogScaling,
                FitArg::KbiFine => FitName::KbiFine,
                FitArg::Piecewise => FitName::Piecewise,
                FitArg::Proportionality => FitName::Proportionality,
            };
            let side = match side {
                SideArg::Below => ScanSide::Below,
                SideArg::Above => ScanSide::Above,
            };
            let (_, report) = commands::fit(&FitArgs { name, inputs, out, j_star, window_steps, side, c1 })?;
            print!("{report}");
            Ok(())
        }
        Command::Validate { paths } => {
            for line in commands::validate(&paths)? {
                println!("ok {line}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
