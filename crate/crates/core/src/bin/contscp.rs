use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use contscp::experiments::{check_table, run_study, solve_file, write_study, StudyConfig, Table, ThetaMode};
use contscp::problem::config::ProblemFile;
use contscp::{Error, Result};

#[derive(Parser)]
#[command(name = "contscp", version, about = "Continuous-time SCP with Pontryagin verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the randomized Dubins study.
    Study {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, value_enum, default_value = "free")]
        theta_mode: ModeArg,
        /// Also run shooting-accelerated SCP on every scenario.
        #[arg(long)]
        accelerate: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "study_out")]
        out_dir: PathBuf,
    },
    /// Solve a TOML problem file.
    Solve {
        config: PathBuf,
        #[arg(long, default_value = "solve_out")]
        out_dir: PathBuf,
    },
    /// Evaluate the residuals of a trajectory CSV against a problem file.
    Check { config: PathBuf, trajectory: PathBuf },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Free,
    Fixed,
}

fn load(path: &Path) -> Result<ProblemFile> {
    ProblemFile::parse(&fs::read_to_string(path)?)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Study {
            n,
            theta_mode,
            accelerate,
            seed,
            out_dir,
        } => {
            let config = StudyConfig {
                n_scenarios: n,
                theta_mode: match theta_mode {
                    ModeArg::Free => ThetaMode::Free,
                    ModeArg::Fixed => ThetaMode::Fixed,
                },
                accelerate,
                master_seed: seed,
                ..StudyConfig::default()
            };
            let result = run_study(&config)?;
            write_study(&out_dir, &result)?;
            info!("wrote {}", out_dir.display());
            print_json(&result.summary)
        }
        Command::Solve { config, out_dir } => {
            let file = load(&config)?;
            let out = solve_file(&file)?;
            fs::create_dir_all(&out_dir)?;
            out.table().write_csv(BufWriter::new(File::create(out_dir.join("trajectory.csv"))?))?;
            out.run.history.write_jsonl(BufWriter::new(File::create(out_dir.join("history.jsonl"))?))?;
            if let Some(last) = &out.run.last {
                last.subproblem.write_dump(BufWriter::new(File::create(out_dir.join("subproblem.txt"))?))?;
            }
            let mut report = BufWriter::new(File::create(out_dir.join("report.json"))?);
            serde_json::to_writer_pretty(&mut report, &out.report)?;
            writeln!(report)?;
            info!("wrote {}", out_dir.display());
            print_json(&out.report)
        }
        Command::Check { config, trajectory } => {
            let file = load(&config)?;
            let table = Table::read_csv(File::open(&trajectory)?)?;
            print_json(&check_table(&file, &table)?)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Parse(_) | Error::Dimension { .. } => 2,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
