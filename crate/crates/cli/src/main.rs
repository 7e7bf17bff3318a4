use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use fp8emu::RoundingMode;
use fp8emu_cli::presets::run_sweep;
use fp8emu_cli::quantize::quantize_file;
use fp8emu_cli::{exit, run_experiment, CliError, ExperimentConfig, Preset, OUT_DIR_ENV};

/// FP8 (1,5,2) mixed-precision training emulator.
///
/// Exit codes: 0 success, 2 training diverged, 64 bad configuration or
/// arguments, 65 garbled input data, 66 missing input file, 74 other I/O
/// failure. The output directory can be overridden with FP8EMU_OUT_DIR.
#[derive(Parser)]
#[command(name = "fp8emu", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the FP32 / FP16 / FP8 dynamic-range table.
    RangeReport,
    /// Train as described by an INI config file and write the run artifacts.
    Train {
        config: PathBuf,
        /// Output directory (takes precedence over FP8EMU_OUT_DIR and the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quantize an FP32 tensor file (FP8T binary or CSV) to an FP8 tensor file.
    Quantize {
        input: PathBuf,
        output: PathBuf,
        /// nearest-even | stochastic | toward-zero
        #[arg(long, default_value = "nearest-even")]
        mode: RoundingMode,
        /// Stochastic-rounding seed (nonzero).
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run a preset experiment: fp32-baseline, rounding-ablation, lossscale-sweep or parity.
    Sweep {
        preset: Preset,
        /// Output directory; default runs/<preset>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated run seeds; default depends on the preset.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Run the preset's runs concurrently, one thread each.
        #[arg(long)]
        parallel: bool,
    },
}

fn out_dir(flag: Option<PathBuf>, fallback: PathBuf) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or(fallback)
}

fn run(command: Command) -> Result<u8, CliError> {
    match command {
        Command::RangeReport => {
            print!("{}", fp8emu::range_report());
            Ok(exit::OK)
        }
        Command::Train { config, out } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            cfg.output_dir = out_dir(out, cfg.output_dir);
            let summary = run_experiment(&cfg)?;
            println!("{}", summary.describe());
            Ok(if summary.diverged_at.is_some() {
                exit::DIVERGED
            } else {
                exit::OK
            })
        }
        Command::Quantize {
            input,
            output,
            mode,
            seed,
        } => {
            let stats = quantize_file(&input, &output, mode, seed)?;
            print!("{stats}");
            Ok(exit::OK)
        }
        Command::Sweep {
            preset,
            out,
            seeds,
            parallel,
        } => {
            let dir = out_dir(out, Path::new("runs").join(preset.name()));
            let seeds = seeds.unwrap_or_else(|| preset.default_seeds());
            let report = run_sweep(preset, &dir, &seeds, parallel)?;
            for (_, s) in &report.runs {
                println!("{}", s.describe());
            }
            print!("\n{}", report.comparison);
            Ok(if report.diverged() { exit::DIVERGED } else { exit::OK })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(exit::CONFIG),
            };
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("fp8emu: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
