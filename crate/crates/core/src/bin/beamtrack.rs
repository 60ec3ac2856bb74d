use beamtrack::harness::{
    cmd_calibrate, cmd_characterize, cmd_run, cmd_sweep, HarnessError, RunOptions, EXIT_CONFIG,
    EXIT_OK,
};
use beamtrack::imaging::PgmFormat;
use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "beamtrack",
    version,
    about = "Image-based beam tracking simulator for water-air optical links"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FrameFormat {
    P2,
    P5,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write a one-row metrics CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the per-cycle trace CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Dump every captured frame as PGM into this directory.
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "p5")]
        frame_format: FrameFormat,
    },
    /// Expand a sweep file and write one metrics row per point.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Measure the ASCR of a wave file or of a recorded offset trace.
    Characterize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Find wave parameters that produce a target ASCR (rad/s).
    Calibrate {
        #[arg(long)]
        target: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<String, HarnessError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            trace,
            frames,
            frame_format,
        } => {
            let opts = RunOptions {
                seed,
                trace,
                frames,
                frame_format: Some(match frame_format {
                    FrameFormat::P2 => PgmFormat::P2,
                    FrameFormat::P5 => PgmFormat::P5,
                }),
            };
            let row = cmd_run(&config, &out, &opts)?;
            Ok(format!(
                "{}: plr {} mean_ber {:e} throughput {:e} bit/s",
                row.scenario, row.plr, row.mean_ber, row.throughput
            ))
        }
        Command::Sweep { config, out, seed } => {
            let rows = cmd_sweep(&config, out.as_deref(), seed)?;
            Ok(format!("{} rows written", rows.len()))
        }
        Command::Characterize { config, out } => {
            let s = cmd_characterize(&config, &out)?;
            Ok(format!("ascr {} rad/s over {} frames", s.ascr, s.frames))
        }
        Command::Calibrate { target, out } => {
            let r = cmd_calibrate(target, &out)?;
            Ok(format!(
                "achieved ascr {} rad/s (amplitude {}, omega {})",
                r.achieved_ascr, r.wave.amplitude, r.wave.omega
            ))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_CONFIG as u8
            } else {
                EXIT_OK as u8
            });
        }
    };
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
