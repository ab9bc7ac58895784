use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fdssa::capture::read_capture;
use fdssa::config::ExperimentConfig;
use fdssa::experiment::{
    cfe_trace_csv, export_impulse_response, rosnr_search, run_trial, run_trial_on_capture, sweep,
    RosnrOutcome,
};
use fdssa::{Error, Result};

#[derive(Parser)]
#[command(name = "fdssa", version, about = "Frequency-domain MIMO equalizer simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured grid and write the sweep CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        parallel: Option<usize>,
        /// Run the receiver on a raw capture instead of the simulated channel.
        #[arg(long)]
        capture: Option<PathBuf>,
    },
    /// Required OSNR for a BER target, per equalizer and offset in the grid.
    Rosnr {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        target: Option<f64>,
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Converged filter taps as log10|h| CSV.
    Taps {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blockwise pre-equalizer frequency-offset estimates.
    CfeTrace {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1 << 14)]
        block: usize,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn ensure_writable(path: &Path) -> Result<()> {
    File::create(path).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn thread_pool(parallel: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = parallel {
        if n == 0 {
            return Err(Error::InvalidParameter("--parallel must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            parallel,
            capture,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out
                .or_else(|| cfg.output.clone())
                .ok_or_else(|| Error::Config("no output path: pass --out or set output".into()))?;
            ensure_writable(&out)?;
            if let Some(path) = capture {
                let mut reader = BufReader::new(File::open(&path)?);
                let signal = read_capture(&mut reader, cfg.transmitter.samples_per_symbol)?;
                let r = run_trial_on_capture(&cfg, signal, 0)?;
                println!(
                    "ber {:.6e} errors {} bits {} converged {} residual_offset_hz {:.6e}",
                    r.ber, r.error_count, r.counted_bits, r.converged, r.residual_offset_hz
                );
                return export_impulse_response(&r.final_taps, &out);
            }
            let rows = thread_pool(parallel)?.install(|| sweep(&cfg, &out))?;
            println!("{} rows written to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Rosnr {
            config,
            target,
            parallel,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let target = target.unwrap_or(cfg.rosnr.ber_target);
            if !(target > 0.0 && target < 0.5) {
                return Err(Error::InvalidParameter(format!("BER target {target} outside (0, 0.5)")));
            }
            let pool = thread_pool(parallel)?;
            println!("equalizer,frequency_offset_hz,rosnr_db,status");
            for variant in cfg.variants() {
                for offset in cfg.offsets_hz() {
                    let outcome = pool.install(|| rosnr_search(&cfg, variant, offset, target))?;
                    let (value, status) = match outcome {
                        RosnrOutcome::Reached { rosnr_db, .. } => (rosnr_db, "reached"),
                        RosnrOutcome::Unreachable { osnr_db, .. } => (osnr_db, "unreachable"),
                        RosnrOutcome::BelowRange { osnr_db, .. } => (osnr_db, "below-range"),
                    };
                    println!("{variant},{},{value:.2},{status}", fdssa::report::fmt_e(offset));
                }
            }
            Ok(())
        }
        Command::Taps { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            ensure_writable(&out)?;
            let r = run_trial(&cfg, 0)?;
            export_impulse_response(&r.final_taps, &out)?;
            println!("ber {:.6e}, taps written to {}", r.ber, out.display());
            Ok(())
        }
        Command::CfeTrace { config, out, block } => {
            let cfg = ExperimentConfig::load(&config)?;
            ensure_writable(&out)?;
            std::fs::write(&out, cfe_trace_csv(&cfg, block, 0)?)?;
            Ok(())
        }
    }
}
