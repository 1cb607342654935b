use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rapid_core::evaluation::{run_experiment, sweep, validate, ExperimentConfig};
use rapid_core::RapidError;

/// Cooperative multi-cell mmWave beam-training simulator.
#[derive(Debug, Parser)]
#[command(name = "rapid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the Monte Carlo experiment described by a config file.
    Run {
        /// TOML config, or JSON when the name ends in `.json`.
        config: PathBuf,
        /// Directory for results.csv and results.json.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Keep per-trial arrays in the JSON output.
        #[arg(long)]
        verbose: bool,
    },
    /// Run one experiment per transmit power and write each to `<out>/<P>dBm`.
    Sweep {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Powers in dBm; defaults to the config's list.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        p_dbm: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        verbose: bool,
    },
    /// Check the simulator invariants on a few trials of a config.
    Validate { config: PathBuf },
}

fn load(
    path: &Path,
    trials: Option<usize>,
    seed: Option<u64>,
) -> Result<ExperimentConfig, RapidError> {
    let mut cfg = ExperimentConfig::from_path(path).map_err(|e| match e {
        RapidError::Io(io) => RapidError::Config(format!("{}: {io}", path.display())),
        other => other,
    })?;
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &RapidError) -> u8 {
    match e {
        RapidError::Config(_) | RapidError::Toml(_) => 2,
        _ => 3,
    }
}

fn execute(cli: Cli) -> Result<bool, RapidError> {
    match cli.command {
        Command::Run {
            config,
            out,
            trials,
            seed,
            verbose,
        } => {
            let cfg = load(&config, trials, seed)?;
            let res = run_experiment(&cfg)?;
            res.write(&out, verbose)?;
            println!("wrote {}", out.join("results.csv").display());
            Ok(true)
        }
        Command::Sweep {
            config,
            out,
            p_dbm,
            trials,
            seed,
            verbose,
        } => {
            let cfg = load(&config, trials, seed)?;
            let powers = p_dbm.unwrap_or_else(|| cfg.p_dbm.clone());
            if powers.is_empty() || powers.iter().any(|p| !p.is_finite()) {
                return Err(RapidError::Config("--p-dbm needs finite values".into()));
            }
            for (p, res) in powers.iter().zip(sweep(&cfg, &powers)?) {
                let dir = out.join(format!("{p}dBm"));
                res.write(&dir, verbose)?;
                println!("wrote {}", dir.join("results.csv").display());
            }
            Ok(true)
        }
        Command::Validate { config } => {
            let cfg = load(&config, None, None)?;
            let checks = validate(&cfg)?;
            let mut ok = true;
            for c in &checks {
                ok &= c.passed;
                let tag = if c.passed { "ok  " } else { "FAIL" };
                if c.detail.is_empty() {
                    println!("{tag} {}", c.name);
                } else {
                    println!("{tag} {}: {}", c.name, c.detail);
                }
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
