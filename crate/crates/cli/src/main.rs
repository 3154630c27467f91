use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cellfree_core::config::SweepSpec;
use cellfree_core::report::RECORDS_FILE;
use cellfree_core::sweep::summarize;
use cellfree_core::{emit_report, run_sweep, Error, ExperimentConfig};
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

/// Energy-efficiency experiments for cell-free uplinks with fluid antennas
/// and low-resolution ADCs.
#[derive(Parser)]
#[command(name = "cellfree", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration over all realizations.
    Run(Common),
    /// Sweep one parameter over a list of values.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Parameter to sweep (overrides the [sweep] section).
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Option<Vec<f64>>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, env = "CELLFREE_OUT", default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Worker threads; all cores when omitted.
    #[arg(long, env = "CELLFREE_THREADS")]
    threads: Option<usize>,
}

enum Failure {
    Config(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(io) => Failure::Io(io.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = common.realizations {
        cfg.realizations = n;
    }
    if common.threads == Some(0) {
        return Err(Failure::Config("--threads must be positive".into()));
    }
    Ok(cfg)
}

fn execute(cfg: &ExperimentConfig, common: &Common) -> Result<(), Failure> {
    cfg.validate()?;
    let data = run_sweep(cfg, common.threads)?;
    emit_report(&data, cfg, &common.out)?;
    print_summary(&data, &common.out);
    for f in &data.failures {
        eprintln!("realization {} ({}) failed: {}", f.realization, f.variant, f.message);
    }
    Ok(())
}

fn print_summary(data: &cellfree_core::Dataset, out: &Path) {
    let param = data.param.as_deref().unwrap_or("-");
    println!("{:<14} {:<16} {:>16} {:>14} {:>6}", param, "variant", "mean EE (Mbit/J)", "mean SE", "n");
    let rows = summarize(data);
    for pair in rows.chunks(5) {
        let ee = &pair[0];
        let se = &pair[1];
        let value = ee.sweep_value.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        println!("{:<14} {:<16} {:>16.4} {:>14.4} {:>6}", value, ee.variant, ee.mean * 1e-6, se.mean, ee.count);
    }
    println!("records written to {}", out.join(RECORDS_FILE).display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(common) => load(common).and_then(|mut cfg| {
            cfg.sweep = None;
            execute(&cfg, common)
        }),
        Command::Sweep { common, param, values } => load(common).and_then(|mut cfg| {
            let spec = match (param, values, cfg.sweep.take()) {
                (Some(p), Some(v), _) => SweepSpec { param: p.clone(), values: v.clone() },
                (Some(p), None, Some(s)) => SweepSpec { param: p.clone(), values: s.values },
                (None, Some(v), Some(s)) => SweepSpec { param: s.param, values: v.clone() },
                (None, None, Some(s)) => s,
                _ => return Err(Failure::Config("sweep needs --param and --values or a [sweep] section".into())),
            };
            cfg.sweep = Some(spec);
            execute(&cfg, common)
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("i/o error: {msg}");
            ExitCode::from(EXIT_IO)
        }
    }
}
