mod commands;
mod output;
mod scenario;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Determining functionals for stochastic 2-D Navier–Stokes: simulations,
/// completeness defects, sufficient conditions and their Monte Carlo checks.
#[derive(Debug, Parser)]
#[command(name = "detfun", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file (TOML).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,

    /// Output directory (defaults to the scenario's `output`, then `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Run `verify` even when the sufficient conditions fail.
    #[arg(long, global = true)]
    override_gate: bool,

    /// Worker threads for ensembles (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Log level: 0 warnings, 1 info, 2 debug, 3 trace.
    #[arg(long, global = true, default_value_t = 0)]
    verbosity: u8,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Integrate one trajectory and write norms, the final snapshot and the noise path.
    Simulate,
    /// Completeness defect and certified constant of the functional family.
    Defect,
    /// Evaluate the closed-form sufficient conditions.
    Conditions,
    /// Same-noise pair ensemble: Gronwall audit and exceedance statistics.
    Verify,
    /// Condition report over a one-parameter sweep.
    Sweep,
    /// Collect every CSV in the output directory into one long-format table.
    Report,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Gate(String),
    Numerical(String),
    /// The run completed but the pathwise checks did not hold.
    Verification(String),
    Io(std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Gate(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Verification(_) | CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Gate(m) => write!(f, "condition gate failed: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<detfun::Error> for CliError {
    fn from(e: detfun::Error) -> Self {
        use detfun::Error as E;
        match e {
            E::NumericalFailure { .. } => CliError::Numerical(e.to_string()),
            E::Io(io) => CliError::Io(io),
            E::Inadmissible(_) | E::HkDomain { .. } => CliError::Gate(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub struct Context {
    pub scenario: scenario::Scenario,
    pub scenario_bytes: Vec<u8>,
    pub out: PathBuf,
    pub override_gate: bool,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let path = cli
        .scenario
        .as_ref()
        .ok_or_else(|| CliError::Config("--scenario <path> is required".into()))?;
    let (scenario, bytes) = scenario::Scenario::load(path)?;
    let out = cli
        .out
        .clone()
        .or_else(|| scenario.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    let ctx = Context { scenario, scenario_bytes: bytes, out, override_gate: cli.override_gate };
    let cmd = cli.command;
    detfun::ensemble::with_workers(cli.workers, move || match cmd {
        Command::Simulate => commands::simulate(&ctx),
        Command::Defect => commands::defect(&ctx),
        Command::Conditions => commands::conditions(&ctx),
        Command::Verify => commands::verify(&ctx),
        Command::Sweep => commands::sweep(&ctx),
        Command::Report => commands::report(&ctx),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbosity {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("detfun: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
