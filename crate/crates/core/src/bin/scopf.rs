use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use scopf::admm::{AdmmConfig, CouplingMode};
use scopf::orchestrator::{self, Mode, RunConfig};
use scopf::smoothing::SmoothingParams;
use scopf::Error;

#[derive(Parser)]
#[command(name = "scopf", version, about = "Security-constrained AC optimal power flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Deliver the base solution under the time limit.
    Phase1,
    /// Solve every contingency against the base solution file.
    Phase2,
    /// Phase 1 then phase 2.
    Full,
    /// Print the contingency ranking, one line per contingency.
    Rank,
    /// Recompute totals from the output files and render diagnostics.
    Report,
    /// Check a case file.
    Validate,
}

#[derive(Args)]
struct Opts {
    #[arg(long, global = true)]
    case: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Phase 1 limit in seconds.
    #[arg(long, global = true, default_value_t = 2700.0)]
    time_limit: f64,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long, global = true)]
    beta0: Option<f64>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true, value_parser = parse_coupling)]
    coupling: Option<CouplingMode>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

fn parse_coupling(s: &str) -> Result<CouplingMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn seconds(s: f64) -> Result<Duration, Error> {
    Duration::try_from_secs_f64(s).ok().filter(|d| !d.is_zero()).ok_or_else(|| Error::invalid("time limit must be positive"))
}

impl Opts {
    fn config(&self, mode: Mode) -> Result<RunConfig, Error> {
        let case_path = self.case.clone().ok_or_else(|| Error::invalid("--case is required"))?;
        let mut admm = AdmmConfig::default();
        let mut smoothing = SmoothingParams::default();
        if let Some(e) = self.epsilon {
            admm.epsilon = e;
            smoothing.epsilon = e;
        }
        if let Some(m) = self.mu {
            smoothing.mu = m;
        }
        if let Some(b) = self.beta0 {
            admm.beta0 = b;
        }
        if let Some(t) = self.tau {
            admm.tau = t;
        }
        if let Some(c) = self.coupling {
            admm.coupling = c;
        }
        let config = RunConfig {
            case_path,
            mode,
            phase1_limit: seconds(self.time_limit)?,
            workers: self.workers,
            admm,
            smoothing,
            out_dir: self.out.clone(),
            seed: self.seed,
            ..RunConfig::default()
        };
        config.validate()?;
        Ok(config)
    }
}

fn run(cli: &Cli) -> Result<bool, Error> {
    let o = &cli.opts;
    match cli.command {
        Command::Validate => {
            let path = o.case.as_ref().ok_or_else(|| Error::invalid("--case is required"))?;
            println!("{}", orchestrator::validate_case(path)?);
            Ok(false)
        }
        Command::Rank => {
            let ranked = orchestrator::rank_only(&o.config(Mode::Rank)?)?;
            for r in ranked {
                println!("{} {}", r.id, r.severity);
            }
            Ok(false)
        }
        Command::Phase1 => {
            let (_, rep) = orchestrator::run_phase1(&o.config(Mode::Phase1)?)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
            Ok(rep.fallback)
        }
        Command::Phase2 => {
            let rep = orchestrator::run_phase2(&o.config(Mode::Phase2)?, None)?;
            println!("objective {}", rep.objective);
            Ok(rep.fallback_used())
        }
        Command::Full => {
            let config = o.config(Mode::Full)?;
            let (base, r1) = orchestrator::run_phase1(&config)?;
            let r2 = orchestrator::run_phase2(&config, Some(base))?;
            println!("base source {:?}, objective {}", r1.source, r2.objective);
            Ok(r1.fallback || r2.fallback_used())
        }
        Command::Report => {
            let config = o.config(Mode::Full)?;
            let case = config.load_case()?;
            print!("{}", orchestrator::report(&case, &config.out_dir)?);
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() || matches!(e, Error::Io(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
