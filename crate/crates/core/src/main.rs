use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use filmflow::check::run_battery;
use filmflow::config::RunConfig;
use filmflow::driver::{initial_energy, simulate, stability, Prepared};
use filmflow::energy::EnergyBreakdown;
use filmflow::evolution::RunStatus;
use filmflow::grid::fmt_num;
use filmflow::Error;

#[derive(Parser)]
#[command(name = "filmflow", version, about = "Evolution and stability of strained epitaxial films")]
struct Cli {
    /// Worker threads; 1 gives the reference single-thread run.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the time evolution and write per-step output.
    Simulate(Common),
    /// Run the stability experiment named by `experiment`.
    Stability(Common),
    /// Run the self-test battery.
    Check(Common),
    /// Print the energy of the initial configuration.
    Energy(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// `section.key=value`, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

enum Failure {
    Validation(Error),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Validation(e),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<Prepared, Failure> {
    let cfg = RunConfig::load(&common.config, &common.set).map_err(Failure::Validation)?;
    Prepared::new(&cfg).map_err(Failure::Validation)
}

fn execute(command: &Command) -> Result<(), Failure> {
    match command {
        Command::Simulate(c) => {
            let prep = load(c)?;
            let trace = simulate(&prep)?;
            eprintln!(
                "{}: {} steps, empirical T0 = {}",
                trace.status.label(),
                trace.records.len(),
                fmt_num(trace.safe_time())
            );
            match &trace.status {
                RunStatus::Completed | RunStatus::Saturated => Ok(()),
                RunStatus::SafeguardStop(m) => {
                    eprintln!("stopped by safeguard: {m}");
                    Ok(())
                }
                RunStatus::StepFailure(m) => Err(Failure::Runtime(format!("step failed: {m}"))),
                RunStatus::EnergyIncrease { step, increase } => {
                    Err(Failure::Runtime(format!("energy rose by {increase:e} at step {step}")))
                }
            }
        }
        Command::Stability(c) => {
            let prep = load(c)?;
            let report = stability(&prep)?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::Check(c) => {
            let prep = load(c)?;
            let items = run_battery(&prep.config)?;
            let mut failed = 0;
            for item in &items {
                let tag = if item.passed { "PASS" } else { "FAIL" };
                println!("{tag} {} {}", item.name, item.detail);
                failed += usize::from(!item.passed);
            }
            if failed > 0 {
                return Err(Failure::Runtime(format!("{failed} of {} checks failed", items.len())));
            }
            Ok(())
        }
        Command::Energy(c) => {
            let prep = load(c)?;
            let b = initial_energy(&prep)?;
            println!("{}", EnergyBreakdown::CSV_HEADER);
            println!("{}", b.csv_row(0, 0.0));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
