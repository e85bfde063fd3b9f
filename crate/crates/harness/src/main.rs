use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pathspace::{acceptance, checks, load, run_scenario, scenarios, HarnessError, RunOptions};

#[derive(Parser)]
#[command(name = "pathspace", version, about = "Path-space Monte Carlo checks for diffusions under metric flows")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file or built-in scenario.
    Run {
        /// Scenario file, or the name of a built-in scenario (see `list`).
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default 1).
        #[arg(long)]
        workers: Option<usize>,
        /// Write per-time estimator traces as CSV here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// List built-in scenarios.
    List,
    /// Describe a check operation.
    Describe { check: String },
    /// Run the acceptance suite.
    Acceptance {
        /// Only these criteria (1-15).
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
}

fn create(path: &PathBuf) -> Result<BufWriter<File>, HarnessError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })
}

fn run(cmd: Cmd) -> Result<i32, HarnessError> {
    match cmd {
        Cmd::Run { config, seed, paths, steps, out, workers, trace } => {
            let scenario = load(&config)?;
            let report = run_scenario(&scenario, &RunOptions { seed, paths, steps, workers })?;
            print!("{}", report.summary());
            if let Some(path) = &out {
                use std::io::Write;
                let mut w = create(path)?;
                writeln!(w, "{}", report.to_json()?).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
            }
            if let Some(path) = &trace {
                report
                    .write_trace_csv(create(path)?, true)
                    .map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
            }
            Ok(report.exit_code())
        }
        Cmd::List => {
            print!("{}", scenarios::list());
            Ok(0)
        }
        Cmd::Describe { check } => {
            print!("{}", checks::describe(&check)?);
            Ok(0)
        }
        Cmd::Acceptance { only } => {
            let bin = std::env::current_exe().ok();
            let results = acceptance::run(bin, &only, |r| println!("{r}"));
            let failed = results.iter().filter(|r| !r.pass).count();
            println!("{} of {} criteria passed", results.len() - failed, results.len());
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
