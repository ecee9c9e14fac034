use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use survmed::bootstrap::BootstrapConfig;
use survmed::csv_io::ColumnMapping;
use survmed::harness::{self, AnalysisOptions, HarnessError, RunOptions};
use survmed::mediation::MediationOptions;
use survmed::sim::{make_scenarios, Family, DEFAULT_SEED};
use survmed::TieMethod;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "survmed",
    version,
    about = "R²-based mediation effect sizes for Cox models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the Monte Carlo study for one scenario family.
    Simulate {
        /// Scenario family: S1, S2, M1, M2, M3, M4 or M5.
        #[arg(long)]
        family: Family,
        /// Replicates per configuration.
        #[arg(long)]
        q: Option<usize>,
        /// Override the sample size of every configuration.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long, default_value_t = TieMethod::Efron)]
        ties: TieMethod,
    },
    /// Analyse a CSV data set.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        /// Column mapping file (`time = ...`, `event = ...`, ...).
        #[arg(long)]
        config: PathBuf,
        /// Bootstrap replicates for percentile intervals.
        #[arg(long)]
        bootstrap: Option<usize>,
        /// Confidence level for bootstrap intervals.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Add an independent N(0,1) mediator as a negative control.
        #[arg(long)]
        random_control: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long, default_value_t = TieMethod::Efron)]
        ties: TieMethod,
    },
    /// Print the configuration grid of a family, one JSON object per line.
    ScenarioDump {
        #[arg(long)]
        family: Family,
    },
}

enum Failure {
    Usage(String),
    Run(HarnessError),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Run(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() {
                EXIT_DATA
            } else {
                EXIT_NUMERIC
            })
        }
    }
}

fn mediation_options(ties: TieMethod) -> MediationOptions {
    MediationOptions {
        ties,
        ..MediationOptions::default()
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate {
            family,
            q,
            n,
            seed,
            out,
            parallel,
            ties,
        } => {
            if q == Some(0) {
                return Err(Failure::Usage("--q must be at least 1".into()));
            }
            if parallel == Some(0) {
                return Err(Failure::Usage("--parallel must be at least 1".into()));
            }
            let opts = RunOptions {
                replications: q,
                n,
                seed: Some(seed),
                threads: parallel,
                mediation: mediation_options(ties),
            };
            let summaries = harness::run_family(family, &opts)?;
            for s in &summaries {
                eprintln!(
                    "{}: {} of {} replicates usable",
                    s.scenario_id, s.n_replicates, s.replications
                );
            }
            print_paths(&harness::write_family_outputs(&out, family, &summaries)?);
            Ok(())
        }
        Command::Analyze {
            data,
            config,
            bootstrap,
            level,
            random_control,
            out,
            seed,
            parallel,
            ties,
        } => {
            let mapping = read_mapping(&config)?;
            let bootstrap = bootstrap.map(|replicates| BootstrapConfig {
                replicates,
                level,
                seed,
                threads: parallel,
            });
            let options = AnalysisOptions {
                mediation: mediation_options(ties),
                bootstrap,
                random_control,
                seed,
            };
            let result = harness::run_analysis(&data, &mapping, &options)?;
            if result.dropped_rows > 0 {
                eprintln!("dropped {} rows with missing values", result.dropped_rows);
            }
            if let Some(failed) = result.bootstrap_failures {
                eprintln!("{failed} bootstrap replicates failed");
            }
            for m in &result.joint.measures {
                if m.r2_med_negative {
                    eprintln!("warning: negative mediated R² for {}", m.measure);
                }
            }
            print_paths(&harness::write_analysis_outputs(&out, &result)?);
            Ok(())
        }
        Command::ScenarioDump { family } => {
            let mut stdout = std::io::stdout().lock();
            for cfg in make_scenarios(family) {
                let line =
                    serde_json::to_string(&cfg).map_err(|e| Failure::Run(HarnessError::Json(e)))?;
                // a closed pipe (e.g. `| head`) is not an error worth reporting
                if writeln!(stdout, "{line}").is_err() {
                    break;
                }
            }
            Ok(())
        }
    }
}

fn read_mapping(path: &Path) -> Result<ColumnMapping, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    ColumnMapping::parse_config(&text).map_err(|e| Failure::Run(HarnessError::Input(e)))
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}
