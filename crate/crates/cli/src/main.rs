use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use skylink_core::geometry::{propagate_pass, write_pass_csv};
use skylink_core::mission::bench::{ao_bench, channel_bench, write_channel_csv, AoBenchConfig};
use skylink_core::mission::report::{read_report, ReportError, ReportFormat};
use skylink_core::mission::scenario::{load_scenario, ScenarioConfig, ScenarioError};
use skylink_core::mission::{run_mission, serialize_artifacts, write_outputs, MissionError};

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_PROTOCOL_ABORT: u8 = 3;

#[derive(Parser)]
#[command(name = "qkd-skylink", version, about = "Deterministic LEO-to-ground decoy-state BB84 pass simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one pass end to end and write every artifact into --out.
    Run {
        /// Scenario file; the bundled default when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Override the scenario's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Run twice and fail unless every artifact is byte-identical.
        #[arg(long)]
        deterministic_check: bool,
    },
    /// Print the pass geometry as CSV.
    Pass {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare open- and closed-loop fibre coupling on frozen-flow screens.
    AoBench {
        #[arg(long, default_value_t = 10.0)]
        d_over_r0: f64,
        #[arg(long, default_value_t = 10.0)]
        wind: f64,
        #[arg(long, default_value_t = 2000.0)]
        rate: f64,
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Per-step CSV output.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Link budget along the pass as CSV.
    ChannelBench {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a report.json for internal consistency and print it.
    Report {
        path: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

enum Failure {
    Validation(String),
    Abort(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => EXIT_VALIDATION,
            Failure::Abort(_) => EXIT_PROTOCOL_ABORT,
            Failure::Other(_) => EXIT_FAILURE,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Abort(m) | Failure::Other(m) => m,
        }
    }
}

impl From<MissionError> for Failure {
    fn from(e: MissionError) -> Self {
        if e.is_protocol_violation() {
            Failure::Abort(e.to_string())
        } else if matches!(e, MissionError::Config(_)) {
            Failure::Validation(e.to_string())
        } else {
            Failure::Other(e.to_string())
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Failure::Other(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Other(format!("{}: {e}", path.display()))
}

fn scenario(path: Option<&Path>, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match path {
        Some(p) => load_scenario(p)?,
        None => ScenarioConfig::bundled_default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Write through `f` into `path`, or to stdout when no path is given.
fn emit(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(io_failure(p))?);
            f(&mut w).and_then(|_| w.flush()).map_err(io_failure(p))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock).map_err(|e| Failure::Other(format!("stdout: {e}")))
        }
    }
}

fn run(scenario_path: Option<&Path>, seed: Option<u64>, out: &Path, check: bool) -> Result<(), Failure> {
    let cfg = scenario(scenario_path, seed)?;
    info!("running pass with seed {}", cfg.seed);
    let artifacts = run_mission(&cfg)?;
    if check {
        let again = run_mission(&cfg)?;
        let (a, b) = (serialize_artifacts(&artifacts), serialize_artifacts(&again));
        let names: Vec<&str> = a.iter().map(|(n, _)| *n).collect();
        if a != b {
            let differing: Vec<&str> = a
                .iter()
                .zip(&b)
                .filter(|(x, y)| x != y)
                .map(|((n, _), _)| *n)
                .collect();
            return Err(Failure::Other(format!(
                "determinism check failed: {} differ between runs",
                if differing.is_empty() { "artifact sets".to_string() } else { differing.join(", ") }
            )));
        }
        println!("determinism check passed: {} byte-identical", names.join(", "));
    }
    write_outputs(out, &artifacts)?;
    let r = &artifacts.report;
    println!(
        "seed {}  availability {:.3}  sifted {}  qber {:.4}  final key {} bits  projected {:.1} bit/s",
        r.seed, r.availability_fraction, r.sifted_bits, r.qber, r.final_key_bits, r.projected_key_rate_bps
    );
    println!("artifacts written to {}", out.display());
    if let Some(reason) = &r.abort_reason {
        return Err(Failure::Abort(format!("protocol abort: {reason}")));
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            deterministic_check,
        } => run(scenario.as_deref(), seed, &out, deterministic_check),
        Command::Pass { scenario: path, out } => {
            let cfg = scenario(path.as_deref(), None)?;
            let pass = propagate_pass(&cfg.orbit, &cfg.station, cfg.pass_step_s)
                .map_err(|e| Failure::Validation(e.to_string()))?;
            emit(out.as_deref(), |w| write_pass_csv(pass.samples(), w))
        }
        Command::AoBench {
            d_over_r0,
            wind,
            rate,
            duration,
            seed,
            csv,
        } => {
            let mut cfg = AoBenchConfig {
                d_over_r0,
                wind_speed_mps: wind,
                duration_s: duration,
                seed,
                ..AoBenchConfig::default()
            };
            cfg.loop_cfg.rate_hz = rate;
            let result = ao_bench(&cfg).map_err(|e| match e {
                MissionError::Ao(_) | MissionError::Config(_) => Failure::Validation(e.to_string()),
                other => Failure::from(other),
            })?;
            println!(
                "steps {}  open-loop eta {:.4}  closed-loop eta {:.4}  benefit {:.2}x",
                result.open_loop.len(),
                result.open_loop_mean,
                result.closed_loop_mean,
                result.benefit()
            );
            if let Some(p) = csv {
                emit(Some(&p), |w| result.write_csv(w))?;
            }
            Ok(())
        }
        Command::ChannelBench {
            scenario: path,
            seed,
            out,
        } => {
            let cfg = scenario(path.as_deref(), seed)?;
            let rows = channel_bench(&cfg)?;
            emit(out.as_deref(), |w| write_channel_csv(&rows, w))
        }
        Command::Report { path, format } => {
            let report = read_report(&path).map_err(|e| match e {
                ReportError::Io { .. } => Failure::Other(e.to_string()),
                ReportError::Json { .. } => Failure::Validation(e.to_string()),
            })?;
            let errors = report.consistency_errors();
            let format = match format {
                Format::Json => ReportFormat::Json,
                Format::Csv => ReportFormat::Csv,
            };
            emit(None, |w| report.write(format, w))?;
            if !errors.is_empty() {
                return Err(Failure::Validation(format!(
                    "report is inconsistent:\n  {}",
                    errors.join("\n  ")
                )));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            Failure::Validation(String::new()).code(),
            Failure::Abort(String::new()).code(),
            Failure::Other(String::new()).code(),
        ];
        assert_eq!(codes, [2, 3, 1]);
    }

    #[test]
    fn parse_errors_are_validation_failures() {
        let f = Failure::from(ScenarioError::Parse("bad".into()));
        assert_eq!(f.code(), EXIT_VALIDATION);
    }

    #[test]
    fn missing_parent_directory_is_an_error() {
        let dir = std::env::temp_dir().join(format!("qkd-skylink-unit-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        assert!(emit(Some(&dir.join("missing").join("x.csv")), |_| Ok(())).is_err());
    }
}
