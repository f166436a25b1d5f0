use std::fmt::Write as _;
use std::io::{ErrorKind, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use ddm_sim::attack::{leakage_report, SPY_NAME};
use ddm_sim::report::{emit_csv, render_table, rows_to_csv, run_bench, Mode};
use ddm_sim::{engine, parse_scenario, ActionMap, Error, KeySpec, Result, Scenario, SecretKey};

/// Deterministic SMT port-contention simulator with demand-driven core halting.
#[derive(Debug, Parser)]
#[command(name = "ddm-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and print its timeline.
    Run { scenario: PathBuf },
    /// Run the victim/spy scenario, write the spy trace and print a leakage report.
    Attack(AttackArgs),
    /// Compare total cycles across mitigation modes.
    Bench(BenchArgs),
    /// Print the resolved action map, or a single entry.
    Actionmap(ActionmapArgs),
}

#[derive(Debug, Args)]
struct AttackArgs {
    scenario: PathBuf,
    /// Secret key as hex digits (4 bits each).
    #[arg(long, conflicts_with = "random_bits")]
    key: Option<String>,
    /// Draw a random key of this many bits from the scenario seed.
    #[arg(long)]
    random_bits: Option<usize>,
    /// Where to write the spy trace CSV.
    #[arg(long, default_value = "spy_trace.csv")]
    trace: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    scenario: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "smt-on,ddm,static-off")]
    modes: Vec<Mode>,
    /// Also write the rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ActionmapArgs {
    #[arg(long, requires = "pd")]
    sd: Option<u8>,
    #[arg(long, requires = "sd")]
    pd: Option<u8>,
    /// Apply the action overrides of this scenario.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LogLevel {
    Quiet,
    Timeline,
    Debug,
}

fn log_level() -> LogLevel {
    match std::env::var("DDM_SIM_LOG").ok().as_deref() {
        Some("quiet") => LogLevel::Quiet,
        Some("debug") => LogLevel::Debug,
        _ => LogLevel::Timeline,
    }
}

fn load(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

fn cmd_run(out: &mut String, path: &Path, level: LogLevel) -> Result<()> {
    let scn = load(path)?;
    let workload = scn.build(None, 0)?;
    match engine::run(&workload) {
        Ok(result) => {
            if level == LogLevel::Quiet {
                let _ = writeln!(out, "total_cycles={}", result.total_cycles);
            } else {
                out.push_str(&result.render_timeline());
            }
            Ok(())
        }
        Err(Error::Deadline {
            budget,
            unfinished,
            partial,
        }) => {
            if level != LogLevel::Quiet {
                out.push_str(&partial.render_timeline());
            }
            Err(Error::Deadline {
                budget,
                unfinished,
                partial,
            })
        }
        Err(e) => Err(e),
    }
}

fn cmd_attack(out: &mut String, args: &AttackArgs) -> Result<()> {
    let scn = load(&args.scenario)?;
    let override_key = match (&args.key, args.random_bits) {
        (Some(hex), _) => Some(KeySpec::Literal(SecretKey::from_hex(hex)?)),
        (None, Some(n)) => Some(KeySpec::RandomBits(n)),
        (None, None) => None,
    };
    let key = scn.attack_key(override_key.as_ref())?;
    let run = scn.run_attack(&key)?;
    let other = scn.run_attack(&key.complement())?;
    let report = leakage_report(
        &run.recovered,
        &key,
        &run.trace,
        run.victim_window,
        &other.trace,
    )?;
    emit_csv(&args.trace, &run.trace.to_csv())?;
    let recovered = SecretKey::new(run.recovered.clone())?;
    out.push_str(&report.render());
    let _ = writeln!(out, "key={key}");
    let _ = writeln!(out, "recovered={recovered}");
    let _ = writeln!(
        out,
        "spy={}",
        scn.spy().map(|p| p.name.as_str()).unwrap_or(SPY_NAME)
    );
    let _ = writeln!(out, "trace_csv={}", args.trace.display());
    Ok(())
}

fn cmd_bench(out: &mut String, args: &BenchArgs) -> Result<()> {
    let scn = load(&args.scenario)?;
    let stem = args
        .scenario
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("workload");
    let rows = run_bench(&scn.bench_config(stem, args.modes.clone())?)?;
    out.push_str(&render_table(&rows));
    if let Some(path) = &args.csv {
        emit_csv(path, &rows_to_csv(&rows))?;
    }
    Ok(())
}

fn cmd_actionmap(out: &mut String, args: &ActionmapArgs) -> Result<()> {
    let map = match &args.scenario {
        Some(path) => load(path)?.action_map(),
        None => ActionMap::default(),
    };
    match (args.sd, args.pd) {
        (Some(sd), Some(pd)) => {
            let _ = writeln!(out, "{}", map.get(sd, pd)?);
        }
        _ => out.push_str(&map.render_table()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = log_level();
    if level == LogLevel::Debug {
        tracing_subscriber::fmt()
            .with_env_filter(EnvFilter::new("ddm_sim=debug"))
            .with_writer(std::io::stderr)
            .init();
    }

    let mut out = String::new();
    let outcome = match &cli.command {
        Command::Run { scenario } => cmd_run(&mut out, scenario, level),
        Command::Attack(args) => cmd_attack(&mut out, args),
        Command::Bench(args) => cmd_bench(&mut out, args),
        Command::Actionmap(args) => cmd_actionmap(&mut out, args),
    };
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = stdout
        .write_all(out.as_bytes())
        .and_then(|()| stdout.flush())
    {
        if e.kind() != ErrorKind::BrokenPipe {
            eprintln!("error: writing output: {e}");
            return ExitCode::from(2);
        }
    }
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
