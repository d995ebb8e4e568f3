use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bicopter_cli::config::{ScenarioConfig, ScenarioKind};
use bicopter_cli::output::{read_rows_file, summarize, to_long, write_long};
use bicopter_cli::runner::{describe, run_open_loop, run_scenario, write_result, ScenarioResult};
use bicopter_cli::CliError;
use bicopter_core::nmpc::RunOutcome;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bicopter", version, about = "Scenario runner for the bi-modal bi-copter simulator")]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Name of a bundled scenario.
    #[arg(long)]
    scenario: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Plays the flatness feed-forward inputs open loop.
    Simulate(ScenarioArgs),
    /// Closed-loop tracking (track and energy_compare scenarios).
    Track(ScenarioArgs),
    /// Full vehicle against the zero-net-tilt ablation.
    Benchmark(ScenarioArgs),
    /// Layout width and steering tables, or the summary of a run CSV.
    Analyze {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Summarize this run CSV instead of a scenario.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Converts a run CSV into long format `(series, t, value)`.
    Export {
        /// Run CSV to convert.
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load(args: &ScenarioArgs, default: Option<&str>) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match (&args.config, &args.scenario, default) {
        (Some(path), _, _) => ScenarioConfig::load(path)?,
        (None, Some(name), _) => ScenarioConfig::bundled(name)?,
        (None, None, Some(name)) => ScenarioConfig::bundled(name)?,
        (None, None, None) => return Err(CliError::Config("pass --config <path> or --scenario <name>".into())),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn require(cfg: &ScenarioConfig, allowed: &[ScenarioKind], command: &str) -> Result<(), CliError> {
    if allowed.contains(&cfg.kind) {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "scenario `{}` has kind {:?}, which `{command}` does not run",
            cfg.name, cfg.kind
        )))
    }
}

fn finish(result: &ScenarioResult, cfg: &ScenarioConfig, out: &Path, quiet: bool) -> Result<(), CliError> {
    let files = write_result(result, cfg, out)?;
    if !quiet {
        println!("{}", describe(result));
        for f in files {
            println!("wrote {}", f.display());
        }
    }
    match result.failure() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Simulate(args) => {
            let cfg = load(&args, None)?;
            require(&cfg, &[ScenarioKind::Track], "simulate")?;
            let traj = cfg.build_trajectory()?;
            let r = run_open_loop(&cfg.name, &traj, &cfg.params()?, cfg.contact(), &cfg.loop_config())?;
            finish(&ScenarioResult::Track(r), &cfg, &args.out, quiet)
        }
        Command::Track(args) => {
            let cfg = load(&args, None)?;
            require(&cfg, &[ScenarioKind::Track, ScenarioKind::EnergyCompare], "track")?;
            finish(&run_scenario(&cfg)?, &cfg, &args.out, quiet)
        }
        Command::Benchmark(args) => {
            let cfg = load(&args, Some("benchmark_slippery"))?;
            require(&cfg, &[ScenarioKind::Benchmark], "benchmark")?;
            finish(&run_scenario(&cfg)?, &cfg, &args.out, quiet)
        }
        Command::Analyze { scenario, log } => {
            if let Some(path) = log {
                let rows = read_rows_file(&path)?;
                let label = path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
                let summary = summarize(&label, &RunOutcome::Completed, &rows, None, None);
                println!("{}", serde_json::to_string_pretty(&summary)?);
                return Ok(());
            }
            let cfg = load(&scenario, Some("narrow_gap_width_report"))?;
            require(&cfg, &[ScenarioKind::WidthReport], "analyze")?;
            finish(&run_scenario(&cfg)?, &cfg, &scenario.out, quiet)
        }
        Command::Export { log, out } => {
            let rows = read_rows_file(&log)?;
            std::fs::create_dir_all(&out)?;
            let stem = log.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
            let path = out.join(format!("{stem}_long.csv"));
            let file = std::fs::File::create(&path)?;
            write_long(std::io::BufWriter::new(file), &to_long(&rows))?;
            if !quiet {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
