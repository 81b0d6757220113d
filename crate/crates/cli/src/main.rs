use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use richards_sdre::runner::sweep::{sweep, GridSpec};
use richards_sdre::runner::{preset, preset_text, run_to_dir, verify, ExperimentConfig, RunMode};
use richards_sdre::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_SIMULATION: u8 = 3;

#[derive(Parser)]
#[command(name = "richards-sdre", version, about = "Feedback-controlled irrigation on a 1-D soil column")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a config file.
    Run(RunArgs),
    /// Run a parameter grid over a base config.
    Sweep(SweepArgs),
    /// Run the property checks and print a JSON report.
    Verify {
        /// Only run checks whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Config utilities.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print an embedded preset.
    Export { name: String },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = ["controlled", "uncontrolled", "both"])]
    mode: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: Source,
    /// e.g. "seed=1..10;lambda=1e-5,1e-4"
    #[arg(long)]
    grid: String,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

fn load(source: &Source) -> Result<ExperimentConfig, Error> {
    match (&source.preset, &source.config) {
        (Some(name), _) => preset(name),
        (None, Some(path)) => ExperimentConfig::from_path(path),
        (None, None) => Err(Error::Config("either --preset or --config is required".into())),
    }
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        Error::Config(_) | Error::InvalidParams(_) => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::from(EXIT_SIMULATION),
    }
}

fn run(args: RunArgs) -> ExitCode {
    let mut cfg = match load(&args.source) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = &args.mode {
        cfg.mode = match mode.parse::<RunMode>() {
            Ok(m) => m,
            Err(e) => return fail(&e),
        };
    }
    let out = args.out.unwrap_or_else(|| cfg.output.dir.clone());
    match run_to_dir(&cfg, &out) {
        Ok(summary) => {
            let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6e}"));
            println!(
                "{}: uncontrolled {} controlled {} ratio {} ({:.2}s) -> {}",
                summary.name,
                show(summary.total_cost_uncontrolled),
                show(summary.total_cost_controlled),
                summary.cost_ratio.map_or("-".to_string(), |r| format!("{r:.4}")),
                summary.wall_time,
                out.display()
            );
            if summary.failed() {
                for e in &summary.errors {
                    eprintln!("error: {e}");
                }
                return ExitCode::from(EXIT_SIMULATION);
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn run_sweep(args: SweepArgs) -> ExitCode {
    let base = match load(&args.source) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let grid: GridSpec = match args.grid.parse() {
        Ok(g) => g,
        Err(e) => return fail(&e),
    };
    match sweep(&base, &grid, &args.out, args.jobs) {
        Ok(results) => {
            let failed = results.iter().filter(|r| r.failed()).count();
            println!(
                "{} cells, {} failed -> {}",
                results.len(),
                failed,
                args.out.join("aggregate.csv").display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn run_verify(filter: Option<&str>) -> ExitCode {
    let report = verify::run(filter);
    for check in &report {
        eprintln!(
            "{:<24} {} measured {:.3e} {} {:.3e}",
            check.name,
            if check.passed { "PASS" } else { "FAIL" },
            check.measured,
            check.criterion,
            check.tolerance
        );
    }
    match serde_json::to_string_pretty(&report) {
        Ok(json) => println!("{json}"),
        Err(e) => eprintln!("error: {e}"),
    }
    if report.is_empty() {
        eprintln!("error: no check matches the filter");
        return ExitCode::FAILURE;
    }
    if report.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Verify { filter } => run_verify(filter.as_deref()),
        Command::Config { action: ConfigAction::Export { name } } => match preset_text(&name) {
            Some(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            None => fail(&preset(&name).expect_err("unknown preset")),
        },
    }
}
