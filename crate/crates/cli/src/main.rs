use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sphereot::bench::BenchGrid;
use sphereot::evolution::EvolveConfig;
use sphereot::sliced::Method;
use sphereot::weighting::EnergyKind;
use sphereot_cli::{cmd_bench, cmd_distance, cmd_evolve, cmd_flow, load_config, preset, CliError, CliResult, DistanceConfig, FlowRunConfig, Overrides};

#[derive(Parser)]
#[command(name = "sphereot", version, about = "Sliced optimal transport on the sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a distance between two sample sets; prints a JSON report.
    Distance,
    /// Run a particle gradient flow; writes trajectory and metrics files.
    Flow {
        /// Named experiment preset used when no config is given.
        #[arg(long, default_value = "mini")]
        preset: String,
    },
    /// Sweep one parameter and write a CSV of medians and dispersions.
    Evolve,
    /// Time the estimators over a grid and write a CSV.
    Bench,
}

#[derive(Args)]
struct Common {
    /// JSON config file for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; CSV output goes to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    method: Option<Method>,
    #[arg(long, global = true)]
    kind: Option<EnergyKind>,
    #[arg(long, global = true)]
    p: Option<u32>,
    /// Number of projection directions.
    #[arg(long = "L", global = true)]
    directions: Option<usize>,
    /// Include wallclock times in the output.
    #[arg(long, global = true)]
    timing: bool,
}

fn config_or_default<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> CliResult<T> {
    path.as_deref().map_or_else(|| Ok(T::default()), load_config)
}

fn write_csv(out: &Option<PathBuf>, name: &str, body: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io(dir))?;
            let path = dir.join(name);
            let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
            body(&mut w)?;
            w.flush().map_err(io(&path))
        }
        None => {
            let mut w = BufWriter::new(std::io::stdout().lock());
            body(&mut w)?;
            w.flush().map_err(io(Path::new("<stdout>")))
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let c = &cli.common;
    let ov = Overrides { seed: c.seed, threads: c.threads, method: c.method, kind: c.kind, p: c.p, directions: c.directions };
    match cli.command {
        Command::Distance => {
            let path = c.config.as_deref().ok_or_else(|| CliError::Config("distance needs --config".into()))?;
            let cfg: DistanceConfig = load_config(path)?;
            let report = cmd_distance(cfg, &ov, c.timing)?;
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
        }
        Command::Flow { preset: name } => {
            let cfg: FlowRunConfig = match &c.config {
                Some(path) => load_config(path)?,
                None => preset(&name)?,
            };
            let out = c.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let summary = cmd_flow(cfg, &ov, &out, c.timing)?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
        }
        Command::Evolve => {
            let cfg: EvolveConfig = config_or_default(&c.config)?;
            write_csv(&c.out, "evolution.csv", |w| cmd_evolve(cfg, &ov, w))?;
        }
        Command::Bench => {
            let grid: BenchGrid = config_or_default(&c.config)?;
            write_csv(&c.out, "bench.csv", |w| cmd_bench(grid, &ov, w))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPHEREOT_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
