use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advsysid::pipeline::config::{ExperimentConfig, RuleKind, SEED_ENV};
use advsysid::pipeline::experiments::{example1_with, example2_with, preset, run_batch_curves, run_stream_curves, Scale};
use advsysid::pipeline::{run_hybrid, write_timeline, PartialRun, Replicate};
use advsysid::realization::{estimated_block_size, tail_bound};
use advsysid::simkit::write_csv;
use advsysid::streaming::beta_threshold;
use advsysid::{linalg, Error};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

#[derive(Debug, Parser)]
#[command(name = "advsysid", version, about = "Identify LTI systems under sparse adversarial attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides ADVSYSID_SEED and the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replicate fan-out.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Preset scale for the example subcommands.
    #[arg(long, global = true, value_enum, default_value_t = ScaleArg::Desk)]
    scale: ScaleArg,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Use no ground truth: only objectives are reported and only the
    /// projected rule runs.
    #[arg(long, global = true)]
    no_oracle: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate attacked trajectories.
    Simulate,
    /// Batch estimator error curves.
    Batch,
    /// Streaming estimator error curves.
    Stream,
    /// Streaming until T*, then a single batch solve.
    Hybrid,
    /// Batch estimator curves on the example1 preset.
    Example1,
    /// Streaming estimator curves on the example2 preset.
    Example2,
    /// Print the theoretical quantities of a configuration.
    Bounds,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    Paper,
    Desk,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
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
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn env_seed() -> Result<Option<u64>, Error> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn load(cli: &Cli, fallback: Option<&str>) -> Result<ExperimentConfig, Error> {
    let mut cfg = match (&cli.config, fallback) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(Error::Config("this subcommand needs --config <path>".into())),
    };
    if let Some(seed) = cli.seed.or(env_seed()?) {
        cfg.seed = seed;
    }
    if let Some(n) = cli.replicates {
        cfg.replicates = n;
    }
    if cli.no_oracle {
        cfg.oracle = false;
        let before = cfg.stream.rules.len();
        cfg.stream.rules.retain(|r| *r == RuleKind::Projected);
        if cfg.stream.rules.len() < before {
            warn!("--no-oracle: dropping the best and polyak rules");
        }
        if cfg.stream.rules.is_empty() {
            cfg.stream.rules.push(RuleKind::Projected);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> Result<PathBuf, Error> {
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn workers(cli: &Cli) -> usize {
    cli.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn write_records(path: &Path, records: &[advsysid::pipeline::TimelineRecord]) -> Result<(), Error> {
    write_timeline(records, File::create(path)?)?;
    println!("{}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let Format::Csv = cli.format;
    match cli.command {
        Command::Simulate => simulate(cli),
        Command::Batch => {
            let cfg = load(cli, None)?;
            let records = run_batch_curves(&cfg, workers(cli))?;
            write_records(&out_dir(cli, &cfg)?.join("batch.csv"), &records)
        }
        Command::Stream => {
            let cfg = load(cli, None)?;
            let records = run_stream_curves(&cfg, workers(cli))?;
            write_records(&out_dir(cli, &cfg)?.join("stream.csv"), &records)
        }
        Command::Hybrid => {
            let cfg = load(cli, None)?;
            let path = out_dir(cli, &cfg)?.join("hybrid.csv");
            match run_hybrid(&cfg, workers(cli)) {
                Ok(records) => write_records(&path, &records),
                Err(PartialRun { records, error }) => {
                    if !records.is_empty() {
                        write_records(&path, &records)?;
                        warn!("wrote {} records before the failure", records.len());
                    }
                    Err(error)
                }
            }
        }
        Command::Example1 | Command::Example2 => {
            let scale = match cli.scale {
                ScaleArg::Paper => Scale::Paper,
                ScaleArg::Desk => Scale::Desk,
            };
            let (one, name) = match (&cli.command, scale) {
                (Command::Example1, Scale::Paper) => (true, "example1_paper"),
                (Command::Example1, Scale::Desk) => (true, "example1_desk"),
                (_, Scale::Paper) => (false, "example2_paper"),
                (_, Scale::Desk) => (false, "example2_desk"),
            };
            let cfg = load(cli, Some(name))?;
            let dir = out_dir(cli, &cfg)?;
            let paths = if one {
                example1_with(&cfg, workers(cli), &dir)?
            } else {
                example2_with(&cfg, workers(cli), &dir)?
            };
            for p in paths {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Bounds => bounds(cli),
    }
}

fn simulate(cli: &Cli) -> Result<(), Error> {
    let cfg = load(cli, None)?;
    let dir = out_dir(cli, &cfg)?;
    for i in 0..cfg.replicates {
        let rep = Replicate::generate(&cfg, i, cfg.k, cfg.t_total)?;
        let path = dir.join(format!("trajectory_{:03}.csv", i));
        write_csv(&rep.trajectory, File::create(&path)?)?;
        info!("replicate {i}: seed {}", rep.seed);
        println!("{}", path.display());
    }
    Ok(())
}

fn bounds(cli: &Cli) -> Result<(), Error> {
    let cfg = load(cli, None)?;
    let rep = Replicate::generate(&cfg, 0, cfg.k, cfg.k)?;
    let th = rep.theory(&cfg, cfg.k)?;
    let radius = advsysid::pipeline::hybrid::radius(&cfg, &rep, cfg.k);
    let c_norm = linalg::dense_spectral_norm(&rep.system.c);
    let b_norm = linalg::dense_spectral_norm(&rep.system.b);
    println!("k = {}", th.k);
    println!("p = {}", cfg.attack.probability(cfg.k));
    println!("q = {}", th.q);
    println!("margin = {}", th.margin());
    println!("nu = {}", th.nu);
    println!("rho = {}", th.rho);
    println!("psi = {}", rep.cert.psi);
    println!("t_star_scale = {}", th.t_star_scale);
    println!("error_bound = {}", th.error_bound);
    println!("radius = {radius}");
    println!("beta_threshold = {}", beta_threshold(radius, th.q, cfg.sigma));
    println!(
        "hankel_tail_bound = {}",
        tail_bound(&rep.cert, estimated_block_size(cfg.k), c_norm, b_norm)
    );
    Ok(())
}
