use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ssp_core::agent::Variant;
use ssp_core::harness::{self, RunConfig};
use ssp_core::Error;

#[derive(Parser)]
#[command(name = "ssp-sim", about = "Linear mixture SSP learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its per-episode CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "SSP_OUTPUT")]
        out: Option<PathBuf>,
    },
    /// Run a configuration over a seed range and several algorithms.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Inclusive range `a..b`.
        #[arg(long, default_value = "0..9")]
        seeds: String,
        /// Comma-separated list, e.g. `levis_pp,unweighted`.
        #[arg(long, default_value = "levis_pp")]
        algos: String,
        #[arg(long, env = "SSP_JOBS", default_value_t = 1)]
        jobs: usize,
        /// Directory for the per-run CSVs and `summary.csv`.
        #[arg(long, env = "SSP_OUTPUT", default_value = "sweep_out")]
        out: PathBuf,
    },
    /// Print the exact optimal values, hitting times and policy.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check that the environment defines valid transition distributions.
    ValidateEnv {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidInput(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::Config(format!("seed range must look like a..b, got '{spec}'"));
    let (a, b) = spec.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

fn parse_algos(spec: &str) -> Result<Vec<Variant>, Failure> {
    spec.split(',')
        .map(|s| s.trim().parse::<Variant>().map_err(Failure::from))
        .collect()
}

fn load(path: &Path) -> Result<RunConfig, Failure> {
    Ok(RunConfig::load(path)?)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if out.is_some() {
                cfg.output = out;
            }
            let rec = harness::run(&cfg)?;
            println!("algo            {}", rec.algo);
            println!("seed            {}", rec.seed);
            println!("config_digest   {:016x}", rec.config_digest);
            println!("episodes        {}", rec.episodes.len());
            println!("R_K             {:.6}", rec.final_regret());
            println!("R_K/K           {:.6}", rec.average_regret());
            println!("T               {}", rec.total_steps);
            println!(
                "J               {} (budget {:.1})",
                rec.devi_calls,
                rec.devi_budget()
            );
            println!(
                "coverage misses {}/{}",
                rec.coverage_violations, rec.interval_updates
            );
            println!("truncated       {}", rec.truncated_episodes);
            if let Some(path) = &cfg.output {
                println!("csv             {}", path.display());
            }
        }
        Command::Sweep {
            config,
            seeds,
            algos,
            jobs,
            out,
        } => {
            let base = load(&config)?;
            let mut configs = Vec::new();
            for algo in parse_algos(&algos)? {
                for &seed in &parse_seeds(&seeds)? {
                    let mut cfg = base.clone();
                    cfg.algo = algo;
                    cfg.seed = seed;
                    cfg.output = Some(out.join(format!("{algo}_seed{seed}.csv")));
                    configs.push(cfg);
                }
            }
            let (rows, _) = harness::sweep(&configs, jobs)?;
            let summary = out.join("summary.csv");
            harness::write_sweep_table(&summary, &rows)?;
            println!("{}", harness::SWEEP_HEADER);
            for row in &rows {
                println!("{}", row.to_csv());
            }
            println!("summary written to {}", summary.display());
        }
        Command::Oracle { config } => {
            let cfg = load(&config)?;
            print!("{}", harness::oracle(&cfg.env)?.to_toml());
        }
        Command::ValidateEnv { config } => {
            let cfg = load(&config)?;
            let env = cfg.env.build()?;
            env.validate()?;
            println!(
                "ok: {} states, {} actions, d = {}, c_min = {}",
                env.num_states(),
                env.num_actions(),
                env.dim(),
                env.c_min()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
