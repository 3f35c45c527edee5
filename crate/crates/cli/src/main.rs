use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ideal_index::{IndexMethod, IndexOptions, WalshNegative, ZeroShares};
use ideal_index_cli::{self as cli, Outcome, RunConfig, SimulateConfig};

#[derive(Parser)]
#[command(name = "ideal-index", version, about = "Price indexes, their standard errors and dissimilarity measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bilateral indexes of every location against the base, with SEs.
    Bilateral(DataArgs),
    /// GEKS parities and SEs, and their comparison with bilateral Fisher.
    Geks(DataArgs),
    /// Dissimilarity matrices D1..D6 and item contributions.
    Dissimilarity(DataArgs),
    /// Bootstrap SEs next to the formula SEs.
    Bootstrap(DataArgs),
    /// Run the identity and property suite on random instances.
    Validate(ValidateArgs),
    /// Generate a law-of-one-price dataset with known parities.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to the number of CPUs. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated index methods (fisher, tornqvist, laspeyres, paasche, pd, sv, walsh, geks).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "error")]
    walsh_negative: WalshPolicy,
    /// Give zero shares zero weight in logarithmic and harmonic means instead of failing.
    #[arg(long)]
    tolerate_zero_shares: bool,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    prices: PathBuf,
    #[arg(long)]
    expenditures: PathBuf,
    /// Base location id; defaults to the last column.
    #[arg(long)]
    base: Option<String>,
    #[command(flatten)]
    common: Common,
    /// Logarithmic index behind D6.
    #[arg(long, default_value = "tornqvist")]
    d6_method: String,
    #[arg(long, default_value_t = 2000)]
    replications: usize,
    /// Also report dissimilarity values multiplied by 150.
    #[arg(long)]
    scale_150: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Optional dataset whose pairs against the base are checked too.
    #[arg(long, requires = "expenditures")]
    prices: Option<PathBuf>,
    #[arg(long, requires = "prices")]
    expenditures: Option<PathBuf>,
    #[arg(long)]
    base: Option<String>,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 150)]
    items: usize,
    /// Log price levels, one per location; the last is the base.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0.3,0")]
    log_levels: Vec<f64>,
    /// Standard deviation of the log price errors.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Correlation of the errors across locations.
    #[arg(long, default_value_t = 0.0)]
    correlation: f64,
    /// Also run a coverage experiment with this many replications.
    #[arg(long)]
    coverage: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WalshPolicy {
    Error,
    Drop,
}

fn parse_methods(list: &Option<Vec<String>>, default: &[IndexMethod]) -> Result<Vec<IndexMethod>> {
    match list {
        None => Ok(default.to_vec()),
        Some(v) => Ok(v.iter().map(|s| s.parse()).collect::<ideal_index::Result<Vec<_>>>()?),
    }
}

fn base_config(c: &Common, default_methods: &[IndexMethod]) -> Result<RunConfig> {
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = RunConfig::new(&c.out);
    cfg.seed = c.seed;
    cfg.methods = parse_methods(&c.methods, default_methods)?;
    cfg.index = IndexOptions {
        zero_shares: if c.tolerate_zero_shares { ZeroShares::Tolerate } else { ZeroShares::Reject },
        walsh_negative: match c.walsh_negative {
            WalshPolicy::Error => WalshNegative::Error,
            WalshPolicy::Drop => WalshNegative::Drop,
        },
    };
    Ok(cfg)
}

fn data_config(a: &DataArgs, default_methods: &[IndexMethod]) -> Result<RunConfig> {
    let mut cfg = base_config(&a.common, default_methods)?.with_inputs(&a.prices, &a.expenditures);
    cfg.base = a.base.clone();
    cfg.d6_method = a.d6_method.parse()?;
    cfg.replications = a.replications;
    cfg.scale_150 = a.scale_150;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Bilateral(a) => cli::run_bilateral(&data_config(&a, &IndexMethod::BILATERAL)?),
        Command::Geks(a) => cli::run_geks(&data_config(&a, &IndexMethod::BILATERAL)?),
        Command::Dissimilarity(a) => cli::run_dissimilarity(&data_config(&a, &IndexMethod::BILATERAL)?),
        Command::Bootstrap(a) => cli::run_bootstrap(&data_config(&a, &[IndexMethod::Fisher])?),
        Command::Validate(a) => {
            let mut cfg = base_config(&a.common, &IndexMethod::BILATERAL)?;
            cfg.prices = a.prices;
            cfg.expenditures = a.expenditures;
            cfg.base = a.base;
            cfg.trials = a.trials;
            cfg.inject_fault = a.inject_fault;
            let out = cli::run_validate(&cfg)?;
            let report = std::fs::read_to_string(&out.files[0])?;
            print!("{report}");
            Ok(out)
        }
        Command::Simulate(a) => {
            let mut cfg = base_config(&a.common, &[IndexMethod::Fisher, IndexMethod::Tornqvist])?;
            cfg.simulate = SimulateConfig {
                n_items: a.items,
                log_levels: a.log_levels,
                sigma: a.sigma,
                correlation: a.correlation,
                coverage_replications: a.coverage,
            };
            cli::run_simulate(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            for m in &out.messages {
                eprintln!("{m}");
            }
            for f in &out.files {
                eprintln!("wrote {}", f.display());
            }
            if out.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
