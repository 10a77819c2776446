use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rebel::harness::{self, ExperimentConfig, Method};

#[derive(Parser)]
#[command(name = "rebel", about = "Belief-consistency policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-seed training experiment.
    Train(TrainArgs),
    /// Compare completed experiments against a success threshold.
    Compare(CompareArgs),
    /// Replay evaluation episodes from a saved checkpoint as JSONL.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed list, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the method preset (grpo|b1|b2|rebel|statehash).
    #[arg(long)]
    method: Option<String>,
    /// Override the iteration count.
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    /// Config files of completed experiments; the first is the baseline.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    /// Success-rate threshold; defaults to the first config's.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Config file of a completed experiment (its output directory holds the
    /// checkpoint).
    #[arg(long)]
    config: PathBuf,
    /// Evaluation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of episodes to replay.
    #[arg(long, default_value_t = 1)]
    episodes: usize,
}

fn load_with_overrides(args: &TrainArgs) -> rebel::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(method) = &args.method {
        cfg.method = Method::parse(method).ok_or_else(|| {
            rebel::Error::InvalidConfig(format!("unknown method '{method}'"))
        })?;
        cfg.method.apply(&mut cfg.train);
    }
    if let Some(seeds) = &args.seed {
        if seeds.is_empty() {
            return Err(rebel::Error::InvalidConfig("empty seed list".into()));
        }
        cfg.seeds = seeds.clone();
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(iterations) = args.iterations {
        cfg.train.iterations = iterations;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> rebel::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = load_with_overrides(&args)?;
            eprintln!(
                "training method={} seeds={:?} iterations={} -> {}",
                cfg.method.name(),
                cfg.seeds,
                cfg.train.iterations,
                cfg.out_dir.display()
            );
            harness::run(&cfg)
        }
        Command::Compare(args) => {
            let configs = args
                .config
                .iter()
                .map(|p| ExperimentConfig::load(p))
                .collect::<rebel::Result<Vec<_>>>()?;
            let report = harness::compare(&configs, args.threshold)?;
            print!("{report}");
            Ok(())
        }
        Command::Replay(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            let stdout = std::io::stdout();
            harness::replay(&cfg, args.seed, args.episodes, &mut stdout.lock())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
