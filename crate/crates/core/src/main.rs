use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stackcnn::cli::{self, exit, CliError, CliResult};
use stackcnn::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "stackcnn", version, about = "Stacked ensembles of shallow text CNNs")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Number of sampled configurations.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Cross-validation folds per ensemble.
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// Stack sizes, comma separated.
    #[arg(long = "top-k", global = true, value_delimiter = ',')]
    top_k: Option<Vec<usize>>,
    /// Output directory (`predict`: output file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check datasets and embedding files and print the class distribution.
    Validate,
    /// Random search: train one fold ensemble per sampled configuration.
    Search,
    /// Write the stacked manifest of the top-K ensembles of a search.
    Stack,
    /// Score a stacked ensemble on a labeled dataset.
    Evaluate {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write per-example predictions of a stacked ensemble.
    Predict {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Fixed-filter-size ablation (mean and std of ensemble scores).
    AblateFilters {
        /// Filter sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        runs: Option<usize>,
    },
}

/// `out_is_run_dir` is false for commands whose `--out` names something else.
fn load_config(g: &GlobalArgs, out_is_run_dir: bool) -> CliResult<RunConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| CliError::usage("--config is required"))?;
    let mut cfg = RunConfig::load(path)?;
    let out = g.out.clone().filter(|_| out_is_run_dir);
    cfg.apply(&Overrides {
        seed: g.seed,
        jobs: g.jobs,
        n: g.n,
        folds: g.folds,
        top_k: g.top_k.clone(),
        out,
    });
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    let out_is_run_dir = !matches!(cli.command, Command::Predict { .. } | Command::Evaluate { .. });
    let mut cfg = load_config(g, out_is_run_dir)?;
    let jobs = cfg.jobs.unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| CliError {
            code: exit::RUNTIME,
            message: e.to_string(),
        })?;

    match cli.command {
        Command::Validate => print!("{}", cli::cmd_validate(&cfg)?),
        Command::Search => print!("{}", cli::cmd_search(&cfg)?),
        Command::Stack => {
            for &k in &cfg.top_k {
                let path = cli::cmd_stack(&cfg, k)?;
                println!("{}", path.display());
            }
        }
        Command::Evaluate { stack, data } => {
            let (_, text) = cli::cmd_evaluate(&cfg, &stack, &data, g.out.as_deref())?;
            print!("{text}");
        }
        Command::Predict { stack, input } => {
            let output = g
                .out
                .clone()
                .ok_or_else(|| CliError::usage("predict needs --out <file>"))?;
            cli::cmd_predict(&cfg, &stack, &input, &output)?;
        }
        Command::AblateFilters { sizes, runs } => {
            if let Some(s) = sizes {
                cfg.ablation.sizes = s;
            }
            if let Some(r) = runs {
                cfg.ablation.runs = r;
            }
            print!("{}", cli::cmd_ablate_filters(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
