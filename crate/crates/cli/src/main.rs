use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use msb_cli::ingest::{ingest_codes, save_codes, CodeFormat};
use msb_cli::{discover_external, CliError, RunConfig, Runner, Target};

#[derive(Parser)]
#[command(name = "msb", version, about = "Manifold superposition benchmark")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON run configuration; defaults to the desk-scale config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory.
    #[arg(long, global = true, default_value = "msb-run")]
    out: PathBuf,

    /// Start from the paper-scale defaults instead of desk scale.
    #[arg(long, global = true, conflicts_with = "config")]
    paper_scale: bool,

    /// Comma-separated TopK values to run; defaults to the configured list.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Build and calibrate the manifold zoo.
    Zoo {
        #[command(subcommand)]
        action: ZooAction,
    },
    /// Sample the training and evaluation mixtures.
    Data {
        #[command(subcommand)]
        action: DataAction,
    },
    /// Train one TopK SAE per k.
    Sae {
        #[command(subcommand)]
        action: SaeAction,
    },
    /// Restricted R², support size and receptive-field spread.
    Eval {
        #[command(subcommand)]
        action: EvalAction,
    },
    /// Capture certificates for trained dictionaries.
    Theory {
        #[command(subcommand)]
        action: TheoryAction,
    },
    /// Ising couplings and community discovery on SAE codes.
    Ising {
        #[command(subcommand)]
        action: IsingAction,
    },
    /// Bundle every stage into a single report.
    Report {
        #[command(subcommand)]
        action: ReportAction,
    },
    /// Convert an external code matrix to the binary layout.
    Ingest {
        #[command(subcommand)]
        action: IngestAction,
    },
}

#[derive(Subcommand)]
enum ZooAction {
    Build,
}

#[derive(Subcommand)]
enum DataAction {
    Generate,
}

#[derive(Subcommand)]
enum SaeAction {
    Train,
}

#[derive(Subcommand)]
enum EvalAction {
    Metrics,
}

#[derive(Subcommand)]
enum TheoryAction {
    Capture,
}

#[derive(Subcommand)]
enum ReportAction {
    Bundle,
}

#[derive(Subcommand)]
enum IsingAction {
    Fit(ExternalCodes),
    Discover(ExternalCodes),
}

#[derive(Args)]
struct ExternalCodes {
    /// Code matrix to analyze instead of the run's own SAE codes.
    #[arg(long)]
    codes: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = CodeFormat::Auto)]
    format: CodeFormat,
}

#[derive(Subcommand)]
enum IngestAction {
    Codes {
        #[arg(long)]
        input: PathBuf,

        #[arg(long, value_enum, default_value_t = CodeFormat::Auto)]
        format: CodeFormat,

        /// Destination file in the binary code layout.
        #[arg(long)]
        output: PathBuf,
    },
}

fn load_config(args: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match (&args.config, args.paper_scale) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, true) => RunConfig::paper_scale(),
        (None, false) => RunConfig::desk(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.out = args.out.clone();
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("MSB_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| CliError::Config(format!("MSB_THREADS must be a positive integer, got {value:?}")))?;
    if n == 0 {
        return Err(CliError::Config("MSB_THREADS must be positive".into()).into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run_target(args: &GlobalArgs, target: Target) -> anyhow::Result<bool> {
    let cfg = load_config(args)?;
    let ks = args.k.clone().unwrap_or_else(|| cfg.sae.k_list.clone());
    let mut runner = Runner::new(cfg)?;
    let manifest = runner.run(target, &ks)?;
    for failure in manifest.failures() {
        log::error!(
            "{} failed: {}",
            failure.stage,
            failure.error.as_deref().unwrap_or("unknown error")
        );
    }
    println!("{}", runner.layout().path(msb_cli::Layout::MANIFEST).display());
    Ok(!runner.manifest().has_failures())
}

fn run_external(args: &GlobalArgs, codes: &ExternalCodes, fit_only: bool) -> anyhow::Result<bool> {
    let Some(path) = &codes.codes else {
        let target = if fit_only { Target::IsingFit } else { Target::Discover };
        return run_target(args, target);
    };
    let cfg = load_config(args)?;
    let matrix = ingest_codes(path, codes.format).with_context(|| format!("reading {}", path.display()))?;
    let found = discover_external(&matrix, &cfg.ising, &args.out, fit_only)?;
    if let Some(found) = found {
        for w in &found.fit.warnings {
            log::warn!("{w}");
        }
        println!("{}", found.report_json()?);
    }
    Ok(true)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let args = &cli.global;
    match cli.command {
        Command::Zoo {
            action: ZooAction::Build,
        } => run_target(args, Target::Zoo),
        Command::Data {
            action: DataAction::Generate,
        } => run_target(args, Target::Data),
        Command::Sae {
            action: SaeAction::Train,
        } => run_target(args, Target::Train),
        Command::Eval {
            action: EvalAction::Metrics,
        } => run_target(args, Target::Eval),
        Command::Theory {
            action: TheoryAction::Capture,
        } => run_target(args, Target::Capture),
        Command::Report {
            action: ReportAction::Bundle,
        } => run_target(args, Target::Report),
        Command::Ising {
            action: IsingAction::Fit(codes),
        } => run_external(args, &codes, true),
        Command::Ising {
            action: IsingAction::Discover(codes),
        } => run_external(args, &codes, false),
        Command::Ingest {
            action: IngestAction::Codes { input, format, output },
        } => {
            let codes = ingest_codes(&input, format).with_context(|| format!("reading {}", input.display()))?;
            save_codes(&codes, &output).with_context(|| format!("writing {}", output.display()))?;
            println!("{} x {} codes -> {}", codes.n_rows(), codes.n_cols(), output.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<CliError>())
                .map_or(3, CliError::exit_code);
            ExitCode::from(code)
        }
    }
}
