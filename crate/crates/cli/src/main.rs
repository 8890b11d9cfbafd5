use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kp_core::lattice::PerturbationKind;
use kp_spectral::{commands, CliError, CliResult, Format, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "kp-spectral",
    version,
    about = "Spectral experiments for perturbed Kronig-Penney operators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Band edges, critical points and L(k) plot data.
    Bands,
    /// Propagate the boundary solution at one energy and check its asymptotics.
    Propagate,
    /// Subordinate solution and kappa* at every critical point.
    Eigenscan,
    /// Finite-section distance from 0 to spec(B - M(lambda)) on a gap grid.
    Gapscan,
    /// Transfer-matrix decomposition and remainder series at one energy.
    Decompose,
    /// Invariant checks on the configured model.
    Selfcheck,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    None,
    Amplitude,
    Positional,
}

impl From<Model> for PerturbationKind {
    fn from(m: Model) -> Self {
        match m {
            Model::None => PerturbationKind::None,
            Model::Amplitude => PerturbationKind::AmplitudeWvN,
            Model::Positional => PerturbationKind::PositionalWvN,
        }
    }
}

#[derive(Args)]
struct Opts {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    model: Option<Model>,
    #[arg(long, global = true)]
    d: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    alpha0: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    c: Option<f64>,
    #[arg(long, global = true)]
    omega: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    kappa: Option<f64>,
    #[arg(long, global = true)]
    kmax: Option<f64>,
    /// Number of transfer steps.
    #[arg(long = "N", global = true)]
    n: Option<usize>,
    /// Energy for propagate and decompose.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    format: Option<Format>,
}

impl Opts {
    fn overrides(&self) -> Overrides {
        Overrides {
            model: self.model.map(Into::into),
            d: self.d,
            alpha0: self.alpha0,
            c: self.c,
            omega: self.omega,
            gamma: self.gamma,
            kappa: self.kappa,
            k_max: self.kmax,
            n: self.n,
            lambda: self.lambda,
            out: self.out.clone(),
            format: self.format,
        }
    }
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("KP_SPECTRAL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("KP_SPECTRAL_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    init_threads()?;
    let cfg = RunConfig::resolve(cli.opts.config.as_deref(), &cli.opts.overrides())?;
    let files = match cli.command {
        Command::Bands => commands::bands(&cfg)?.1,
        Command::Propagate => commands::propagate_cmd(&cfg)?.1,
        Command::Eigenscan => commands::eigenscan(&cfg)?.1,
        Command::Gapscan => commands::gapscan(&cfg)?.1,
        Command::Decompose => commands::decompose(&cfg)?.1,
        Command::Selfcheck => commands::selfcheck(&cfg)?.1,
    };
    Ok(files)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
