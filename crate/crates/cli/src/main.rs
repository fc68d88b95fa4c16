use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use refine_rd::converse::Which;
use refine_rd::par;
use refine_rd_cli::commands::{self, Common, ConverseArgs, SlopeSpec};
use refine_rd_cli::output::Units;
use refine_rd_cli::problem_io::load_problem;
use refine_rd_cli::CliError;

/// Rate-distortion and successive-refinement computations.
#[derive(Parser)]
#[command(name = "refine-rd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CommonArgs {
    /// Iteration cap (for gauss-demo, the number of closed-form steps).
    #[arg(long, global = true)]
    max_iters: Option<usize>,

    /// Accuracy target of each run, in nats.
    #[arg(long, global = true, default_value_t = 1e-9)]
    delta: f64,

    #[arg(long, global = true, value_enum, default_value_t = Units::Nats)]
    units: Units,

    /// Seed for Monte Carlo estimates.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output CSV; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Single-stage sweep over slopes.
    Rd {
        #[arg(long)]
        problem: PathBuf,
        /// lo:hi:count[:geom|lin]
        #[arg(long, default_value = "0.1:20:31:geom")]
        slopes: SlopeSpec,
    },
    /// Two-stage sweep over the second-stage slope.
    Sr {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, default_value = "0.1:20:31:geom")]
        slopes: SlopeSpec,
        #[arg(long, default_value_t = 1.0)]
        nu1: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda1: f64,
        /// Feasibility diagnostics; defaults to `<out>.sigma.csv`.
        #[arg(long)]
        diag: Option<PathBuf>,
    },
    /// Second-stage slice of the unit-variance Gaussian region.
    GaussDemo {
        #[arg(long, default_value_t = 1.0)]
        nu1: f64,
        #[arg(long, default_value_t = 5.0 / 9.0)]
        lambda1: f64,
        /// Second-stage slopes; 31 geometric samples by default.
        #[arg(long)]
        slopes: Option<SlopeSpec>,
    },
    /// Finite-blocklength converse bounds for a refinable source.
    Converse {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        d1: f64,
        #[arg(long)]
        d2: f64,
        #[arg(long, default_value_t = 1.0)]
        nu1: f64,
        /// Comma-separated blocklengths.
        #[arg(long, value_delimiter = ',', default_value = "10,20,50,100")]
        n: Vec<usize>,
        /// ln M1 / n in nats; defaults to R(d1).
        #[arg(long)]
        rate1: Option<f64>,
        /// ln M2 / n in nats; defaults to R(d2).
        #[arg(long)]
        rate2: Option<f64>,
        /// Defaults to ln n.
        #[arg(long)]
        gamma1: Option<f64>,
        #[arg(long)]
        gamma2: Option<f64>,
        #[arg(long, value_parser = ["1", "2", "3"], default_value = "1")]
        corollary: String,
        #[arg(long, default_value_t = 100_000)]
        mc_samples: usize,
    },
    /// Iterative results against the grid oracles.
    Oracle {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, default_value = "0.5:8:8:geom")]
        slopes: SlopeSpec,
        #[arg(long, default_value_t = 1.0)]
        nu1: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda1: f64,
        #[arg(long)]
        grid_steps: Option<usize>,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("REFINE_RD_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Validation(format!("REFINE_RD_THREADS must be a positive integer, got {v:?}")))?;
        par::configure_threads(n);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let c = Common {
        max_iters: cli.common.max_iters,
        delta: cli.common.delta,
        units: cli.common.units,
        seed: cli.common.seed,
        out: cli.common.out,
    };
    match cli.command {
        Command::Rd { problem, slopes } => {
            let p = load_problem(&problem)?;
            commands::rd(&p, &slopes.0, &c).context("rd")?;
        }
        Command::Sr {
            problem,
            slopes,
            nu1,
            lambda1,
            diag,
        } => {
            let p = load_problem(&problem)?;
            commands::sr(p.refinement()?, nu1, lambda1, &slopes.0, diag.as_deref(), &c).context("sr")?;
        }
        Command::GaussDemo { nu1, lambda1, slopes } => {
            commands::gauss_demo(nu1, lambda1, slopes.as_ref().map(|s| &s.0), &c).context("gauss-demo")?;
        }
        Command::Converse {
            problem,
            d1,
            d2,
            nu1,
            n,
            rate1,
            rate2,
            gamma1,
            gamma2,
            corollary,
            mc_samples,
        } => {
            let p = load_problem(&problem)?;
            let which = match corollary.as_str() {
                "1" => Which::Cor1,
                "2" => Which::Cor2,
                _ => Which::Cor3,
            };
            let args = ConverseArgs {
                d1,
                d2,
                nu1,
                blocklengths: n,
                rate1,
                rate2,
                gamma1,
                gamma2,
                which,
                mc_samples,
            };
            commands::converse(p.refinement()?, &args, &c).context("converse")?;
        }
        Command::Oracle {
            problem,
            slopes,
            nu1,
            lambda1,
            grid_steps,
        } => {
            let p = load_problem(&problem)?;
            commands::oracle(&p, nu1, lambda1, &slopes.0, grid_steps, &c).context("oracle")?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = match e.downcast_ref::<CliError>() {
                Some(ce) => ce.record(),
                None => CliError::Validation(format!("{e:#}")).record(),
            };
            eprintln!("{}", serde_json::to_string(&record).expect("error records serialize"));
            ExitCode::from(record.exit_code as u8)
        }
    }
}
