use std::path::PathBuf;
use std::process::ExitCode;

use aoi_lq_cli::{load_config, run, Axis, CliError, Command, Overrides};
use clap::{Args, Parser, Subcommand, ValueEnum};

const THREADS_ENV: &str = "AOI_LQ_THREADS";

/// Sensing-limited LQ zero-sum games: Riccati solution, sensing policy,
/// closed-loop simulation and sweeps.
#[derive(Parser)]
#[command(name = "aoi-lq", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing); overrides `output_dir` in the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides `sim.seed` (the base seed for sweeps).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    H,
    B,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the game Riccati equation and write solution.json.
    Solve(Common),
    /// Compute the budget-optimal sensing policy and write policy.json.
    Policy {
        #[command(flatten)]
        common: Common,
        /// Also write the age-cost table to age_costs.csv.
        #[arg(long)]
        dump_age_costs: bool,
        /// Also write the discounted value function to vi.csv.
        #[arg(long)]
        dump_vi: bool,
    },
    /// Simulate the closed loop and write trajectory.csv and summary.json.
    Simulate(Common),
    /// Sweep the mean cost over h or b.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: AxisArg,
    },
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    if n == 0 {
        return Err(format!("{THREADS_ENV} must be a positive integer"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let (common, command) = match cli.command {
        Cmd::Solve(c) => (c, Command::Solve),
        Cmd::Policy {
            common,
            dump_age_costs,
            dump_vi,
        } => (
            common,
            Command::Policy {
                dump_age_costs,
                dump_vi,
            },
        ),
        Cmd::Simulate(c) => (c, Command::Simulate),
        Cmd::Sweep { common, axis } => {
            let axis = match axis {
                AxisArg::H => Axis::H,
                AxisArg::B => Axis::B,
            };
            (common, Command::Sweep(axis))
        }
    };
    let result: Result<_, CliError> = load_config(&common.config).and_then(|cfg| {
        run(
            command,
            cfg,
            &Overrides {
                output: common.output,
                seed: common.seed,
            },
        )
    });
    match result {
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
