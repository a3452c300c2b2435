use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use rbsde_core::games::GameMode;
use rbsde_lab::runner::{exit_code, run_batch};
use rbsde_lab::scenario::ToleranceSpec;
use rbsde_lab::{Command, Options};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CommandArg {
    /// Solve the reflected BSDE and check minimality.
    Solve,
    /// Exhaustive game values against the solution.
    Game,
    /// Exact and epsilon saddle points.
    Saddle,
    /// Every invariant the scenario admits.
    Verify,
    /// Truncation scheme for the driver.
    Approx,
    /// Brute-force enumeration against the recursions.
    Oracle,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Extended,
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

/// Doubly reflected BSDEs and Dynkin games on a two-phase binary tree.
///
/// Exit code 0 when every asserted check passes, 1 on a failed check or
/// solver error, 2 on invalid input.
#[derive(Debug, Parser)]
#[command(name = "rbsde-lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: CommandArg,
    /// Scenario files; several run as a batch.
    #[arg(required = true)]
    scenarios: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "extended")]
    mode: ModeArg,
    /// Epsilon values for the saddle sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 0.1, 0.05, 0.025])]
    epsilon: Vec<f64>,
    /// First artificial cut step of the truncation scheme.
    #[arg(long)]
    cut_step: Option<usize>,
    /// Largest tree depth for exhaustive enumeration.
    #[arg(long, default_value_t = 3)]
    enum_bound: usize,
    /// Saddle points are computed at `AT(theta_step)`.
    #[arg(long, default_value_t = 0)]
    theta_step: usize,
    /// Output directory; reports go to stdout without it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `csv` also writes process dumps (requires --out).
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    #[arg(long)]
    n_max: Option<f64>,
    #[arg(long)]
    m_max: Option<f64>,
    #[arg(long)]
    tol_root: Option<f64>,
    #[arg(long)]
    tol_comp: Option<f64>,
    #[arg(long)]
    tol_conv: Option<f64>,
    #[arg(long)]
    tol_game: Option<f64>,
    #[arg(long)]
    tol_class: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        CommandArg::Solve => Command::Solve,
        CommandArg::Game => Command::Game,
        CommandArg::Saddle => Command::Saddle,
        CommandArg::Verify => Command::Verify,
        CommandArg::Approx => Command::Approx,
        CommandArg::Oracle => Command::Oracle,
    };
    let csv = cli.format == FormatArg::Csv;
    if csv && cli.out.is_none() {
        eprintln!(
            "{}",
            serde_json::json!({"status": "input_error", "message": "--format csv requires --out"})
        );
        return ExitCode::from(2);
    }
    if let Some(dir) = &cli.out {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!(
                "{}",
                serde_json::json!({"status": "io_error", "message": format!("cannot create {}: {e}", dir.display())})
            );
            return ExitCode::from(2);
        }
    }
    let options = Options {
        mode: match cli.mode {
            ModeArg::Extended => GameMode::Extended,
            ModeArg::Plain => GameMode::Plain,
        },
        epsilons: cli.epsilon,
        cut_step: cli.cut_step,
        enum_bound: cli.enum_bound,
        theta_step: cli.theta_step,
        n_max: cli.n_max,
        m_max: cli.m_max,
        tolerances: ToleranceSpec {
            root: cli.tol_root,
            comp: cli.tol_comp,
            conv: cli.tol_conv,
            game: cli.tol_game,
            class: cli.tol_class,
            max_iter: cli.max_iter,
        },
    };
    let results = run_batch(command, &cli.scenarios, &options, cli.out.as_deref(), csv);
    for r in &results {
        if cli.out.is_none() {
            if let Some(report) = &r.report {
                print!("{report}");
            }
        }
        if let Some(failure) = &r.failure {
            eprintln!("{failure}");
        }
    }
    ExitCode::from(exit_code(&results) as u8)
}
