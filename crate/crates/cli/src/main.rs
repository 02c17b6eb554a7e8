use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use triscale_cli::plots::emit_plots;
use triscale_cli::{CliError, Pipeline, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "triscale", version, about = "Three-scale homogenization of reaction-diffusion in fractured porous media")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize the cells and tabulate the pore tensors.
    CellMicro(Common),
    /// Solve the time-periodic correctors on the fracture cell.
    CellMeso(Common),
    /// Assemble the effective coefficients.
    Upscale(Common),
    /// Solve the effective macroscopic problem.
    Macro(Common),
    /// Run the fine-scale simulations for every configured ε.
    Dns(Common),
    /// Compare fine-scale runs with the macro solution.
    Compare(Common),
    /// Multi-scale convergence probes.
    Msconv(Common),
    /// Every stage in order.
    All(Common),
    /// Check the configuration and print the derived constants.
    ValidateConfig(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory (overrides the configuration).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(short, long)]
    workers: Option<usize>,
    /// Period-defect tolerance of the corrector solves.
    #[arg(long)]
    tol_period: Option<f64>,
    /// Relative residual of each implicit corrector step.
    #[arg(long)]
    step_tol: Option<f64>,
    /// Relative residual of the macro and fine-scale linear solves.
    #[arg(long)]
    solver_tol: Option<f64>,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        if let Some(t) = self.tol_period {
            cfg.discretization.tol_period = t;
        }
        if let Some(t) = self.step_tol {
            cfg.discretization.step_tol = t;
        }
        if let Some(t) = self.solver_tol {
            cfg.discretization.macro_solver_tol = t;
            cfg.dns.solver_tol = t;
        }
        Ok(cfg)
    }
}

fn stages_of(cmd: &Command) -> Option<Vec<Stage>> {
    Some(match cmd {
        Command::CellMicro(_) => vec![Stage::CellMicro],
        Command::CellMeso(_) => vec![Stage::CellMeso],
        Command::Upscale(_) => vec![Stage::Upscale],
        Command::Macro(_) => vec![Stage::Macro],
        Command::Dns(_) => vec![Stage::Dns],
        Command::Compare(_) => vec![Stage::Compare],
        Command::Msconv(_) => vec![Stage::Msconv],
        Command::All(_) => Stage::ALL.to_vec(),
        Command::ValidateConfig(_) => return None,
    })
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::CellMicro(c)
        | Command::CellMeso(c)
        | Command::Upscale(c)
        | Command::Macro(c)
        | Command::Dns(c)
        | Command::Compare(c)
        | Command::Msconv(c)
        | Command::All(c)
        | Command::ValidateConfig(c) => c,
    }
}

fn run(cli: &Cli) -> Result<(), (i32, String)> {
    let c = common(&cli.command);
    let fail = |e: CliError| (e.exit_code(), e.to_string());
    if let Some(w) = c.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .map_err(|e| (2, e.to_string()))?;
    }
    let cfg = c.load().map_err(fail)?;
    let Some(stages) = stages_of(&cli.command) else {
        let (_, summary) = cfg.validate().map_err(fail)?;
        let json = serde_json::to_string_pretty(&summary).map_err(|e| fail(e.into()))?;
        println!("{json}");
        println!("config hash {}", cfg.hash());
        return Ok(());
    };
    let out = cfg.output.clone();
    let mut pipeline = Pipeline::new(cfg, &out).map_err(fail)?;
    let report = pipeline.run(&stages).map_err(|e| (e.exit_code(), e.to_string()))?;
    for p in emit_plots(report, &out).map_err(fail)? {
        info!("wrote {}", p.display());
    }
    for check in &report.checks {
        println!("{}: {} ({})", check.name, if check.passed { "PASS" } else { "FAIL" }, check.detail);
    }
    if !report.all_passed() {
        return Err(fail(CliError::ChecksFailed(report.failed())));
    }
    println!("report written to {}", out.join("report.json").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match common(&cli.command).verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            error!("{msg}");
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}
