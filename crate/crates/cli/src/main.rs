use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpi_cli::{commands, load_config, presets, CliError, EXIT_NOT_CERTIFIED};

#[derive(Parser)]
#[command(name = "dpi", version, about = "Damped projected integral control: simulate, sweep, certify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// TOML scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario (see `dpi preset list`).
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop scenario; writes trajectory.csv and summary.json.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the (T_i, lambda) grid of the config's [sweep] section.
    Sweep {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Estimate monotonicity and Lipschitz constants (and the Davison
    /// condition for LTI plants); exits 4 when they are not certified.
    Certify {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect the built-in scenarios.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset's TOML, a starting point for custom configs.
    Show { name: String },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let load = |s: &Source| load_config(s.config.as_deref(), s.preset.as_deref(), s.seed);
    match cli.command {
        Command::Simulate { source, out } => {
            let cfg = load(&source)?;
            let outcome = commands::simulate(&cfg, Some(&out))?;
            let last = outcome.record.last();
            println!(
                "{} steps, converged: {}, final vi_residual {:.3e}, wrote {}",
                outcome.record.steps.len(),
                outcome.convergence.converged,
                last.vi_residual,
                out.display()
            );
            Ok(0)
        }
        Command::Sweep { source, out } => {
            let cfg = load(&source)?;
            let outcome = commands::sweep(&cfg, Some(&out))?;
            let r = &outcome.report;
            println!(
                "mu = {:.6e}, L = {:.6e} ({}, seed {}), Ti_star = {:.6e}",
                r.mu, r.lipschitz, outcome.certificate_source, cfg.seed, r.ti_star
            );
            for p in &r.points {
                println!(
                    "  T_i = {:>8.3}  lambda = {:>5.2}  converged = {:<5}  rate = {}",
                    p.ti,
                    p.lambda,
                    p.converged,
                    p.decay_rate.map_or("-".into(), |v| format!("{v:.6}"))
                );
            }
            println!("wrote {}", out.display());
            Ok(0)
        }
        Command::Certify { source, out } => {
            let cfg = load(&source)?;
            let cert = commands::certify(&cfg, out.as_deref())?;
            print!("{}", cert.render());
            Ok(if cert.certified { 0 } else { EXIT_NOT_CERTIFIED })
        }
        Command::Preset { action } => {
            match action {
                PresetAction::List => {
                    for p in presets::PRESETS {
                        println!("{:<10}  {}", p.name, p.description);
                    }
                }
                PresetAction::Show { name } => {
                    let p = presets::find(&name)
                        .ok_or_else(|| CliError::Config(format!("preset: unknown name `{name}`")))?;
                    print!("{}", p.toml.trim_start());
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let code = run(Cli::parse()).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    });
    ExitCode::from(code as u8)
}
