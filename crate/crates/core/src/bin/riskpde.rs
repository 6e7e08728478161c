use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use riskpde_core::commands::{
    cmd_alpha_sweep, cmd_gradcheck, cmd_oracle_compare, cmd_solve, parse_alphas, write_sweep, CommandError,
    CommandResult,
};
use riskpde_core::config::{parse_config, RunConfig};

#[derive(Parser)]
#[command(name = "riskpde", version, about = "Risk-averse parabolic optimal control under an uncertain diffusion coefficient")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and write report.json, convergence.csv and field CSVs.
    Solve(Common),
    /// Compare the adjoint gradient with central finite differences.
    Gradcheck(Common),
    /// Compare the optimizer with a dense solve of the optimality system.
    OracleCompare(Common),
    /// Solve once per risk-aversion weight.
    AlphaSweep {
        #[command(flatten)]
        common: Common,
        /// Strictly ascending, comma separated.
        #[arg(long)]
        alphas: String,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Worker thread cap; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides output.dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> CommandResult<(RunConfig, PathBuf)> {
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(CommandError::Config("--threads must be ≥ 1".into()));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CommandError::Config(format!("--threads: {e}")))?;
        }
        let cfg = parse_config(&self.config)?;
        let out = self.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
        Ok((cfg, out))
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn run(cli: Cli) -> CommandResult<()> {
    match cli.command {
        Command::Solve(common) => {
            let (cfg, out) = common.load()?;
            let report = cmd_solve(&cfg, &out)?;
            println!(
                "converged in {} iterations: J = {:.10e}, complementarity residual = {:.3e}",
                report.iterations, report.objective.total, report.complementarity_residual
            );
            println!("wrote {}", out.display());
        }
        Command::Gradcheck(common) => {
            let (cfg, _) = common.load()?;
            let report = cmd_gradcheck(&cfg)?;
            println!("max relative error {:.3e} over {} pairs", report.max_rel_error, report.pairs);
            println!("{}", json(&report));
        }
        Command::OracleCompare(common) => {
            let (cfg, _) = common.load()?;
            let report = cmd_oracle_compare(&cfg)?;
            println!("relative difference {:.3e}", report.rel_difference);
            println!("{}", json(&report));
        }
        Command::AlphaSweep { common, alphas } => {
            let (cfg, out) = common.load()?;
            let alphas = parse_alphas(&alphas)?;
            let rows = cmd_alpha_sweep(&cfg, &alphas)?;
            write_sweep(&cfg, &rows, &out)?;
            for r in &rows {
                println!("alpha = {:<8} variance = {:.10e}", r.alpha, r.variance);
            }
            println!("wrote {}", out.join("alpha_sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("riskpde: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
