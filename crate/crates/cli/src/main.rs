use std::path::PathBuf;
use std::process::ExitCode;

use cartan_core::runner::{self, Overrides, RunConfig};
use clap::{Parser, Subcommand};

/// Verify integral invariants of fluid and Hamiltonian systems numerically.
#[derive(Parser, Debug)]
#[command(name = "cartan", version, about)]
struct Cli {
    /// Only print errors and the final verdict.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the checks listed in a TOML config.
    Run {
        config: PathBuf,
        /// Output directory for report.json and CSV tables.
        #[arg(long, env = "CARTAN_OUT_DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Tolerance applied to every check.
        #[arg(long)]
        tol: Option<f64>,
        /// Gauss points per axis for chain integrals.
        #[arg(long)]
        quad_order: Option<usize>,
    },
    /// List the scenario catalog.
    List,
    /// Explain what a check verifies.
    Describe { check: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> cartan_core::Result<bool> {
    match &cli.command {
        Command::List => {
            for (name, summary) in runner::list_scenarios() {
                println!("{name:<24}{summary}");
            }
            Ok(true)
        }
        Command::Describe { check } => {
            println!("{}", runner::describe(check)?);
            Ok(true)
        }
        Command::Run { config, out, seed, tol, quad_order } => {
            let mut cfg = RunConfig::from_path(config)?;
            cfg.apply(&Overrides { seed: *seed, tolerance: *tol, quad_order: *quad_order, out_dir: out.clone() })?;
            let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("cartan-out"));
            let output = runner::run(&cfg)?;
            let written = output.write(&dir)?;
            if !cli.quiet {
                print!("{}", runner::summary(&output.report));
                println!("wrote {} files to {}", written.len(), dir.display());
            }
            let pass = output.report.pass;
            println!("{}", if pass { "all checks passed" } else { "some checks failed" });
            Ok(pass)
        }
    }
}
