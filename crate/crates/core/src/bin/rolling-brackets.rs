use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rolling_brackets::scenario::{run_simulate, write_report, Scenario, SimulateOptions};
use rolling_brackets::verify::{run_suite, Suite, VerifyOptions};
use rolling_brackets::{BracketVariant, Error};

#[derive(Parser)]
#[command(
    name = "rolling-brackets",
    version,
    about = "Simulate and verify rolling rigid bodies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Plain,
    Primed,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the scenario and write trajectory.csv and summary.json.
    Simulate {
        scenario: PathBuf,
        /// Integrate on the full chart (g, x, K).
        #[arg(long)]
        full: bool,
        /// Integrate in the new time tau with dtau = dt / phi.
        #[arg(long)]
        reparametrize: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run a verification suite and write report.json.
    Verify {
        scenario: PathBuf,
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(Suite::NAMES))]
        suite: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Defaults to the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1.0)]
        tol_scale: f64,
        /// Force the reduced bracket variant.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFiniteState { .. } => 1,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Simulate {
            scenario,
            full,
            reparametrize,
            out,
        } => {
            let sc = Scenario::load(&scenario)?;
            let summary = run_simulate(
                &sc,
                &SimulateOptions {
                    full,
                    reparametrize,
                },
                &out,
            )?;
            println!(
                "wrote {} samples to {}; max drift {:.3e}",
                summary.samples,
                out.join("trajectory.csv").display(),
                summary.drift.max()
            );
            Ok(true)
        }
        Command::Verify {
            scenario,
            suite,
            trials,
            seed,
            tol_scale,
            variant,
            out,
        } => {
            let sc = Scenario::load(&scenario)?;
            let opts = VerifyOptions {
                trials,
                seed: seed.unwrap_or(sc.seed),
                tol_scale,
                variant: variant.map(|v| match v {
                    VariantArg::Plain => BracketVariant::Plain,
                    VariantArg::Primed => BracketVariant::Primed,
                }),
            };
            let report = run_suite(&sc.params, suite.parse()?, &opts)?;
            for r in &report.records {
                let op = if r.pass { "ok  " } else { "FAIL" };
                println!(
                    "{op} {:<40} {:.3e} (tol {:.1e})",
                    r.id, r.max_residual, r.tolerance
                );
            }
            write_report(&report, &out)?;
            Ok(report.pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
