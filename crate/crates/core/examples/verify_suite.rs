//! Run a named verification suite from code, as the CLI does.
//! Usage: cargo run --example verify_suite -- [suite] [rank]

use rolling_brackets::verify::{run_suite, Suite, VerifyOptions};
use rolling_brackets::{BodyParams, ConstraintRank};

fn main() -> rolling_brackets::Result<()> {
    let mut args = std::env::args().skip(1);
    let suite: Suite = args.next().as_deref().unwrap_or("all").parse()?;
    let rank =
        ConstraintRank::try_from(args.next().map_or(Ok(2), |r| r.parse::<u8>()).unwrap_or(9))?;
    let params = BodyParams::chaplygin().with_rank(rank);
    let report = run_suite(
        &params,
        suite,
        &VerifyOptions {
            trials: 20,
            ..Default::default()
        },
    )?;
    for r in &report.records {
        println!(
            "{} {:<28} {:.3e} vs {:.1e}",
            if r.pass { "ok  " } else { "FAIL" },
            r.id,
            r.max_residual,
            r.tolerance
        );
    }
    println!(
        "{}",
        if report.pass {
            "suite passed"
        } else {
            "suite failed"
        }
    );
    Ok(())
}
