//! Integrate the Chaplygin ball (rank 2) and print how well the four
//! first integrals hold, plus a few samples of the contact direction.

use rolling_brackets::dynamics::{integrate, invariant_drift, IntegratorConfig};
use rolling_brackets::{BodyParams, ReducedState, Vec3};

fn main() -> rolling_brackets::Result<()> {
    let params = BodyParams::chaplygin();
    let init = ReducedState::new(Vec3::new(0.0, 0.6, 0.8), Vec3::new(0.3, -0.2, 0.5));
    let traj = integrate(&params, &init, &IntegratorConfig::new(1e-3, 10.0)?)?;

    println!(
        "{:>6} {:>10} {:>10} {:>10} {:>12}",
        "t", "gamma1", "gamma2", "gamma3", "H"
    );
    for i in (0..traj.times.len()).step_by(2000) {
        let g = traj.states[i].gamma;
        println!(
            "{:>6.2} {:>10.6} {:>10.6} {:>10.6} {:>12.9}",
            traj.times[i], g[0], g[1], g[2], traj.monitors[i].h
        );
    }
    let d = invariant_drift(&traj)?;
    println!(
        "drift  H {:.2e}  C1 {:.2e}  C2 {:.2e}  F {:.2e}",
        d.h, d.c1, d.c2, d.f
    );
    Ok(())
}
