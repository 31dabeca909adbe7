//! The reduced flow preserves a smooth measure; unit density does not work
//! once the constraint is nonholonomic.

use rolling_brackets::dynamics::{divergence_defect, divergence_defect_with};
use rolling_brackets::geometry::StateSampler;
use rolling_brackets::poisson::FnScalar;
use rolling_brackets::{BodyParams, ConstraintRank};

fn main() -> rolling_brackets::Result<()> {
    let mut sampler = StateSampler::new(9);
    let states: Vec<_> = (0..100).map(|_| sampler.reduced_state()).collect();
    let unit = FnScalar::constant(6, 1.0);
    for rank in ConstraintRank::ALL {
        let p = BodyParams::chaplygin().with_rank(rank);
        let (mut good, mut flat) = (0.0f64, 0.0f64);
        for st in &states {
            good = good.max(divergence_defect(&p, st)?);
            flat = flat.max(divergence_defect_with(&p, st, &unit)?);
        }
        println!("rank {rank}: invariant density {good:.2e}, unit density {flat:.2e}");
    }
    Ok(())
}
