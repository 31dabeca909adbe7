//! Ranks 1 and 2 become Poisson after rescaling by the conformal factor.

use rolling_brackets::geometry::StateSampler;
use rolling_brackets::poisson::{max_conformal_jacobiator, max_jacobiator};
use rolling_brackets::rolling::{conformal_factor, reduced_bracket};
use rolling_brackets::verify::hamiltonizable_variant;
use rolling_brackets::{BodyParams, ConstraintRank};

fn main() -> rolling_brackets::Result<()> {
    let mut sampler = StateSampler::new(2);
    let states: Vec<[f64; 6]> = (0..100)
        .map(|_| sampler.reduced_state().to_coords())
        .collect();
    for rank in [ConstraintRank::One, ConstraintRank::Two] {
        let p = BodyParams::chaplygin().with_rank(rank);
        let br = reduced_bracket(&p, hamiltonizable_variant(rank));
        let phi = conformal_factor(&p);
        let (mut before, mut after) = (0.0f64, 0.0f64);
        for s in &states {
            before = before.max(max_jacobiator(&br, s)?);
            after = after.max(max_conformal_jacobiator(&br, &phi, s)?);
        }
        println!("rank {rank}: Jacobiator {before:.3e} unscaled, {after:.3e} after scaling");
    }
    Ok(())
}
