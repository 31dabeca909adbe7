//! The rank 3 plain bracket fails Jacobi because its characteristic
//! distribution is not integrable; compare the probe with its closed form.

use rolling_brackets::poisson::{distribution_probe, Coordinate};
use rolling_brackets::rolling::{annihilator_form, rank3_witness, reduced_bracket};
use rolling_brackets::{BodyParams, BracketVariant, ConstraintRank, ReducedState, Vec3};

fn main() -> rolling_brackets::Result<()> {
    let p = BodyParams::chaplygin().with_rank(ConstraintRank::Three);
    let br = reduced_bracket(&p, BracketVariant::Plain);
    let chi = annihilator_form(&p, BracketVariant::Plain);
    let gamma1 = Coordinate { dim: 6, index: 0 };
    let k1 = Coordinate { dim: 6, index: 3 };
    for gamma in [
        Vec3::y(),
        Vec3::z(),
        Vec3::new(0.0, 0.6, 0.8),
        Vec3::new(0.48, 0.6, 0.64),
    ] {
        let st = ReducedState::new(gamma, Vec3::new(0.3, -0.2, 0.5));
        let probe = distribution_probe(&br, &chi, &gamma1, &k1, &st.to_coords())?;
        println!(
            "gamma ({:.2}, {:.2}, {:.2}): probe {probe:+.8}, closed form {:+.8}",
            gamma[0],
            gamma[1],
            gamma[2],
            rank3_witness(&p, &gamma)
        );
    }
    Ok(())
}
