//! The unscaled rank 1 and rank 2 brackets are twisted Poisson, with the
//! twist given by the exterior derivative of the constraint 2-form.

use rolling_brackets::geometry::{fd_exterior_derivative, StateSampler};
use rolling_brackets::poisson::{max_jacobiator, max_twisted_defect};
use rolling_brackets::rolling::{leafwise_twist_residual, reduced_bracket, twist_three_form};
use rolling_brackets::verify::hamiltonizable_variant;
use rolling_brackets::{BodyParams, ConstraintRank};

fn main() -> rolling_brackets::Result<()> {
    let mut sampler = StateSampler::new(3);
    let states: Vec<_> = (0..100).map(|_| sampler.reduced_state()).collect();
    for rank in [ConstraintRank::One, ConstraintRank::Two] {
        let p = BodyParams::chaplygin().with_rank(rank);
        let br = reduced_bracket(&p, hamiltonizable_variant(rank));
        let phi = twist_three_form(&p)?;
        let (mut jac, mut twisted, mut closed) = (0.0f64, 0.0f64, 0.0f64);
        for st in &states {
            let s = st.to_coords();
            jac = jac.max(max_jacobiator(&br, &s)?);
            twisted = twisted.max(max_twisted_defect(&br, &phi, &s)?);
            closed = closed.max(fd_exterior_derivative(&phi, &s)?.max_abs());
        }
        println!(
            "rank {rank}: Jacobiator {jac:.3e}, twisted defect {twisted:.3e}, |d phi| {closed:.3e}"
        );
    }
    let p2 = BodyParams::chaplygin();
    let mut leafwise = 0.0f64;
    for st in &states {
        leafwise = leafwise.max(leafwise_twist_residual(&p2, st)?);
    }
    println!("rank 2 leafwise relation between twist and conformal factor: {leafwise:.3e}");
    Ok(())
}
